//! Translate per-frame visual feature sequences into grammar-free robot
//! commands with a recurrent encoder-decoder.
//!
//! The crate covers the full pipeline: feature and annotation I/O
//! ([`data`]), the command dictionary ([`vocab`]), LSTM/GRU cells with
//! hand-written adjoints ([`cells`]), the encoder-decoder ([`model`]),
//! Adam training ([`train`]), checkpoints ([`checkpoint`]), captioning
//! metrics ([`metrics`]) and the word-to-robot-command mapper ([`mapper`]).

pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod mapper;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;
pub mod vocab;

pub use error::{Result, V2cError};
