#![allow(dead_code)]

use std::path::{Path, PathBuf};

use v2c::cells::CellKind;
use v2c::checkpoint::Checkpoint;
use v2c::data::FeatureFile;
use v2c::model::{Model, ModelConfig};
use v2c::vocab::Vocabulary;

pub const ROBOT: &str = "hand\tlefthand\nhand\trighthand\naction\tcarry\naction\tgrasp\naction\tpour\naction\treach\nobject\tbottle\nobject\tcup\nobject\tspatula\n";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub checkpoint: PathBuf,
    pub features: PathBuf,
    pub model: Model,
    pub vocab: Vocabulary,
    pub frames: Vec<Vec<f64>>,
}

/// Untrained model with a biased output layer so decoding emits a few words.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let commands = vec![vec!["righthand", "grasp", "cup"], vec!["lefthand", "pour", "bottle"]];
    let vocab = Vocabulary::build(&commands).unwrap();
    let config =
        ModelConfig { cell_kind: CellKind::Gru, hidden: 5, feature_dim: 3, vocab_size: vocab.len(), n_steps: 4, init_range: 0.8, seed: 2 };
    let model = Model::init(config).unwrap();
    let checkpoint = dir.path().join("m.ck");
    Checkpoint::new(model.clone(), vocab.clone()).unwrap().save(&checkpoint).unwrap();

    let frames: Vec<Vec<f64>> = (0..6).map(|i| (0..3).map(|j| ((i * 3 + j) as f64 * 0.37).sin()).collect()).collect();
    let features = dir.path().join("clip.v2cf");
    FeatureFile::new(vec![0.0; 3], frames.clone()).unwrap().save(&features).unwrap();
    Fixture { dir, checkpoint, features, model, vocab, frames }
}

pub fn expected_translation(fx: &Fixture, frames: &[Vec<f64>]) -> String {
    let file = FeatureFile::new(vec![0.0; 3], frames.to_vec()).unwrap();
    let rows = file.prepare(fx.model.config.n_steps).unwrap().rows;
    let out = fx.model.translate(&rows).unwrap();
    fx.vocab.render(&out.tokens).join(" ")
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}
