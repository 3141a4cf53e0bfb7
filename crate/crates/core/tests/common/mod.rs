#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2c::cells::CellKind;
use v2c::data::{feature_path, FeatureFile};
use v2c::model::{ModelConfig, ModelParams};
use v2c::numerics::{finite_diff_check, GradCheckReport};
use v2c::train::TrainingExample;
use v2c::vocab::{Vocabulary, EOC_INDEX};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, range: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-range..=range)).collect()
}

pub fn uniform_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, range: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| uniform_vec(rng, cols, range)).collect()
}

pub struct GradCase {
    pub kind: CellKind,
    pub hidden: usize,
    pub feature_dim: usize,
    pub vocab: usize,
    pub n: usize,
    pub batch: usize,
    /// Weights and initial states from `U[-range, range]`, biases zero.
    pub range: f64,
    pub epsilon: f64,
    pub seed: u64,
}

/// Random targets of random length (always EOC-terminated), full random
/// features, mean per-word loss over the batch.
pub fn model_grad_check(case: &GradCase) -> GradCheckReport {
    let config = ModelConfig {
        cell_kind: case.kind,
        hidden: case.hidden,
        feature_dim: case.feature_dim,
        vocab_size: case.vocab,
        n_steps: case.n,
        init_range: case.range,
        seed: case.seed,
    };
    let params = ModelParams::init(&config).unwrap();
    let mut r = rng(case.seed ^ 0x5eed);
    let batch: Vec<TrainingExample> = (0..case.batch)
        .map(|_| {
            let words = r.gen_range(0..case.n);
            let mut target: Vec<usize> = (0..words).map(|_| r.gen_range(2..case.vocab)).collect();
            target.push(EOC_INDEX);
            let mut mask = vec![true; target.len()];
            target.resize(case.n, 0);
            mask.resize(case.n, false);
            TrainingExample { features: uniform_rows(&mut r, case.n, case.feature_dim, 1.0), target, mask }
        })
        .collect();
    let words: usize = batch.iter().map(TrainingExample::words).sum();
    let scale = 1.0 / words as f64;

    let mut grads = params.zeros_like();
    for ex in &batch {
        params.accumulate_gradients(&ex.features, &ex.target, &ex.mask, scale, &mut grads).unwrap();
    }
    let mut slots = params.to_slots(Some(&grads));
    let mut probe = params.clone();
    finite_diff_check(
        |s| {
            probe.load_slots(s).unwrap();
            batch
                .iter()
                .map(|ex| {
                    let h = probe.encode(&ex.features).unwrap();
                    probe.decode_train(&h, &ex.target, &ex.mask).unwrap().loss
                })
                .sum::<f64>()
                * scale
        },
        &mut slots,
        case.epsilon,
    )
    .unwrap()
}

pub const HANDS: [&str; 2] = ["lefthand", "righthand"];
pub const ACTIONS: [&str; 5] = ["grasp", "pour", "carry", "reach", "place"];
pub const OBJECTS: [&str; 5] = ["cup", "bottle", "spatula", "bowl", "knife"];

/// Ten distinct commands of three or four words.
pub fn synthetic_commands() -> Vec<Vec<String>> {
    (0..10)
        .map(|i| {
            let mut c = vec![HANDS[i % 2].to_owned(), ACTIONS[i % 5].to_owned(), OBJECTS[(i * 3) % 5].to_owned()];
            if i % 3 == 0 {
                c.push("table".to_owned());
            }
            c
        })
        .collect()
}

pub fn synthetic_examples(vocab: &Vocabulary, commands: &[Vec<String>], n: usize, dim: usize, seed: u64) -> Vec<TrainingExample> {
    let mut r = rng(seed);
    commands
        .iter()
        .map(|c| {
            let enc = vocab.encode_command(c, n).unwrap();
            TrainingExample { features: uniform_rows(&mut r, n, dim, 1.0), target: enc.indices, mask: enc.mask }
        })
        .collect()
}

/// Write `<dir>/<id>.v2cf` files of random frames and return the
/// annotation text for them.
pub fn write_feature_corpus(dir: &Path, commands: &[Vec<String>], frames: usize, dim: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let mut annotations = String::new();
    for (i, c) in commands.iter().enumerate() {
        let id = format!("clip{i:02}_{}", i % 3);
        let file = FeatureFile::new(vec![0.0; dim], uniform_rows(&mut r, frames, dim, 1.0)).unwrap();
        file.save(&feature_path(dir, &id)).unwrap();
        annotations.push_str(&format!("{id}\t{}\n", c.join(" ")));
    }
    annotations
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    run_cli_stdin(args, "")
}

pub fn run_cli_stdin(args: &[&str], stdin: &str) -> (i32, String, String) {
    let mut input = stdin.as_bytes();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("v2c").chain(args.iter().copied());
    let code = v2c::cli::run(argv, &mut input, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
