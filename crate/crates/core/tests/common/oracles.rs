#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use v2c::cells::{CellKind, CellState, GruParams, LstmParams};
use v2c::mapper::{map_command, RobotVocabulary, DEFAULT_THRESHOLD};
use v2c::metrics::Corpus;
use v2c::model::{ModelConfig, ModelParams};
use v2c::numerics::Matrix;
use v2c::vocab::{EOC_INDEX, PAD_INDEX};

use super::{rng, uniform_rows, uniform_vec};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sum_j w[k][j] * v[j]` with explicit indexing.
fn row_dot(w: &Matrix, k: usize, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..v.len() {
        acc += w.get(k, j) * v[j];
    }
    acc
}

pub fn lstm_scalar(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut h_out = vec![0.0; n];
    let mut c_out = vec![0.0; n];
    for k in 0..n {
        let i = sig(row_dot(&p.w_xi, k, x) + row_dot(&p.w_hi, k, h) + p.b_i.get(k, 0));
        let f = sig(row_dot(&p.w_xf, k, x) + row_dot(&p.w_hf, k, h) + p.b_f.get(k, 0));
        let o = sig(row_dot(&p.w_xo, k, x) + row_dot(&p.w_ho, k, h) + p.b_o.get(k, 0));
        let g = (row_dot(&p.w_xg, k, x) + row_dot(&p.w_hg, k, h) + p.b_g.get(k, 0)).tanh();
        c_out[k] = f * c[k] + i * g;
        h_out[k] = o * c_out[k].tanh();
    }
    (h_out, c_out)
}

pub fn gru_scalar(p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    for k in 0..n {
        r[k] = sig(row_dot(&p.w_xr, k, x) + row_dot(&p.w_hr, k, h) + p.b_r.get(k, 0));
        z[k] = sig(row_dot(&p.w_xz, k, x) + row_dot(&p.w_hz, k, h) + p.b_z.get(k, 0));
    }
    let rh: Vec<f64> = (0..n).map(|k| r[k] * h[k]).collect();
    (0..n)
        .map(|k| {
            let cand = (row_dot(&p.w_xh, k, x) + row_dot(&p.w_hh, k, &rh) + p.b_h.get(k, 0)).tanh();
            z[k] * h[k] + (1.0 - z[k]) * cand
        })
        .collect()
}

pub fn randomize_biases<'a>(mats: impl IntoIterator<Item = (&'static str, &'a mut Matrix)>, r: &mut ChaCha8Rng) {
    for (name, m) in mats {
        if name.starts_with("b_") {
            for v in m.data_mut() {
                *v = r.gen_range(-1.0..1.0);
            }
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation between `step` and the scalar loops over random
/// shapes, weight ranges and biases.
pub fn cell_scalar_worst(kind: CellKind, seed: u64, instances: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (input, hidden) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let range = r.gen_range(0.05..2.0);
        match kind {
            CellKind::Lstm => {
                let mut p = LstmParams::uniform(input, hidden, range, &mut r);
                randomize_biases(p.matrices_mut(), &mut r);
                let x = uniform_vec(&mut r, input, 2.0);
                let prev = CellState { h: uniform_vec(&mut r, hidden, 1.0), c: uniform_vec(&mut r, hidden, 3.0) };
                let (state, _) = p.step(&x, &prev).unwrap();
                let (h, c) = lstm_scalar(&p, &x, &prev.h, &prev.c);
                worst = worst.max(max_abs_diff(&state.h, &h)).max(max_abs_diff(&state.c, &c));
            }
            CellKind::Gru => {
                let mut p = GruParams::uniform(input, hidden, range, &mut r);
                randomize_biases(p.matrices_mut(), &mut r);
                let x = uniform_vec(&mut r, input, 2.0);
                let prev = CellState { h: uniform_vec(&mut r, hidden, 1.0), c: Vec::new() };
                let (state, _) = p.step(&x, &prev).unwrap();
                assert!(state.c.is_empty());
                worst = worst.max(max_abs_diff(&state.h, &gru_scalar(&p, &x, &prev.h)));
            }
        }
    }
    worst
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn random_target(r: &mut ChaCha8Rng, vocab: usize, n: usize) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
    let words = r.gen_range(0..n);
    let command: Vec<usize> = (0..words).map(|_| r.gen_range(2..vocab)).collect();
    let mut target = command.clone();
    target.push(EOC_INDEX);
    let mut mask = vec![true; target.len()];
    target.resize(n, PAD_INDEX);
    mask.resize(n, false);
    (command, target, mask)
}

fn config(kind: CellKind, hidden: usize, dim: usize, vocab: usize, n: usize, range: f64, seed: u64) -> ModelConfig {
    ModelConfig { cell_kind: kind, hidden, feature_dim: dim, vocab_size: vocab, n_steps: n, init_range: range, seed }
}

/// Masked loss equals the negated sequence log-probability, which in turn
/// matches log-softmax of the logits and the product of probabilities.
pub fn check_loss_identity(seed: u64, trials: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for trial in 0..trials {
        let kind = [CellKind::Lstm, CellKind::Gru][trial % 2];
        let (hidden, dim, vocab, n) = (r.gen_range(1..=8), r.gen_range(1..=6), r.gen_range(3..=12), r.gen_range(2..=8));
        let params = ModelParams::init(&config(kind, hidden, dim, vocab, n, r.gen_range(0.05..1.5), trial as u64)).unwrap();
        let features = uniform_rows(&mut r, n, dim, 1.0);
        let h = params.encode(&features).unwrap();
        let (command, target, mask) = random_target(&mut r, vocab, n);
        let words = command.len();

        let out = params.decode_train(&h, &target, &mask).unwrap();
        let lp = params.sequence_log_prob(&h, &command).unwrap();
        if (out.loss + lp).abs() > 1e-12 {
            return Err(format!("trial {trial}: loss {} vs log prob {lp}", out.loss));
        }
        let oracle: f64 = (0..=words).map(|t| out.logits[t][target[t]] - log_sum_exp(&out.logits[t])).sum();
        if (lp - oracle).abs() > 1e-12 {
            return Err(format!("trial {trial}: log prob {lp} vs logits {oracle}"));
        }
        let product: f64 = (0..=words).map(|t| out.probs[t][target[t]]).product();
        if (lp.exp() - product).abs() > 1e-12 * product.max(1e-300) + 1e-300 {
            return Err(format!("trial {trial}: exp {} vs product {product}", lp.exp()));
        }
    }
    Ok(())
}

/// Extending the sequence with masked padding leaves the loss bit-identical.
pub fn check_padding_extension(seed: u64, trials: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for trial in 0..trials {
        let kind = [CellKind::Lstm, CellKind::Gru][trial % 2];
        let (hidden, dim, vocab, n) = (r.gen_range(1..=6), r.gen_range(1..=5), r.gen_range(3..=9), r.gen_range(2..=6));
        let params = ModelParams::init(&config(kind, hidden, dim, vocab, n, 0.5, trial as u64)).unwrap();
        let extra = r.gen_range(1..=5);
        let features = uniform_rows(&mut r, n + extra, dim, 1.0);
        let h = params.encode(&features).unwrap();
        let (_, target, mask) = random_target(&mut r, vocab, n);
        let short = params.decode_train(&h[..n], &target, &mask).unwrap().loss;

        let mut long_t = target.clone();
        let mut long_m = mask.clone();
        long_t.resize(n + extra, PAD_INDEX);
        long_m.resize(n + extra, false);
        let long = params.decode_train(&h, &long_t, &long_m).unwrap().loss;
        if short.to_bits() != long.to_bits() {
            return Err(format!("trial {trial}: {short} vs {long}"));
        }
        let mut g = params.zeros_like();
        let acc = params.accumulate_gradients(&features, &long_t, &long_m, 1.0, &mut g).unwrap();
        if acc.to_bits() != long.to_bits() {
            return Err(format!("trial {trial}: accumulated {acc} vs {long}"));
        }
    }
    Ok(())
}

/// Full-table Wagner-Fischer.
pub fn dp_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

pub fn oracle_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        1.0
    } else {
        1.0 - dp_distance(a, b) as f64 / longest as f64
    }
}

pub fn random_word(r: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', 'e', 'g', 'r', 's', 'p', 'é'];
    let len = r.gen_range(0..=9);
    (0..len).map(|_| ALPHABET[r.gen_range(0..ALPHABET.len())]).collect()
}

/// Distance and similarity against the DP table on random pairs.
pub fn check_mapper_dp(seed: u64, pairs: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..pairs {
        let (a, b) = (random_word(&mut r), random_word(&mut r));
        let (got, want) = (v2c::mapper::edit_distance(&a, &b), dp_distance(&a, &b));
        if got != want {
            return Err(format!("{a:?} {b:?}: {got} vs {want}"));
        }
        if v2c::mapper::similarity(&a, &b) != oracle_similarity(&a, &b) {
            return Err(format!("{a:?} {b:?}: similarity differs"));
        }
    }
    Ok(())
}

pub fn toy_corpus() -> Corpus {
    Corpus::from_strs(&[
        ("v1", "righthand grasp bottle", &["righthand grasp cup"]),
        ("v2", "lefthand pour water into cup", &["lefthand pour water into bowl", "lefthand pour milk into cup"]),
        ("v3", "righthand carry spatula", &["righthand carry spatula"]),
        ("v4", "lefthand reach knife", &["righthand reach knife"]),
        ("v5", "pour grasp", &["grasp pour bottle"]),
    ])
    .unwrap()
}

/// Toy-corpus scores from an independent implementation.
pub const TOY_BLEU: [f64; 4] = [0.8219864299617914, 0.7493923792035644, 0.6413302346256844, 0.5932912396945947];
pub const TOY_ROUGE_L: f64 = 8341.0 / 11850.0;
pub const TOY_METEOR: f64 = 422201.0 / 626400.0;
pub const TOY_CIDER: f64 = 3.9080887431076725;

/// `map_token` picks the most similar candidate, lowest string on ties.
pub fn check_map_token(seed: u64, cases: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..cases {
        let mut token = random_word(&mut r);
        if token.is_empty() {
            token.push('a');
        }
        let cands: Vec<String> = (0..r.gen_range(1..=6)).map(|_| random_word(&mut r)).collect();
        let (got, sim) = v2c::mapper::map_token(&token, cands.iter().map(String::as_str)).map_err(|e| e.to_string())?;

        let best = cands.iter().map(|c| oracle_similarity(&token, c)).fold(f64::NEG_INFINITY, f64::max);
        let want = cands.iter().filter(|c| oracle_similarity(&token, c) == best).min().unwrap();
        if got != want || sim != best {
            return Err(format!("{token:?} in {cands:?}: got {got:?} ({sim}), want {want:?} ({best})"));
        }
    }
    Ok(())
}

pub fn robot_vocabulary() -> RobotVocabulary {
    let set = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    RobotVocabulary::new(
        set(&["lefthand", "righthand"]),
        set(&["carry", "grasp", "pour", "reach"]),
        set(&["bottle", "cup", "spatula"]),
        DEFAULT_THRESHOLD,
    )
    .unwrap()
}

/// Exact match, near miss within threshold, and an unmappable action.
pub fn check_mapper_examples() -> Result<(), String> {
    let r = robot_vocabulary();

    let exact = map_command(&["righthand", "grasp", "bottle"], &r);
    if !exact.accepted || exact.resolved_text() != "righthand grasp bottle" || !exact.slots().all(|s| s.similarity == 1.0) {
        return Err(format!("exact: {exact:?}"));
    }
    let near = map_command(&["righthand", "carry", "spatul"], &r);
    let object_sim = near.object.as_ref().map(|s| s.similarity);
    if !near.accepted || near.resolved_text() != "righthand carry spatula" || object_sim != Some(1.0 - 1.0 / 7.0) {
        return Err(format!("near: {near:?}"));
    }
    let far = map_command(&["righthand", "xylophone", "bottle"], &r);
    match &far.reason {
        Some(reason) if !far.accepted && reason.contains("action") && reason.contains("xylophone") => Ok(()),
        _ => Err(format!("far: {far:?}")),
    }
}
