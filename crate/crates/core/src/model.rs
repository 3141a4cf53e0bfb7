//! Two-layer recurrent encoder-decoder.
//!
//! The encoder consumes one feature row per step. At step `t` the decoder
//! receives `[h^e_t ; onehot(previous word)]`, and its hidden state is
//! projected to vocabulary logits by `W_z h + b_z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{CellCache, CellKind, CellParams, CellState};
use crate::error::{Result, V2cError};
use crate::numerics::{floored_ln, softmax, Matrix, ParamSlot};
use crate::vocab::{EOC_INDEX, PAD_INDEX};

pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell_kind: CellKind,
    pub hidden: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub n_steps: usize,
    pub init_range: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Default sizes for the given data dimensions.
    pub fn new(cell_kind: CellKind, feature_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            cell_kind,
            hidden: DEFAULT_HIDDEN,
            feature_dim,
            vocab_size,
            n_steps: DEFAULT_STEPS,
            init_range: DEFAULT_INIT_RANGE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("hidden", self.hidden), ("feature_dim", self.feature_dim), ("vocab_size", self.vocab_size), ("n_steps", self.n_steps)]
        {
            if v == 0 {
                return Err(V2cError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(V2cError::Config("vocab_size must include <pad> and <eoc>".into()));
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return Err(V2cError::Config(format!("init_range {} must be positive", self.init_range)));
        }
        Ok(())
    }
}

/// All trainable parameters. Initial states are learned; `*_c0` is empty
/// (`0 x 1`) for GRU cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: CellParams,
    pub decoder: CellParams,
    pub w_z: Matrix,
    pub b_z: Matrix,
    pub enc_h0: Matrix,
    pub enc_c0: Matrix,
    pub dec_h0: Matrix,
    pub dec_c0: Matrix,
}

/// Greedy decoding output. `tokens` excludes the terminating `<eoc>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub distributions: Vec<Vec<f64>>,
    pub log_prob: f64,
    /// `true` when decoding stopped on `<eoc>` rather than the step cap.
    pub terminated: bool,
}

impl DecodeResult {
    pub fn steps(&self) -> usize {
        self.distributions.len()
    }
}

/// Teacher-forced decoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub loss: f64,
}

struct Trace {
    enc_caches: Vec<CellCache>,
    dec_caches: Vec<CellCache>,
    dec_h: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(kind: CellKind, feature_dim: usize, hidden: usize, vocab_size: usize) -> Self {
        let c_rows = if kind == CellKind::Lstm { hidden } else { 0 };
        ModelParams {
            encoder: CellParams::zeros(kind, feature_dim, hidden),
            decoder: CellParams::zeros(kind, hidden + vocab_size, hidden),
            w_z: Matrix::zeros(vocab_size, hidden),
            b_z: Matrix::zeros(vocab_size, 1),
            enc_h0: Matrix::zeros(hidden, 1),
            enc_c0: Matrix::zeros(c_rows, 1),
            dec_h0: Matrix::zeros(hidden, 1),
            dec_c0: Matrix::zeros(c_rows, 1),
        }
    }

    /// Seeded init: weights and initial states from `U[-r, r]`, biases zero.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (kind, hidden, r) = (config.cell_kind, config.hidden, config.init_range);
        let encoder = CellParams::uniform(kind, config.feature_dim, hidden, r, &mut rng);
        let decoder = CellParams::uniform(kind, hidden + config.vocab_size, hidden, r, &mut rng);
        let w_z = Matrix::uniform(config.vocab_size, hidden, r, &mut rng);
        let c_rows = if kind == CellKind::Lstm { hidden } else { 0 };
        let enc_h0 = Matrix::uniform(hidden, 1, r, &mut rng);
        let enc_c0 = Matrix::uniform(c_rows, 1, r, &mut rng);
        let dec_h0 = Matrix::uniform(hidden, 1, r, &mut rng);
        let dec_c0 = Matrix::uniform(c_rows, 1, r, &mut rng);
        Ok(ModelParams { encoder, decoder, w_z, b_z: Matrix::zeros(config.vocab_size, 1), enc_h0, enc_c0, dec_h0, dec_c0 })
    }

    /// Zero-valued structure of identical shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.matrices_mut() {
            m.fill(0.0);
        }
        z
    }

    pub fn kind(&self) -> CellKind {
        self.encoder.kind()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.w_z.rows()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        let (hidden, vocab) = (self.hidden(), self.vocab_size());
        let c_rows = if self.kind() == CellKind::Lstm { hidden } else { 0 };
        let expect = [
            ("decoder kind", self.decoder.kind() == self.kind()),
            ("decoder input", self.decoder.input_dim() == hidden + vocab),
            ("decoder hidden", self.decoder.hidden_dim() == hidden),
            ("w_z", self.w_z.shape() == (vocab, hidden)),
            ("b_z", self.b_z.shape() == (vocab, 1)),
            ("enc_h0", self.enc_h0.shape() == (hidden, 1)),
            ("dec_h0", self.dec_h0.shape() == (hidden, 1)),
            ("enc_c0", self.enc_c0.shape() == (c_rows, 1)),
            ("dec_c0", self.dec_c0.shape() == (c_rows, 1)),
        ];
        match expect.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(V2cError::Shape(format!("model parameter `{name}` has an inconsistent shape"))),
            None => Ok(()),
        }
    }

    /// Named parameter matrices in a fixed order. Empty matrices are skipped.
    pub fn matrices(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = Vec::new();
        out.extend(self.encoder.matrices().into_iter().map(|(n, m)| (format!("encoder.{n}"), m)));
        out.extend(self.decoder.matrices().into_iter().map(|(n, m)| (format!("decoder.{n}"), m)));
        out.push(("w_z".into(), &self.w_z));
        out.push(("b_z".into(), &self.b_z));
        out.push(("encoder.h0".into(), &self.enc_h0));
        out.push(("encoder.c0".into(), &self.enc_c0));
        out.push(("decoder.h0".into(), &self.dec_h0));
        out.push(("decoder.c0".into(), &self.dec_c0));
        out.retain(|(_, m)| !m.is_empty());
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = Vec::new();
        out.extend(self.encoder.matrices_mut().into_iter().map(|(n, m)| (format!("encoder.{n}"), m)));
        out.extend(self.decoder.matrices_mut().into_iter().map(|(n, m)| (format!("decoder.{n}"), m)));
        out.push(("w_z".into(), &mut self.w_z));
        out.push(("b_z".into(), &mut self.b_z));
        out.push(("encoder.h0".into(), &mut self.enc_h0));
        out.push(("encoder.c0".into(), &mut self.enc_c0));
        out.push(("decoder.h0".into(), &mut self.dec_h0));
        out.push(("decoder.c0".into(), &mut self.dec_c0));
        out.retain(|(_, m)| !m.is_empty());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.matrices().iter().map(|(_, m)| m.len()).sum()
    }

    /// Slots holding copies of the values, with `grads` (if given) as gradient.
    pub fn to_slots(&self, grads: Option<&ModelParams>) -> Vec<ParamSlot> {
        let mut slots: Vec<ParamSlot> = self.matrices().into_iter().map(|(n, m)| ParamSlot::new(n, m.clone())).collect();
        if let Some(g) = grads {
            for (slot, (_, gm)) in slots.iter_mut().zip(g.matrices()) {
                slot.grad = gm.clone();
            }
        }
        slots
    }

    /// Overwrite values from slots produced by [`ModelParams::to_slots`].
    pub fn load_slots(&mut self, slots: &[ParamSlot]) -> Result<()> {
        let mut mats = self.matrices_mut();
        if mats.len() != slots.len() {
            return Err(V2cError::Shape(format!("expected {} parameter slots, got {}", mats.len(), slots.len())));
        }
        for ((name, m), slot) in mats.iter_mut().zip(slots) {
            if *name != slot.name || m.shape() != slot.value.shape() {
                return Err(V2cError::Shape(format!(
                    "slot `{}` {:?} does not match parameter `{name}` {:?}",
                    slot.name,
                    slot.value.shape(),
                    m.shape()
                )));
            }
            m.data_mut().copy_from_slice(slot.value.data());
        }
        Ok(())
    }

    fn initial_state(h0: &Matrix, c0: &Matrix) -> CellState {
        CellState { h: h0.data().to_vec(), c: c0.data().to_vec() }
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        if features.is_empty() {
            return Err(V2cError::Shape("feature sequence is empty".into()));
        }
        let dim = self.feature_dim();
        if let Some((t, row)) = features.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(V2cError::Shape(format!("feature row {t} has dimension {}, model expects {dim}", row.len())));
        }
        Ok(())
    }

    fn check_encoded(&self, h_enc: &[Vec<f64>]) -> Result<()> {
        let hidden = self.hidden();
        if let Some(t) = h_enc.iter().position(|h| h.len() != hidden) {
            return Err(V2cError::Shape(format!("encoder state {t} has length {}, expected {hidden}", h_enc[t].len())));
        }
        Ok(())
    }

    /// Encoder hidden states `H^e`, one per feature row.
    pub fn encode(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_features(features)?;
        let mut state = Self::initial_state(&self.enc_h0, &self.enc_c0);
        let mut out = Vec::with_capacity(features.len());
        for x in features {
            state = self.encoder.step(x, &state)?.0;
            out.push(state.h.clone());
        }
        Ok(out)
    }

    fn decoder_input(&self, h_enc: &[f64], prev_word: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.decoder.input_dim());
        x.extend_from_slice(h_enc);
        x.resize(self.decoder.input_dim(), 0.0);
        x[h_enc.len() + prev_word] = 1.0;
        x
    }

    fn project(&self, h: &[f64]) -> Vec<f64> {
        let mut logits = self.b_z.data().to_vec();
        self.w_z.mul_vec_acc(h, &mut logits);
        logits
    }

    fn check_targets(&self, len: usize, target: &[usize], mask: &[bool]) -> Result<()> {
        if target.len() != len || mask.len() != len {
            return Err(V2cError::Shape(format!("decoder needs {len} targets and mask entries, got {} and {}", target.len(), mask.len())));
        }
        if let Some(&bad) = target.iter().find(|&&i| i >= self.vocab_size()) {
            return Err(V2cError::Usage(format!("target index {bad} outside vocabulary of size {}", self.vocab_size())));
        }
        Ok(())
    }

    /// Teacher-forced decoding over `h_enc`; loss is the masked sum of
    /// negative log-likelihoods.
    pub fn decode_train(&self, h_enc: &[Vec<f64>], target: &[usize], mask: &[bool]) -> Result<TrainOutput> {
        self.check_encoded(h_enc)?;
        self.check_targets(h_enc.len(), target, mask)?;
        let mut state = Self::initial_state(&self.dec_h0, &self.dec_c0);
        let mut logits = Vec::with_capacity(h_enc.len());
        let mut probs = Vec::with_capacity(h_enc.len());
        let mut loss = 0.0;
        for t in 0..h_enc.len() {
            let prev = if t == 0 { PAD_INDEX } else { target[t - 1] };
            state = self.decoder.step(&self.decoder_input(&h_enc[t], prev), &state)?.0;
            let l = self.project(&state.h);
            let p = softmax(&l)?;
            if mask[t] {
                loss -= floored_ln(p[target[t]]);
            }
            logits.push(l);
            probs.push(p);
        }
        Ok(TrainOutput { logits, probs, loss })
    }

    /// `Σ ln P(y_i | y_<i, X)` for `command` followed by `<eoc>`.
    pub fn sequence_log_prob(&self, h_enc: &[Vec<f64>], command: &[usize]) -> Result<f64> {
        let n = h_enc.len();
        if command.len() + 1 > n {
            return Err(V2cError::Shape(format!("command of {} tokens plus <eoc> exceeds {n} steps", command.len())));
        }
        let mut target = command.to_vec();
        target.push(EOC_INDEX);
        let mut mask = vec![true; target.len()];
        target.resize(n, PAD_INDEX);
        mask.resize(n, false);
        Ok(-self.decode_train(h_enc, &target, &mask)?.loss)
    }

    /// Greedy decoding: feed back the argmax (lowest index on ties) until
    /// `<eoc>` or `h_enc.len()` steps.
    pub fn decode_greedy(&self, h_enc: &[Vec<f64>]) -> Result<DecodeResult> {
        self.check_encoded(h_enc)?;
        let mut state = Self::initial_state(&self.dec_h0, &self.dec_c0);
        let mut prev = PAD_INDEX;
        let mut result = DecodeResult { tokens: Vec::new(), distributions: Vec::new(), log_prob: 0.0, terminated: false };
        for h in h_enc {
            state = self.decoder.step(&self.decoder_input(h, prev), &state)?.0;
            let p = softmax(&self.project(&state.h))?;
            let best = argmax(&p);
            result.log_prob += floored_ln(p[best]);
            result.distributions.push(p);
            if best == EOC_INDEX {
                result.terminated = true;
                break;
            }
            result.tokens.push(best);
            prev = best;
        }
        Ok(result)
    }

    fn forward_trace(&self, features: &[Vec<f64>], target: &[usize], steps: usize) -> Result<Trace> {
        let mut trace = Trace {
            enc_caches: Vec::with_capacity(steps),
            dec_caches: Vec::with_capacity(steps),
            dec_h: Vec::with_capacity(steps),
            probs: Vec::with_capacity(steps),
        };
        let mut enc = Self::initial_state(&self.enc_h0, &self.enc_c0);
        let mut dec = Self::initial_state(&self.dec_h0, &self.dec_c0);
        for t in 0..steps {
            let (next, cache) = self.encoder.step(&features[t], &enc)?;
            enc = next;
            trace.enc_caches.push(cache);

            let prev = if t == 0 { PAD_INDEX } else { target[t - 1] };
            let (next, cache) = self.decoder.step(&self.decoder_input(&enc.h, prev), &dec)?;
            dec = next;
            trace.dec_caches.push(cache);

            let logits = self.project(&dec.h);
            trace.probs.push(softmax(&logits)?);
            trace.dec_h.push(dec.h.clone());
        }
        Ok(trace)
    }

    /// Forward and backward pass for one sample. Adds `scale * ∂loss/∂θ` to
    /// `grads` and returns the unscaled masked loss.
    ///
    /// Steps after the last masked position cannot affect the loss and are
    /// not evaluated.
    pub fn accumulate_gradients(
        &self,
        features: &[Vec<f64>],
        target: &[usize],
        mask: &[bool],
        scale: f64,
        grads: &mut ModelParams,
    ) -> Result<f64> {
        self.check_features(features)?;
        self.check_targets(features.len(), target, mask)?;
        let Some(last) = mask.iter().rposition(|&m| m) else {
            return Ok(0.0);
        };
        let steps = last + 1;
        let trace = self.forward_trace(features, target, steps)?;

        let mut loss = 0.0;
        for t in 0..steps {
            if mask[t] {
                loss -= floored_ln(trace.probs[t][target[t]]);
            }
        }

        let hidden = self.hidden();
        let c_len = self.dec_c0.len();
        let mut dh_enc = vec![vec![0.0; hidden]; steps];
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; c_len];
        for t in (0..steps).rev() {
            let mut dh = dh_next;
            if mask[t] {
                let mut dlogits: Vec<f64> = trace.probs[t].iter().map(|p| scale * p).collect();
                dlogits[target[t]] -= scale;
                grads.w_z.add_outer(&dlogits, &trace.dec_h[t]);
                grads.b_z.add_column(&dlogits);
                self.w_z.tmul_vec_acc(&dlogits, &mut dh);
            }
            let back = self.decoder.backward(&trace.dec_caches[t], &dh, &dc_next, &mut grads.decoder)?;
            dh_enc[t].copy_from_slice(&back.dx[..hidden]);
            dh_next = back.dh_prev;
            dc_next = back.dc_prev;
        }
        grads.dec_h0.add_column(&dh_next);
        grads.dec_c0.add_column(&dc_next);

        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; self.enc_c0.len()];
        for t in (0..steps).rev() {
            let dh: Vec<f64> = dh_next.iter().zip(&dh_enc[t]).map(|(a, b)| a + b).collect();
            let back = self.encoder.backward(&trace.enc_caches[t], &dh, &dc_next, &mut grads.encoder)?;
            dh_next = back.dh_prev;
            dc_next = back.dc_prev;
        }
        grads.enc_h0.add_column(&dh_next);
        grads.enc_c0.add_column(&dc_next);
        Ok(loss)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Configured model: parameters plus the config they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let consistent = params.kind() == config.cell_kind
            && params.hidden() == config.hidden
            && params.feature_dim() == config.feature_dim
            && params.vocab_size() == config.vocab_size;
        if !consistent {
            return Err(V2cError::Config("parameters do not match model configuration".into()));
        }
        Ok(Model { config, params })
    }

    fn check_rows(&self, features: &[Vec<f64>]) -> Result<()> {
        if features.len() != self.config.n_steps {
            return Err(V2cError::Shape(format!("expected {} feature rows, got {}", self.config.n_steps, features.len())));
        }
        if let Some(row) = features.iter().find(|r| r.len() != self.config.feature_dim) {
            return Err(V2cError::Config(format!("feature dimension mismatch: expected {}, found {}", self.config.feature_dim, row.len())));
        }
        Ok(())
    }

    pub fn encode(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_rows(features)?;
        self.params.encode(features)
    }

    /// Encode prepared features and decode greedily.
    pub fn translate(&self, features: &[Vec<f64>]) -> Result<DecodeResult> {
        let h_enc = self.encode(features)?;
        self.params.decode_greedy(&h_enc)
    }
}
