//! Mini-batch Adam training of the encoder-decoder on the masked negative
//! log-likelihood.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Result, V2cError};
use crate::model::ModelParams;
use crate::numerics::{AdamConfig, AdamState};
use crate::vocab::Vocabulary;

pub const DEFAULT_EPOCHS: usize = 150;
pub const DEFAULT_LR: f64 = 0.0001;
pub const DEFAULT_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Invoke the epoch callback's checkpoint flag every this many epochs.
    pub checkpoint_every: Option<usize>,
    /// Worker threads for the per-batch forward/backward fan-out.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            shuffle: true,
            checkpoint_every: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(V2cError::Config("epochs, batch size and threads must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(V2cError::Config(format!("learning rate {} must be a non-negative number", self.lr)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(V2cError::Config("checkpoint interval must be at least 1 epoch".into()));
        }
        Ok(())
    }
}

/// A sample turned into decoder targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Vec<Vec<f64>>,
    pub target: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TrainingExample {
    pub fn from_sample(sample: &Sample, vocab: &Vocabulary) -> Result<Self> {
        let n = sample.features.len();
        let enc = vocab.encode_command(&sample.command, n)?;
        Ok(TrainingExample { features: sample.features.clone(), target: enc.indices, mask: enc.mask })
    }

    pub fn words(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean masked loss per word over the epoch.
    pub loss: f64,
    pub seconds: f64,
    pub samples: usize,
    pub words: usize,
}

impl EpochRecord {
    /// One line of the training log.
    pub fn log_line(&self) -> String {
        format!("epoch={} loss={:.6} seconds={:.3} samples={} words={}", self.epoch, self.loss, self.seconds, self.samples, self.words)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub seconds: f64,
}

/// Mean masked loss per word of `params` on `examples`.
pub fn mean_word_loss(params: &ModelParams, examples: &[TrainingExample]) -> Result<f64> {
    let mut loss = 0.0;
    let mut words = 0;
    for ex in examples {
        let h = params.encode(&ex.features)?;
        loss += params.decode_train(&h, &ex.target, &ex.mask)?.loss;
        words += ex.words();
    }
    Ok(if words == 0 { 0.0 } else { loss / words as f64 })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer over (seed, epoch)
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training state: parameters, Adam moments and gradient buffers.
pub struct Trainer {
    pub params: ModelParams,
    config: TrainConfig,
    adam: Vec<AdamState>,
    buffers: Vec<ModelParams>,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let adam_cfg = AdamConfig::with_lr(config.lr);
        let adam = params.matrices().iter().map(|(_, m)| AdamState::new(m.rows(), m.cols(), adam_cfg)).collect();
        let buffers = (0..config.threads).map(|_| params.zeros_like()).collect();
        let pool = if config.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| V2cError::Config(format!("cannot start worker threads: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(Trainer { params, config, adam, buffers, pool })
    }

    pub fn adam_states(&self) -> &[AdamState] {
        &self.adam
    }

    /// Gradient of the mean per-word loss over `batch`, left in
    /// `self.buffers[0]`. Returns the summed loss and word count.
    fn batch_gradient(&mut self, batch: &[&TrainingExample]) -> Result<(f64, usize)> {
        let words: usize = batch.iter().map(|e| e.words()).sum();
        let scale = if words == 0 { 0.0 } else { 1.0 / words as f64 };
        for b in &mut self.buffers {
            for (_, m) in b.matrices_mut() {
                m.fill(0.0);
            }
        }
        let params = &self.params;
        let chunk = batch.len().div_ceil(self.buffers.len()).max(1);
        let work = |(buf, part): (&mut ModelParams, &[&TrainingExample])| -> Result<f64> {
            let mut loss = 0.0;
            for ex in part {
                loss += params.accumulate_gradients(&ex.features, &ex.target, &ex.mask, scale, buf)?;
            }
            Ok(loss)
        };
        let pairs: Vec<(&mut ModelParams, &[&TrainingExample])> = self.buffers.iter_mut().zip(batch.chunks(chunk)).collect();
        let losses: Vec<Result<f64>> = match &self.pool {
            Some(pool) => pool.install(|| pairs.into_par_iter().map(work).collect()),
            None => pairs.into_iter().map(work).collect(),
        };
        let mut loss = 0.0;
        for l in losses {
            loss += l?;
        }
        // fixed-order reduction into buffer 0
        let (head, tail) = self.buffers.split_at_mut(1);
        for other in tail.iter() {
            for ((_, dst), (_, src)) in head[0].matrices_mut().into_iter().zip(other.matrices()) {
                dst.add_assign(src);
            }
        }
        Ok((loss, words))
    }

    fn apply_update(&mut self) -> Result<()> {
        let grads = &self.buffers[0];
        for (((_, value), (_, grad)), state) in self.params.matrices_mut().into_iter().zip(grads.matrices()).zip(&mut self.adam) {
            state.step(value, grad)?;
        }
        Ok(())
    }

    /// One pass over `examples`. `epoch` is 1-based.
    pub fn run_epoch(&mut self, examples: &[TrainingExample], epoch: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        if self.config.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, epoch)));
        }
        let mut total_loss = 0.0;
        let mut total_words = 0;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, words) = self.batch_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(V2cError::NonFiniteLoss { epoch, batch: b + 1 });
            }
            self.apply_update()?;
            total_loss += loss;
            total_words += words;
        }
        Ok(EpochRecord {
            epoch,
            loss: if total_words == 0 { 0.0 } else { total_loss / total_words as f64 },
            seconds: start.elapsed().as_secs_f64(),
            samples: examples.len(),
            words: total_words,
        })
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// Train for `config.epochs`. `on_epoch` receives each record, the current
/// parameters, and whether a periodic checkpoint is due.
pub fn train_with<F>(
    params: ModelParams,
    examples: &[TrainingExample],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainLog)>
where
    F: FnMut(&EpochRecord, &ModelParams, bool) -> Result<()>,
{
    if examples.is_empty() {
        return Err(V2cError::Usage("no training examples".into()));
    }
    let dim = params.feature_dim();
    if let Some(bad) = examples.iter().flat_map(|e| &e.features).find(|r| r.len() != dim) {
        return Err(V2cError::Config(format!("feature dimension mismatch: model expects {dim}, found {}", bad.len())));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut log = TrainLog::default();
    for epoch in 1..=config.epochs {
        let record = trainer.run_epoch(examples, epoch)?;
        let due = config.checkpoint_every.is_some_and(|k| epoch % k == 0);
        on_epoch(&record, &trainer.params, due)?;
        log.epochs.push(record);
    }
    log.seconds = start.elapsed().as_secs_f64();
    Ok((trainer.into_params(), log))
}

pub fn train(params: ModelParams, examples: &[TrainingExample], config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    train_with(params, examples, config, |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::model::ModelConfig;
    use crate::vocab::{EOC_INDEX, PAD_INDEX};

    fn examples() -> Vec<TrainingExample> {
        (0..5)
            .map(|i| TrainingExample {
                features: (0..4).map(|t| vec![(i * 4 + t) as f64 * 0.1, -0.2 * i as f64]).collect(),
                target: vec![2 + i % 3, EOC_INDEX, PAD_INDEX, PAD_INDEX],
                mask: vec![true, true, false, false],
            })
            .collect()
    }

    fn params() -> ModelParams {
        ModelParams::init(&ModelConfig {
            cell_kind: CellKind::Lstm,
            hidden: 5,
            feature_dim: 2,
            vocab_size: 5,
            n_steps: 4,
            init_range: 0.1,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let p = params();
        let cfg = TrainConfig { epochs: 2, lr: 0.0, batch_size: 2, ..Default::default() };
        let (q, log) = train(p.clone(), &examples(), &cfg).unwrap();
        assert_eq!(p, q);
        assert_eq!(log.epochs.len(), 2);
        assert!(log.epochs.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn adam_counters_advance_per_batch() {
        let cfg = TrainConfig { epochs: 1, lr: 0.0, batch_size: 2, ..Default::default() };
        let mut t = Trainer::new(params(), cfg).unwrap();
        t.run_epoch(&examples(), 1).unwrap();
        assert!(t.adam_states().iter().all(|s| s.t == 3));
    }

    #[test]
    fn thread_count_does_not_change_the_gradient_much() {
        let ex = examples();
        let batch: Vec<&TrainingExample> = ex.iter().collect();
        let mut one = Trainer::new(params(), TrainConfig { threads: 1, ..Default::default() }).unwrap();
        let mut three = Trainer::new(params(), TrainConfig { threads: 3, ..Default::default() }).unwrap();
        let (l1, w1) = one.batch_gradient(&batch).unwrap();
        let (l3, w3) = three.batch_gradient(&batch).unwrap();
        assert_eq!(w1, w3);
        assert!((l1 - l3).abs() < 1e-12);
        for ((_, a), (_, b)) in one.buffers[0].matrices().into_iter().zip(three.buffers[0].matrices()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn loss_decreases() {
        let cfg = TrainConfig { epochs: 40, lr: 0.01, batch_size: 5, ..Default::default() };
        let ex = examples();
        let before = mean_word_loss(&params(), &ex).unwrap();
        let (p, _) = train(params(), &ex, &cfg).unwrap();
        assert!(mean_word_loss(&p, &ex).unwrap() < before);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: f64::NAN, ..Default::default() }.validate().is_err());
        let mut ex = examples();
        ex[0].features[0] = vec![1.0];
        assert!(matches!(train(params(), &ex, &TrainConfig::default()), Err(V2cError::Config(_))));
    }

    #[test]
    fn log_line_format() {
        let r = EpochRecord { epoch: 3, loss: 0.5, seconds: 1.25, samples: 4, words: 9 };
        assert_eq!(r.log_line(), "epoch=3 loss=0.500000 seconds=1.250 samples=4 words=9");
    }
}
