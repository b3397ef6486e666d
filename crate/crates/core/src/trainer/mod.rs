//! Training loop, metrics logging and checkpoints.

pub mod checkpoint;
pub mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Transformer};
use crate::nncore::kernels::{self, CrossEntropy};
use crate::nncore::{AdamConfig, AdamState, ParamStore, Real, DEFAULT_LR};
use crate::taskgen::{dump_line, BatchStream, CurriculumSpec, Mode, PairSplit, SequencePack, DUMP_HEADER};

pub use checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{read_csv, MetricsLog, MetricsRow, MetricsWriter};

/// Number of evenly spaced checkpoints when `checkpoint_every` is unset.
pub const DEFAULT_CHECKPOINTS: u64 = 50;

fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_batch() -> usize {
    512
}
fn default_total() -> u64 {
    2_000_000
}
fn default_log_every() -> u64 {
    100
}
fn default_heldout() -> usize {
    256
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub spec: CurriculumSpec,
    pub split: PairSplit,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_total")]
    pub total_sequences: u64,
    /// Steps between checkpoints; unset means a fiftieth of the run.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Sequences in the fixed held-out batch drawn from the eval pairs.
    #[serde(default = "default_heldout")]
    pub heldout_batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, spec: CurriculumSpec, split: PairSplit, seed: u64) -> Self {
        TrainConfig {
            model,
            spec,
            split,
            lr: default_lr(),
            batch: default_batch(),
            total_sequences: default_total(),
            checkpoint_every: None,
            log_every: default_log_every(),
            heldout_batch: default_heldout(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.spec.validate()?;
        self.split.validate()?;
        if self.model.vocab != self.split.p.vocab() {
            return Err(Error::config("model.vocab", format!("must equal p = {}", self.split.p.get())));
        }
        if self.model.max_seq < self.spec.tokens() {
            return Err(Error::config("model.max_seq", format!("context needs {} tokens", self.spec.tokens())));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if self.total_sequences == 0 || self.total_sequences % self.batch as u64 != 0 {
            return Err(Error::config("total_sequences", "must be a positive multiple of batch"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        if self.heldout_batch == 0 {
            return Err(Error::config("heldout_batch", "must be positive"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.total_sequences / self.batch as u64
    }

    pub fn checkpoint_interval(&self) -> u64 {
        self.checkpoint_every.unwrap_or_else(|| (self.total_steps() / DEFAULT_CHECKPOINTS).max(1))
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn heldout_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    /// Layout of the held-out batch: composite sequences in the training
    /// layout, or double-task sequences for vanilla runs.
    pub fn heldout_spec(&self) -> CurriculumSpec {
        let mut spec = self.spec;
        if !spec.mode.is_blocked() {
            spec.mode = Mode::VanillaDouble;
        }
        spec
    }
}

/// SplitMix64 finalizer over `seed + tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Packed model inputs for a batch of equal-length sequences.
#[derive(Debug, Clone)]
pub struct PackedBatch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<u32>,
    /// Next token for every position; the last position of each sequence
    /// has target 0 and weight 0.
    pub targets: Vec<u32>,
    pub weights: Vec<f64>,
}

impl PackedBatch {
    pub fn new(seqs: &[SequencePack]) -> Result<Self> {
        let seq = seqs.first().map(|s| s.tokens.len()).ok_or(Error::ZeroWeights)?;
        let mut tokens = Vec::with_capacity(seqs.len() * seq);
        let mut targets = Vec::with_capacity(seqs.len() * seq);
        let mut weights = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            if s.tokens.len() != seq {
                return Err(Error::shape("batch", "sequences differ in length"));
            }
            tokens.extend_from_slice(&s.tokens);
            for t in 0..seq {
                if t + 1 < seq {
                    targets.push(s.tokens[t + 1]);
                    weights.push(s.loss_weight[t + 1] as f64);
                } else {
                    targets.push(0);
                    weights.push(0.0);
                }
            }
        }
        Ok(PackedBatch { batch: seqs.len(), seq, tokens, targets, weights })
    }

    /// Mean over the batch of the loss on each `y`, one entry per pair.
    pub fn shot_means(&self, per_row: &[f64]) -> Vec<f64> {
        let pairs = self.seq / 2;
        let mut shots = vec![0.0; pairs];
        for b in 0..self.batch {
            for (k, s) in shots.iter_mut().enumerate() {
                *s += per_row[b * self.seq + SequencePack::x_pos(k)];
            }
        }
        shots.iter_mut().for_each(|s| *s /= self.batch as f64);
        shots
    }
}

/// Loss of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoss {
    /// Weighted mean token loss (the optimized objective).
    pub loss: f64,
    /// Unweighted mean loss per `y` position.
    pub shots: Vec<f64>,
}

/// Forward pass and loss without touching gradients.
pub fn evaluate_loss<T: Real>(model: &Transformer, params: &ParamStore<T>, batch: &PackedBatch) -> Result<StepLoss> {
    let acts = model.forward(params, &batch.tokens, batch.batch)?;
    let ce: CrossEntropy<T> = kernels::weighted_cross_entropy(&acts.logits, &batch.targets, &batch.weights)?;
    Ok(StepLoss { loss: ce.loss, shots: batch.shot_means(&ce.per_row) })
}

/// Forward, weighted cross-entropy, backward and one Adam update.
pub fn train_step<T: Real>(
    model: &Transformer,
    params: &mut ParamStore<T>,
    adam: &mut AdamState<T>,
    batch: &PackedBatch,
) -> Result<StepLoss> {
    let acts = model.forward(params, &batch.tokens, batch.batch)?;
    let ce: CrossEntropy<T> = kernels::weighted_cross_entropy(&acts.logits, &batch.targets, &batch.weights)?;
    params.zero_grad();
    model.backward(params, &acts, &ce.dlogits)?;
    adam.step(params)?;
    Ok(StepLoss { loss: ce.loss, shots: batch.shot_means(&ce.per_row) })
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("checkpoints"))?;
        Ok(RunDir { root })
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn heldout_metrics(&self) -> PathBuf {
        self.root.join("heldout.csv")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step_{step:08}.ckpt"))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
}

/// Lists checkpoint files of a run directory in step order.
pub fn list_checkpoints(root: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root.join("checkpoints"))? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

/// A training run in progress.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Transformer,
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    pub step: u64,
    pub seq_seen: u64,
    pub wall_ms: u64,
    pub metrics: MetricsLog,
    stream: BatchStream,
    heldout: PackedBatch,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_precision::<T>(&config.model)?;
        let (model, params) = Transformer::init::<T>(config.model, config.model_seed())?;
        let adam = AdamState::new(&params, adam_config(&config));
        let stream = BatchStream::training(&config.split, config.spec, config.batch, config.data_seed())?;
        let heldout = heldout_batch(&config)?;
        Ok(Trainer { config, model, params, adam, step: 0, seq_seen: 0, wall_ms: 0, metrics: MetricsLog::default(), stream, heldout })
    }

    /// Continues from a checkpoint. Metrics logged before it are not
    /// reloaded; [`Trainer::run`] truncates the CSV files instead.
    pub fn resume(ckpt: Checkpoint<T>) -> Result<Self> {
        let config = ckpt.config;
        config.validate()?;
        check_precision::<T>(&config.model)?;
        let model = Transformer::bind(config.model, &ckpt.params)?;
        let mut stream = BatchStream::training(&config.split, config.spec, config.batch, config.data_seed())?;
        stream.restore(ckpt.data_rng);
        let heldout = heldout_batch(&config)?;
        Ok(Trainer {
            config,
            model,
            params: ckpt.params,
            adam: ckpt.adam,
            step: ckpt.step,
            seq_seen: ckpt.seq_seen,
            wall_ms: ckpt.wall_ms,
            metrics: MetricsLog::default(),
            stream,
            heldout,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            seq_seen: self.seq_seen,
            wall_ms: self.wall_ms,
            data_rng: self.stream.rng_state(),
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    pub fn heldout_loss(&self) -> Result<StepLoss> {
        evaluate_loss(&self.model, &self.params, &self.heldout)
    }

    /// Draws the next batch and trains on it. A non-finite loss or
    /// gradient writes the batch to `dump_dir` and fails with
    /// [`Error::Diverged`].
    pub fn step_once(&mut self, dump_dir: &Path) -> Result<StepLoss> {
        let seqs = self.stream.next_batch()?;
        let batch = PackedBatch::new(&seqs)?;
        match train_step(&self.model, &mut self.params, &mut self.adam, &batch) {
            Ok(loss) => {
                self.step += 1;
                self.seq_seen += seqs.len() as u64;
                Ok(loss)
            }
            Err(Error::NonFinite { .. }) => {
                let step = self.step + 1;
                let dump = dump_dir.join(format!("diverged_step_{step:08}.tsv"));
                let mut text = String::from(DUMP_HEADER);
                text.push('\n');
                for s in &seqs {
                    text.push_str(&dump_line(s));
                    text.push('\n');
                }
                fs::create_dir_all(dump_dir).and_then(|_| fs::write(&dump, text)).map_err(|source| Error::Io { step: Some(step), source })?;
                Err(Error::Diverged { step, dump })
            }
            Err(e) => Err(e),
        }
    }

    fn should_log(&self) -> bool {
        self.step == 1 || self.step % self.config.log_every == 0 || self.is_done()
    }

    fn should_checkpoint(&self) -> bool {
        self.step % self.config.checkpoint_interval() == 0 || self.is_done()
    }

    /// Trains until `stop_at` steps (or the end of the run), logging and
    /// checkpointing on schedule. With `out` unset nothing is written and
    /// divergence dumps go to the system temp directory.
    pub fn run(&mut self, out: Option<&RunDir>, stop_at: Option<u64>) -> Result<()> {
        let pairs = self.config.spec.pairs;
        let resume_step = (self.step > 0).then_some(self.step);
        let mut writers = match out {
            Some(dir) => {
                let cfg = serde_json::to_string_pretty(&self.config)?;
                fs::write(dir.config(), cfg).map_err(|source| Error::Io { step: Some(self.step), source })?;
                Some((
                    MetricsWriter::open(&dir.metrics(), pairs, resume_step)?,
                    MetricsWriter::open(&dir.heldout_metrics(), pairs, resume_step)?,
                ))
            }
            None => None,
        };
        let dump_dir = out.map_or_else(std::env::temp_dir, |d| d.root.clone());
        let end = stop_at.unwrap_or(u64::MAX).min(self.config.total_steps());
        while self.step < end {
            let started = Instant::now();
            let loss = self.step_once(&dump_dir)?;
            self.wall_ms += started.elapsed().as_millis() as u64;
            if self.should_log() {
                let held = self.heldout_loss()?;
                let train_row = MetricsRow {
                    step: self.step,
                    seq_seen: self.seq_seen,
                    total_loss: loss.loss,
                    shots: loss.shots,
                    wall_ms: self.wall_ms,
                };
                let held_row = MetricsRow { total_loss: held.loss, shots: held.shots, ..train_row.clone() };
                if let Some((tw, hw)) = writers.as_mut() {
                    let step = self.step;
                    let with_step = |e: Error| match e {
                        Error::Io { step: None, source } => Error::Io { step: Some(step), source },
                        other => other,
                    };
                    tw.append(&train_row).map_err(with_step)?;
                    hw.append(&held_row).map_err(with_step)?;
                }
                self.metrics.train.push(train_row);
                self.metrics.heldout.push(held_row);
            }
            if let Some(dir) = out {
                if self.should_checkpoint() {
                    save_checkpoint(&self.checkpoint(), &dir.checkpoint(self.step))?;
                }
            }
        }
        Ok(())
    }
}

fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig { lr: config.lr, ..AdamConfig::default() }
}

fn check_precision<T: Real>(model: &ModelConfig) -> Result<()> {
    if model.precision != T::DTYPE {
        return Err(Error::config("model.precision", format!("run requested {:?} parameters", T::DTYPE)));
    }
    Ok(())
}

fn heldout_batch(config: &TrainConfig) -> Result<PackedBatch> {
    let mut stream = BatchStream::new(
        config.split.p,
        config.split.eval_pairs.clone(),
        config.heldout_spec(),
        config.heldout_batch,
        config.heldout_seed(),
    )?;
    PackedBatch::new(&stream.next_batch()?)
}

/// Runs a whole training job: the final checkpoint and its metrics.
pub fn train_loop<T: Real>(config: TrainConfig, out: Option<&RunDir>) -> Result<(Checkpoint<T>, MetricsLog)> {
    let mut trainer = Trainer::<T>::new(config)?;
    trainer.run(out, None)?;
    Ok((trainer.checkpoint(), trainer.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmath::Modulus;
    use crate::nncore::Dtype;
    use crate::taskgen::split_pairs;

    pub(crate) fn tiny_config(seed: u64) -> TrainConfig {
        let p = Modulus::new(13).unwrap();
        let spec = CurriculumSpec::new(4, 4, Mode::Curriculum).unwrap();
        let split = split_pairs(p, 0.8, 0).unwrap();
        let model = ModelConfig {
            layers: 1,
            d_model: 16,
            heads: 2,
            mlp_hidden: 32,
            pos_time_constant: 120.0,
            vocab: 13,
            max_seq: 24,
            precision: Dtype::F64,
            init_std: 0.02,
            embed_scale: 1.0,
        };
        TrainConfig { batch: 8, total_sequences: 64, log_every: 2, heldout_batch: 8, checkpoint_every: Some(3), ..TrainConfig::new(model, spec, split, seed) }
    }

    #[test]
    fn config_invariants() {
        let mut c = tiny_config(0);
        assert!(c.validate().is_ok());
        assert_eq!(c.total_steps(), 8);
        c.total_sequences = 60;
        assert!(c.validate().is_err());
        let mut c = tiny_config(0);
        c.checkpoint_every = Some(0);
        assert!(c.validate().is_err());
        let mut c = tiny_config(0);
        c.checkpoint_every = None;
        assert_eq!(c.checkpoint_interval(), 1);
        c.model.vocab = 11;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = tiny_config(3);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }

    #[test]
    fn packed_batch_targets_shift_by_one() {
        let c = tiny_config(0);
        let mut s = BatchStream::training(&c.split, c.spec, 2, 1).unwrap();
        let seqs = s.next_batch().unwrap();
        let b = PackedBatch::new(&seqs).unwrap();
        assert_eq!(b.tokens.len(), 48);
        assert_eq!(b.targets[0], seqs[0].tokens[1]);
        assert_eq!(b.weights[0], 1.0);
        assert_eq!(b.weights[1], 0.0);
        assert_eq!(b.weights[23], 0.0);
        assert_eq!(b.targets[24], seqs[1].tokens[1]);
    }

    #[test]
    fn zero_weight_batch_is_rejected() {
        let c = tiny_config(0);
        let (model, mut params) = Transformer::init::<f64>(c.model, 0).unwrap();
        let mut adam = AdamState::new(&params, AdamConfig::default());
        let mut s = BatchStream::training(&c.split, c.spec, 2, 1).unwrap();
        let mut b = PackedBatch::new(&s.next_batch().unwrap()).unwrap();
        b.weights.iter_mut().for_each(|w| *w = 0.0);
        assert!(matches!(train_step(&model, &mut params, &mut adam, &b), Err(Error::ZeroWeights)));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn first_loss_is_near_uniform() {
        let c = tiny_config(0);
        let t = Trainer::<f64>::new(c).unwrap();
        let l = t.heldout_loss().unwrap();
        assert!((l.loss - 13f64.ln()).abs() < 0.05, "{}", l.loss);
        assert_eq!(l.shots.len(), 12);
        for s in l.shots {
            assert!((s - 13f64.ln()).abs() < 0.1);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (_, a) = train_loop::<f64>(tiny_config(5), None).unwrap();
        let (_, b) = train_loop::<f64>(tiny_config(5), None).unwrap();
        let (_, c) = train_loop::<f64>(tiny_config(6), None).unwrap();
        let strip = |m: &MetricsLog| m.train.iter().map(|r| (r.step, r.total_loss, r.shots.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_ne!(strip(&a), strip(&c));
        assert_eq!(a.train.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 4, 6, 8]);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let full = RunDir::new(dir.path().join("full")).unwrap();
        let part = RunDir::new(dir.path().join("part")).unwrap();
        let mut t = Trainer::<f64>::new(tiny_config(9)).unwrap();
        t.run(Some(&full), None).unwrap();

        let mut t1 = Trainer::<f64>::new(tiny_config(9)).unwrap();
        t1.run(Some(&part), Some(5)).unwrap();
        let ckpt = load_checkpoint::<f64>(&part.checkpoint(3)).unwrap();
        let mut t2 = Trainer::resume(ckpt).unwrap();
        t2.run(Some(&part), None).unwrap();

        let strip = |p: &Path| read_csv(p).unwrap().into_iter().map(|r| (r.step, r.total_loss, r.shots)).collect::<Vec<_>>();
        assert_eq!(strip(&full.metrics()), strip(&part.metrics()));
        assert_eq!(strip(&full.heldout_metrics()), strip(&part.heldout_metrics()));
        let a = fs::read(full.checkpoint(8)).unwrap();
        let b = load_checkpoint::<f64>(&part.checkpoint(8)).unwrap();
        let mut b_ck = b.clone();
        b_ck.wall_ms = Checkpoint::<f64>::from_bytes(&a).unwrap().wall_ms;
        assert_eq!(a, b_ck.to_bytes().unwrap());
        let steps: Vec<u64> = list_checkpoints(&full.root).unwrap().into_iter().map(|(s, _)| s).collect();
        assert_eq!(steps, vec![3, 6, 8]);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::<f64>::new(tiny_config(1)).unwrap();
        t.run(None, Some(2)).unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&t.checkpoint(), &path).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();
        let path2 = dir.path().join("b.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
        assert_eq!(checkpoint_dtype(&path).unwrap(), Dtype::F64);
        assert!(load_checkpoint::<f32>(&path).is_err());
    }

    #[test]
    fn corrupt_or_foreign_checkpoints_are_rejected() {
        let t = Trainer::<f64>::new(tiny_config(1)).unwrap();
        let bytes = t.checkpoint().to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[20] ^= 0x55;
        bad[21] = b'}';
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes[1..]).is_err());

        let ck = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        let mut other = ck.config.model;
        other.d_model = 32;
        assert!(ck.check_model(&other).is_err());
        assert!(ck.check_model(&ck.config.model).is_ok());
    }

    #[test]
    fn divergence_dumps_the_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::<f64>::new(tiny_config(1)).unwrap();
        let id = t.params.id("head.b").unwrap();
        t.params.value_mut(id).data_mut()[0] = f64::NAN;
        match t.step_once(dir.path()) {
            Err(Error::Diverged { step, dump }) => {
                assert_eq!(step, 1);
                let text = fs::read_to_string(dump).unwrap();
                assert_eq!(text.lines().count(), 1 + 8);
            }
            other => panic!("expected divergence, got {:?}", other.map(|l| l.loss)),
        }
    }

    #[test]
    fn training_reduces_loss() {
        let mut c = tiny_config(2);
        c.total_sequences = 8 * 60;
        c.lr = 3e-3;
        c.log_every = 10;
        let (_, m) = train_loop::<f64>(c, None).unwrap();
        let first = m.train.first().unwrap().total_loss;
        let last = m.train.last().unwrap().total_loss;
        assert!(last < first - 0.2, "{first} -> {last}");
    }
}
