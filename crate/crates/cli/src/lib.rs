//! Subcommands of the `modexp` binary.
//!
//! Every command reads one JSON config (see [`config::RunConfig`]), writes
//! into a run directory and records what it wrote in `manifest.json`.

pub mod config;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use modexp_icl::analysis::plot::{heatmap, line_chart, Panel, Series};
use modexp_icl::analysis::{
    average_attention, collect_activations, eval_sequences, last_error_histogram, mismatch_eval, per_shot_errors,
    probe_grid, savgol_smooth, ModelPredictor, OraclePredictor, ProbeReport, TargetKind,
};
use modexp_icl::model::Transformer;
use modexp_icl::nncore::{Dtype, ParamStore, Real};
use modexp_icl::taskgen::{dump_line, split_pairs, BatchStream, PairSplit, SequencePack, DUMP_HEADER};
use modexp_icl::trainer::{
    checkpoint_dtype, derive_seed, list_checkpoints, load_checkpoint, read_csv, Checkpoint, MetricsRow, RunDir,
    TrainConfig, Trainer,
};
use modexp_icl::{Error, Result};
use serde_json::json;

pub use config::{load_config, RunConfig};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "modexp", about = "Curriculum in-context learning experiments on b^(a^x) mod p")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override a config field, e.g. `--set train.lr=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct Analysis {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to analyze; defaults to the latest one in the run directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the pair split and sequence fixtures.
    Gen(Common),
    /// Train, writing metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Per-shot error counts and last-error histogram on unseen pairs.
    Eval {
        #[command(flatten)]
        analysis: Analysis,
        /// Score the exact answers instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Linear-probe grids for every target kind.
    Probe(Analysis),
    /// Mean attention maps per layer and head.
    Attention(Analysis),
    /// Error profile on mismatched composite blocks.
    Mismatch(Analysis),
    /// Render metrics, error profiles and probe grids to SVG.
    Plot {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional config for the smoothing window.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// The error JSON printed on stderr.
pub fn error_json(e: &Error) -> serde_json::Value {
    match e {
        Error::Config { path, reason } => json!({"error": e.kind(), "path": path, "message": reason}),
        _ => json!({"error": e.kind(), "message": e.to_string()}),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => cmd_gen(&c),
        Command::Train { common, resume } => cmd_train(&common, resume.as_deref()),
        Command::Eval { analysis, oracle } => cmd_eval(&analysis, oracle),
        Command::Probe(a) => cmd_probe(&a),
        Command::Attention(a) => cmd_attention(&a),
        Command::Mismatch(a) => cmd_mismatch(&a),
        Command::Plot { out, config, set } => cmd_plot(&out, config.as_deref(), &set),
    }
}

/// Loaded config plus an open manifest for one command.
struct Session {
    cfg: RunConfig,
    out: PathBuf,
    manifest: RunManifest,
}

impl Session {
    fn open(c: &Common) -> Result<Self> {
        let cfg = load_config(&c.config, &c.set)?;
        fs::create_dir_all(&c.out)?;
        let bytes = serde_json::to_vec_pretty(&cfg)?;
        fs::write(c.out.join(manifest::CONFIG_FILE), &bytes)?;
        let manifest = RunManifest::load_or_new(&c.out, &bytes)?;
        Ok(Session { cfg, out: c.out.clone(), manifest })
    }

    fn write(&mut self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.manifest.record(&self.out, &path)?;
        Ok(path)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.save(&self.out)
    }

    fn split(&self) -> Result<PairSplit> {
        let path = self.cfg.split_path(&self.out);
        let bytes = fs::read(&path).map_err(|_| {
            Error::config("split_file", format!("{} not found; run `gen` first", path.display()))
        })?;
        let split: PairSplit = serde_json::from_slice(&bytes)
            .map_err(|e| Error::config("split_file", format!("{}: {e}", path.display())))?;
        split.validate()?;
        Ok(split)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        self.cfg.train_config(self.split()?)
    }

    fn checkpoint_path(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        list_checkpoints(&self.out)
            .ok()
            .and_then(|v| v.into_iter().last())
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Checkpoint(format!("no checkpoint under {}", self.out.join("checkpoints").display())))
    }

    /// Eval-pair sequences in the layout the model is scored on.
    fn eval_seqs(&self, tc: &TrainConfig, count: usize, seed: u64) -> Result<Vec<SequencePack>> {
        eval_sequences(tc.split.p, &tc.split.eval_pairs, tc.heldout_spec(), count, seed)
    }
}

/// Loads a checkpoint and checks it against the configured model.
fn load_for<T: Real>(path: &Path, tc: &TrainConfig) -> Result<(Transformer, ParamStore<T>)> {
    let ck: Checkpoint<T> = load_checkpoint(path)?;
    ck.check_model(&tc.model)?;
    if ck.config.split.p != tc.split.p {
        return Err(Error::Checkpoint(format!("checkpoint is for p = {}", ck.config.split.p.get())));
    }
    let model = Transformer::bind(tc.model, &ck.params)?;
    Ok((model, ck.params))
}

fn check_dtype(path: &Path, tc: &TrainConfig) -> Result<()> {
    let stored = checkpoint_dtype(path)?;
    if stored != tc.model.precision {
        return Err(Error::Checkpoint(format!("checkpoint holds {stored:?}, config asks for {:?}", tc.model.precision)));
    }
    Ok(())
}

macro_rules! with_precision {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            Dtype::F32 => $f::<f32>($($arg),*),
            Dtype::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn dump(seqs: &[SequencePack]) -> String {
    let mut s = String::from(DUMP_HEADER);
    s.push('\n');
    for q in seqs {
        s.push_str(&dump_line(q));
        s.push('\n');
    }
    s
}

pub fn cmd_gen(c: &Common) -> Result<()> {
    let mut s = Session::open(c)?;
    let cfg = s.cfg.clone();
    let split = split_pairs(cfg.p, cfg.train_fraction, cfg.split_seed)?;
    let split_path = cfg.split_path(&s.out);
    if let Some(parent) = split_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&split_path, serde_json::to_string_pretty(&split)?)?;
    s.manifest.record(&s.out, &split_path)?;
    let tc = cfg.train_config(split)?;
    let train = BatchStream::training(&tc.split, tc.spec, 1, derive_seed(cfg.gen.seed, 10))?.take(cfg.gen.count)?;
    s.write("train_sequences.tsv", dump(&train))?;
    let eval = s.eval_seqs(&tc, cfg.gen.count.max(1), derive_seed(cfg.gen.seed, 11))?;
    s.write("eval_sequences.tsv", dump(&eval))?;
    s.finish()
}

fn train_with<T: Real>(s: &mut Session, tc: TrainConfig, resume: Option<&Path>) -> Result<()> {
    let dir = RunDir::new(&s.out)?;
    let mut trainer = match resume {
        Some(path) => {
            let ck: Checkpoint<T> = load_checkpoint(path)?;
            if ck.config != tc {
                return Err(Error::Checkpoint("checkpoint was written under a different training config".into()));
            }
            Trainer::resume(ck)?
        }
        None => Trainer::<T>::new(tc)?,
    };
    trainer.run(Some(&dir), None)?;
    for path in [dir.metrics(), dir.heldout_metrics(), dir.config()] {
        s.manifest.record(&s.out, &path)?;
    }
    for (_, path) in list_checkpoints(&dir.root)? {
        s.manifest.record(&s.out, &path)?;
    }
    Ok(())
}

pub fn cmd_train(c: &Common, resume: Option<&Path>) -> Result<()> {
    let mut s = Session::open(c)?;
    let tc = s.train_config()?;
    if let Some(path) = resume {
        check_dtype(path, &tc)?;
    }
    with_precision!(tc.model.precision, train_with(&mut s, tc, resume))?;
    s.finish()
}

fn eval_with<T: Real>(s: &mut Session, tc: &TrainConfig, ckpt: &Path) -> Result<()> {
    let (model, params) = load_for::<T>(ckpt, tc)?;
    let seqs = s.eval_seqs(tc, s.cfg.eval.count, s.cfg.eval.seed)?;
    let pred = ModelPredictor { model: &model, params: &params };
    let profile = per_shot_errors(&pred, &seqs)?;
    let hist = last_error_histogram(&pred, &seqs)?;
    s.write("errors.csv", profile.to_csv())?;
    s.write("last_error.csv", hist.to_csv())?;
    Ok(())
}

pub fn cmd_eval(a: &Analysis, oracle: bool) -> Result<()> {
    let mut s = Session::open(&a.common)?;
    let tc = s.train_config()?;
    if oracle {
        let seqs = s.eval_seqs(&tc, s.cfg.eval.count, s.cfg.eval.seed)?;
        let profile = per_shot_errors(&OraclePredictor, &seqs)?;
        let hist = last_error_histogram(&OraclePredictor, &seqs)?;
        s.write("errors.csv", profile.to_csv())?;
        s.write("last_error.csv", hist.to_csv())?;
    } else {
        let ckpt = s.checkpoint_path(a.checkpoint.as_deref())?;
        check_dtype(&ckpt, &tc)?;
        with_precision!(tc.model.precision, eval_with(&mut s, &tc, &ckpt))?;
    }
    s.finish()
}

fn probe_with<T: Real>(s: &mut Session, tc: &TrainConfig, ckpt: &Path) -> Result<()> {
    let (model, params) = load_for::<T>(ckpt, tc)?;
    let seqs = s.eval_seqs(tc, s.cfg.probe.count, derive_seed(s.cfg.probe.seed, 20))?;
    let shots = s.cfg.probe.shots.clone().unwrap_or_else(|| (0..tc.spec.pairs).collect());
    let acts = collect_activations(&model, &params, &seqs, &s.cfg.probe_layers(), &shots)?;
    let pc = s.cfg.probe_config();
    for target in s.cfg.probe.targets.clone() {
        let report = probe_grid(&acts, target, &pc)?;
        s.write(format!("probe_{}.json", target.as_str()), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn cmd_probe(a: &Analysis) -> Result<()> {
    let mut s = Session::open(&a.common)?;
    let tc = s.train_config()?;
    let ckpt = s.checkpoint_path(a.checkpoint.as_deref())?;
    check_dtype(&ckpt, &tc)?;
    with_precision!(tc.model.precision, probe_with(&mut s, &tc, &ckpt))?;
    s.finish()
}

fn attention_with<T: Real>(s: &mut Session, tc: &TrainConfig, ckpt: &Path) -> Result<()> {
    let (model, params) = load_for::<T>(ckpt, tc)?;
    let seqs = s.eval_seqs(tc, s.cfg.eval.attention_count, derive_seed(s.cfg.eval.seed, 30))?;
    let summary = average_attention(&model, &params, &seqs)?;
    for l in 0..summary.layers {
        for h in 0..summary.heads {
            let name = format!("attention/l{}_h{}", l + 1, h);
            s.write(format!("{name}.csv"), summary.map_csv(l, h))?;
            let title = format!("layer {} head {}", l + 1, h);
            s.write(format!("{name}.svg"), heatmap(summary.map(l, h), summary.seq, &summary.block_starts, &title))?;
        }
    }
    s.write("attention/blocks.csv", summary.blocks_csv())?;
    Ok(())
}

pub fn cmd_attention(a: &Analysis) -> Result<()> {
    let mut s = Session::open(&a.common)?;
    let tc = s.train_config()?;
    let ckpt = s.checkpoint_path(a.checkpoint.as_deref())?;
    check_dtype(&ckpt, &tc)?;
    with_precision!(tc.model.precision, attention_with(&mut s, &tc, &ckpt))?;
    s.finish()
}

fn mismatch_with<T: Real>(s: &mut Session, tc: &TrainConfig, ckpt: &Path) -> Result<()> {
    let (model, params) = load_for::<T>(ckpt, tc)?;
    let pred = ModelPredictor { model: &model, params: &params };
    let e = &s.cfg.eval;
    let profile = mismatch_eval(&pred, tc.split.p, &tc.split.all_pairs(), tc.spec, e.mismatch_policy, e.count, derive_seed(e.seed, 40))?;
    s.write("mismatch.csv", profile.to_csv())?;
    Ok(())
}

pub fn cmd_mismatch(a: &Analysis) -> Result<()> {
    let mut s = Session::open(&a.common)?;
    let tc = s.train_config()?;
    let ckpt = s.checkpoint_path(a.checkpoint.as_deref())?;
    check_dtype(&ckpt, &tc)?;
    with_precision!(tc.model.precision, mismatch_with(&mut s, &tc, &ckpt))?;
    s.finish()
}

fn smoothed_series(name: &str, rows: &[MetricsRow], value: impl Fn(&MetricsRow) -> f64, window: usize, order: usize) -> Result<Series> {
    let ys: Vec<f64> = rows.iter().map(&value).collect();
    let sm = savgol_smooth(&ys, window, order)?;
    Ok(Series { name: name.to_string(), points: rows.iter().map(|r| r.step as f64).zip(sm.values).collect() })
}

/// Reads `name` as CSV rows of `shot,...,accuracy` written by `eval`.
fn accuracy_series(path: &Path, name: &str) -> Result<Series> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::config(path.display().to_string(), format!("malformed row `{line}`"));
        let shot: f64 = f.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let acc: f64 = f.last().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        points.push((shot, acc));
    }
    Ok(Series { name: name.to_string(), points })
}

pub fn cmd_plot(out: &Path, config: Option<&Path>, set: &[String]) -> Result<()> {
    let (window, order) = match config {
        Some(p) => {
            let cfg = load_config(p, set)?;
            (cfg.plot.window, cfg.plot.order)
        }
        None => (51, 3),
    };
    let metrics = out.join("metrics.csv");
    let train = read_csv(&metrics)?;
    if train.is_empty() {
        return Err(Error::config("metrics", format!("{} has no rows", metrics.display())));
    }
    let held = read_csv(&out.join("heldout.csv")).unwrap_or_default();
    let mut written = Vec::new();

    let mut loss = Panel {
        title: format!("total loss (Savitzky-Golay {window}/{order})"),
        x_label: "step".into(),
        y_label: "loss".into(),
        ..Panel::default()
    };
    loss.series.push(smoothed_series("train", &train, |r| r.total_loss, window, order)?);
    if !held.is_empty() {
        loss.series.push(smoothed_series("held-out", &held, |r| r.total_loss, window, order)?);
    }
    let source = if held.is_empty() { &train } else { &held };
    let mut shots = Panel { title: "per-shot loss".into(), x_label: "step".into(), y_label: "loss".into(), ..Panel::default() };
    for k in 0..source[0].shots.len() {
        shots.series.push(smoothed_series(&format!("shot {k}"), source, |r| r.shots[k], window, order)?);
    }
    fs::write(out.join("loss.svg"), line_chart(&[loss, shots]))?;
    written.push("loss.svg");

    let mut panels = Vec::new();
    for (file, title) in [("errors.csv", "unseen pairs"), ("mismatch.csv", "mismatched composite")] {
        let path = out.join(file);
        if path.exists() {
            panels.push(Panel {
                title: title.into(),
                x_label: "shot".into(),
                y_label: "accuracy".into(),
                series: vec![accuracy_series(&path, "accuracy")?],
                y_range: Some((0.0, 1.0)),
            });
        }
    }
    if !panels.is_empty() {
        fs::write(out.join("errors.svg"), line_chart(&panels))?;
        written.push("errors.svg");
    }

    let mut probe_panels = Vec::new();
    for kind in TargetKind::ALL {
        let path = out.join(format!("probe_{}.json", kind.as_str()));
        if !path.exists() {
            continue;
        }
        let r: ProbeReport = serde_json::from_slice(&fs::read(&path)?)?;
        let series = r
            .layers
            .iter()
            .enumerate()
            .map(|(li, l)| Series {
                name: format!("layer {l}"),
                points: r.shots.iter().zip(&r.accuracy[li]).map(|(&s, &a)| (s as f64, a)).collect(),
            })
            .collect();
        probe_panels.push(Panel {
            title: kind.as_str().into(),
            x_label: "shot".into(),
            y_label: "accuracy".into(),
            series,
            y_range: Some((0.0, 1.0)),
        });
    }
    if !probe_panels.is_empty() {
        fs::write(out.join("probes.svg"), line_chart(&probe_panels))?;
        written.push("probes.svg");
    }

    if out.join(manifest::MANIFEST_FILE).exists() {
        let config = fs::read(out.join(manifest::CONFIG_FILE))?;
        let mut m = RunManifest::load_or_new(out, &config)?;
        for f in written {
            m.record(out, &out.join(f))?;
        }
        m.save(out)?;
    }
    Ok(())
}
