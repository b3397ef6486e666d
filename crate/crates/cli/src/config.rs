use std::fs;
use std::path::{Path, PathBuf};

use modexp_icl::analysis::{ProbeConfig, TargetKind};
use modexp_icl::model::ModelConfig;
use modexp_icl::modmath::Modulus;
use modexp_icl::taskgen::{CurriculumSpec, MismatchPolicy, PairSplit};
use modexp_icl::trainer::TrainConfig;
use modexp_icl::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The single JSON document behind every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub p: Modulus,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Relative paths are resolved against the output directory.
    #[serde(default = "default_split_file")]
    pub split_file: PathBuf,
    pub spec: CurriculumSpec,
    /// Defaults to the 8-layer, width-128 model.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub plot: PlotSection,
}

fn default_fraction() -> f64 {
    0.8
}
fn default_split_file() -> PathBuf {
    PathBuf::from("split.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub total_sequences: u64,
    pub checkpoint_every: Option<u64>,
    pub log_every: u64,
    pub heldout_batch: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: modexp_icl::nncore::DEFAULT_LR,
            batch: 512,
            total_sequences: 2_000_000,
            checkpoint_every: None,
            log_every: 100,
            heldout_batch: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub count: usize,
    pub seed: u64,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection { count: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub count: usize,
    pub seed: u64,
    pub attention_count: usize,
    pub mismatch_policy: MismatchPolicy,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { count: 2000, seed: 1, attention_count: 2000, mismatch_policy: MismatchPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub count: usize,
    pub seed: u64,
    /// Defaults to every block output.
    pub layers: Option<Vec<usize>>,
    pub include_embedding: bool,
    /// Defaults to every pair.
    pub shots: Option<Vec<usize>>,
    pub targets: Vec<TargetKind>,
    pub iterations: usize,
    pub l2: f64,
    pub train_fraction: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        ProbeSection {
            count: 1000,
            seed: 2,
            layers: None,
            include_embedding: false,
            shots: None,
            targets: TargetKind::ALL.to_vec(),
            iterations: p.iterations,
            l2: p.l2,
            train_fraction: p.train_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotSection {
    pub window: usize,
    pub order: usize,
}

impl Default for PlotSection {
    fn default() -> Self {
        PlotSection { window: 51, order: 3 }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        self.model.unwrap_or_else(|| ModelConfig::standard(self.p.vocab(), self.spec.pairs))
    }

    pub fn split_path(&self, out: &Path) -> PathBuf {
        if self.split_file.is_absolute() {
            self.split_file.clone()
        } else {
            out.join(&self.split_file)
        }
    }

    pub fn probe_layers(&self) -> Vec<usize> {
        let mut layers = self.probe.layers.clone().unwrap_or_else(|| (1..=self.model().layers).collect());
        if self.probe.include_embedding && !layers.contains(&0) {
            layers.insert(0, 0);
        }
        layers
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            train_fraction: self.probe.train_fraction,
            iterations: self.probe.iterations,
            l2: self.probe.l2,
            seed: self.probe.seed,
        }
    }

    pub fn train_config(&self, split: PairSplit) -> Result<TrainConfig> {
        if split.p != self.p {
            return Err(Error::config("split_file", format!("split is for p = {}, config has {}", split.p.get(), self.p.get())));
        }
        let t = &self.train;
        let cfg = TrainConfig {
            lr: t.lr,
            batch: t.batch,
            total_sequences: t.total_sequences,
            checkpoint_every: t.checkpoint_every,
            log_every: t.log_every,
            heldout_batch: t.heldout_batch,
            ..TrainConfig::new(self.model(), self.spec, split, t.seed)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the split file.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let model = self.model();
        model.validate()?;
        if model.vocab != self.p.vocab() {
            return Err(Error::config("model.vocab", format!("must equal p = {}", self.p.get())));
        }
        if model.max_seq < self.spec.tokens() {
            return Err(Error::config("model.max_seq", format!("context needs {} tokens", self.spec.tokens())));
        }
        if self.plot.window % 2 == 0 || self.plot.order >= self.plot.window {
            return Err(Error::config("plot", "window must be odd and larger than order"));
        }
        Ok(())
    }
}

/// Reads a config file, applies `key=value` overrides and deserializes.
/// Deserialization errors name the JSON path of the offending field.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::config("$", format!("not valid JSON: {e}")))?;
    for kv in overrides {
        apply_override(&mut value, kv)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { "$".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// `a.b.c=v` sets a nested field; `v` is parsed as JSON when it can be
/// and kept as a string otherwise.
pub fn apply_override(root: &mut Value, kv: &str) -> Result<()> {
    let (key, raw) = kv.split_once('=').ok_or_else(|| Error::config("--set", format!("expected key=value, got `{kv}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::config("--set", format!("empty segment in `{key}`")));
        }
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => return Err(Error::config(parts[..i].join("."), "is not an object")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_set_nested_fields() {
        let mut v = json!({"train": {"lr": 1.0}});
        apply_override(&mut v, "train.lr=5e-4").unwrap();
        apply_override(&mut v, "probe.targets=[\"y\"]").unwrap();
        apply_override(&mut v, "spec.mode=vanilla_double").unwrap();
        assert_eq!(v["train"]["lr"], json!(5e-4));
        assert_eq!(v["probe"]["targets"], json!(["y"]));
        assert_eq!(v["spec"]["mode"], json!("vanilla_double"));
        assert!(apply_override(&mut v, "train.lr.x=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }
}
