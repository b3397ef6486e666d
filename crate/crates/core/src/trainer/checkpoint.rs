//! Binary checkpoint file.
//!
//! Layout: the 8-byte magic `MXICKPT\0`, a little-endian `u64` header
//! length, a JSON header, then raw little-endian tensor data in manifest
//! order. Manifest entries are named `param/<name>`, `adam_m/<name>` and
//! `adam_v/<name>`; offsets are relative to the start of the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{param_manifest, ModelConfig};
use crate::nncore::{AdamConfig, AdamState, Dtype, ParamStore, Real, Tensor};
use crate::taskgen::RngState;

pub const MAGIC: &[u8; 8] = b"MXICKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    config: AdamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: Dtype,
    step: u64,
    seq_seen: u64,
    wall_ms: u64,
    config: TrainConfig,
    data_rng: RngState,
    adam: AdamHeader,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub step: u64,
    pub seq_seen: u64,
    pub wall_ms: u64,
    pub data_rng: RngState,
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut blobs: Vec<&Tensor<T>> = Vec::new();
        let mut offset = 0u64;
        let mut push = |name: String, t: &'_ Tensor<T>, tensors: &mut Vec<TensorEntry>| {
            tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset, dtype: T::DTYPE });
            offset += (t.len() * T::DTYPE.size()) as u64;
        };
        for p in self.params.iter() {
            push(format!("param/{}", p.name), &p.value, &mut tensors);
            blobs.push(&p.value);
        }
        for (p, m) in self.params.iter().zip(&self.adam.m) {
            push(format!("adam_m/{}", p.name), m, &mut tensors);
            blobs.push(m);
        }
        for (p, v) in self.params.iter().zip(&self.adam.v) {
            push(format!("adam_v/{}", p.name), v, &mut tensors);
            blobs.push(v);
        }
        let header = Header {
            version: VERSION,
            dtype: T::DTYPE,
            step: self.step,
            seq_seen: self.seq_seen,
            wall_ms: self.wall_ms,
            config: self.config.clone(),
            data_rng: self.data_rng,
            adam: AdamHeader { step: self.adam.step, config: self.adam.config },
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in blobs {
            out.extend_from_slice(&T::to_le_bytes_vec(t.data()));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(err("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| err("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!("version {} not supported (expected {VERSION})", header.version)));
        }
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("stored as {:?}, requested {:?}", header.dtype, T::DTYPE)));
        }
        let manifest = param_manifest(&header.config.model);
        let n = manifest.len();
        if header.tensors.len() != 3 * n {
            return Err(err("tensor manifest does not match the model config"));
        }
        let data = &bytes[data_start..];
        let mut expected_offset = 0u64;
        let mut read = |entry: &TensorEntry, name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            if entry.name != name || entry.shape != shape || entry.dtype != T::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` {:?} does not match config tensor `{name}` {shape:?}",
                    entry.name, entry.shape
                )));
            }
            if entry.offset != expected_offset {
                return Err(err("non-contiguous tensor offsets"));
            }
            let len = shape.iter().product::<usize>() * T::DTYPE.size();
            let start = entry.offset as usize;
            let chunk = data.get(start..start + len).ok_or_else(|| err("truncated tensor data"))?;
            expected_offset += len as u64;
            Tensor::from_vec(shape, T::from_le_bytes_slice(chunk))
        };
        let mut params = ParamStore::new();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, (name, shape)) in manifest.iter().enumerate() {
            params.insert(name.clone(), read(&header.tensors[i], &format!("param/{name}"), shape)?)?;
        }
        for (i, (name, shape)) in manifest.iter().enumerate() {
            m.push(read(&header.tensors[n + i], &format!("adam_m/{name}"), shape)?);
        }
        for (i, (name, shape)) in manifest.iter().enumerate() {
            v.push(read(&header.tensors[2 * n + i], &format!("adam_v/{name}"), shape)?);
        }
        if expected_offset as usize != data.len() {
            return Err(err("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            seq_seen: header.seq_seen,
            wall_ms: header.wall_ms,
            data_rng: header.data_rng,
            params,
            adam: AdamState { config: header.adam.config, step: header.adam.step, m, v },
        })
    }

    /// Rejects a checkpoint whose architecture differs from `model`.
    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if &self.config.model != model {
            return Err(Error::Checkpoint(format!(
                "checkpoint model {:?} differs from requested {:?}",
                self.config.model, model
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    let io = |source| Error::Io { step: Some(ckpt.step), source };
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Precision a checkpoint was written in, without decoding tensors.
pub fn checkpoint_dtype(path: &Path) -> Result<Dtype> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header = bytes.get(16..16 + hlen).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let v: serde_json::Value =
        serde_json::from_slice(header).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    serde_json::from_value(v["dtype"].clone()).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))
}
