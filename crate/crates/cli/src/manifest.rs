use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use modexp_icl::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "run_config.json";

/// Index of everything a run directory contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    /// Relative path to SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
    pub created_unix: u64,
    pub updated_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

impl RunManifest {
    pub fn load_or_new(root: &Path, config_bytes: &[u8]) -> Result<Self> {
        let hash = sha256_hex(config_bytes);
        let path = root.join(MANIFEST_FILE);
        let mut m = if path.exists() {
            serde_json::from_slice::<RunManifest>(&fs::read(&path)?)?
        } else {
            let t = now();
            RunManifest { run_id: hash[..12].to_string(), config_hash: hash.clone(), files: BTreeMap::new(), created_unix: t, updated_unix: t }
        };
        m.config_hash = hash;
        Ok(m)
    }

    pub fn record(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.files.insert(rel(root, path), sha256_hex(&bytes));
        Ok(())
    }

    pub fn save(&mut self, root: &Path) -> Result<()> {
        self.updated_unix = now();
        fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Re-hashes every listed file and the stored config.
    pub fn verify(root: &Path) -> Result<RunManifest> {
        let m: RunManifest = serde_json::from_slice(&fs::read(root.join(MANIFEST_FILE))?)?;
        let config = fs::read(root.join(CONFIG_FILE))?;
        if sha256_hex(&config) != m.config_hash {
            return Err(Error::config(CONFIG_FILE, "hash differs from the manifest"));
        }
        for (name, hash) in &m.files {
            let bytes = fs::read(root.join(name))?;
            if &sha256_hex(&bytes) != hash {
                return Err(Error::config(name.clone(), "hash differs from the manifest"));
            }
        }
        Ok(m)
    }
}
