//! One JSON manifest per run: what ran, with which resolved configuration,
//! on which inputs, producing which outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use roadrank::config::KvConfig;
use roadrank::{Error, Result};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved `key = value` configuration.
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_owned(),
            config: Vec::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    fn digests(paths: &[PathBuf]) -> Result<Value> {
        let mut m = Map::new();
        for p in paths {
            m.insert(p.display().to_string(), Value::String(file_digest(p)?));
        }
        Ok(Value::Object(m))
    }

    pub fn to_json(&self) -> Result<Value> {
        let config: Map<String, Value> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        Ok(json!({
            "subcommand": self.subcommand,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config": config,
            "inputs": Self::digests(&self.inputs)?,
            "outputs": Self::digests(&self.outputs)?,
            "started_unix": self.started,
            "finished_unix": unix_now(),
        }))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()?).expect("manifest values are plain JSON");
        std::fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

/// Loads `--config`: either a `key = value` file or a previous run's
/// manifest, whose `config` object is replayed.
pub fn load_config(path: &Path) -> Result<KvConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    if !text.trim_start().starts_with('{') {
        return KvConfig::read(path);
    }
    let bad = |msg: &str| Error::Parse { path: path.into(), line: 1, msg: msg.into() };
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let obj = v
        .get("config")
        .and_then(Value::as_object)
        .ok_or_else(|| bad("manifest has no config object"))?;
    let mut kv = KvConfig::default();
    for (k, v) in obj {
        kv.set(k, v.as_str().ok_or_else(|| bad("config values must be strings"))?);
    }
    Ok(kv)
}
