//! Run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use inn_core::dataio::{DatasetSource, RunConfig};
use inn_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub seed: u64,
    /// sha256 over every input, each framed as `<name> <len>\0<bytes>`.
    pub input_hash: String,
    pub output_dir: PathBuf,
    pub model_digest: String,
    pub files: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn frame(h: &mut Sha256, name: &str, bytes: &[u8]) {
    h.update(format!("{name} {}\0", bytes.len()).as_bytes());
    h.update(bytes);
}

pub fn input_hash(cfg: &RunConfig) -> Result<String, Error> {
    let mut h = Sha256::new();
    frame(&mut h, "config", &serde_json::to_vec(cfg)?);
    if let DatasetSource::Csv(p) = &cfg.dataset {
        let bytes = std::fs::read(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        frame(&mut h, "dataset", &bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn load(path: &Path) -> Result<RunManifest, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.config.validate()?;
    Ok(m)
}
