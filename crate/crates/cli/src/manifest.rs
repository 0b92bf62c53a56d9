use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Failure;

pub const SCHEMA: &str = "v1";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Written next to every output as `<output>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub schema: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub wall_time_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            schema: SCHEMA,
            command,
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            wall_time_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
        self.record(path.display().to_string(), &bytes);
        Ok(bytes)
    }

    pub fn record(&mut self, path: String, bytes: &[u8]) {
        self.inputs.push(InputDigest { path, bytes: bytes.len(), sha256: hex::encode(Sha256::digest(bytes)) });
    }

    pub fn config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes the manifest for the first output.
    pub fn finish(mut self) -> Result<PathBuf, Failure> {
        self.wall_time_secs = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64());
        let first = self.outputs.first().cloned().unwrap_or_else(|| "foodprox".into());
        let path = PathBuf::from(format!("{first}.manifest.json"));
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| Failure::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
