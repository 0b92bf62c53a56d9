use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::commands::Failure;

/// Values read from `--config`. Every key mirrors a command-line flag with
/// dashes replaced by underscores; keys a command does not use are ignored by it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub provider: Option<String>,
    pub query: Option<String>,
    pub percentile: Option<f64>,
    pub radius: Option<f64>,
    pub budget: Option<usize>,
    pub throttle_ms: Option<u64>,
    pub timeout_secs: Option<u64>,
    pub cache: Option<PathBuf>,
    pub b: Option<usize>,
    pub improper: Option<bool>,
    pub log_shift: Option<f64>,
    pub impute_interaction: Option<bool>,
    pub covariates: Option<Vec<String>>,
    pub interactions: Option<Vec<String>>,
    pub weighting: Option<String>,
    pub inference: Option<String>,
    pub level: Option<f64>,
    pub reference: Option<String>,
    pub replicates: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Input(format!("config {}: {e}", path.display())))
    }
}

/// Command-line flag, then config file, then built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// A bool flag only overrides the config when it is set.
pub fn pick_flag(flag: bool, file: Option<bool>, default: bool) -> bool {
    if flag {
        true
    } else {
        file.unwrap_or(default)
    }
}

/// `a,b,c` into names; `none` or an empty string is the empty list.
pub fn name_list(s: &str) -> Vec<String> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Vec::new();
    }
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}
