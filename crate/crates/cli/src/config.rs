//! Defaults read from a TOML file. The path comes from `--config` or the
//! `WEIGHTFIX_CONFIG` environment variable; command-line flags win over it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "WEIGHTFIX_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub starts: Option<usize>,
    pub threads: Option<usize>,
    /// Node budget of the exact search.
    pub budget: Option<u64>,
    pub time_budget_secs: Option<f64>,
    pub min_weight: Option<u32>,
    pub m_prime: Option<f64>,
    pub hop_bound: Option<usize>,
    pub max_iterations: Option<usize>,
    /// CSV cost table replacing the built-in link cost.
    pub cost_model: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    /// `explicit` if given, else the environment variable, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, String> {
        match explicit {
            Some(p) => FileConfig::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => FileConfig::load(Path::new(&p)),
                _ => Ok(FileConfig::default()),
            },
        }
    }
}
