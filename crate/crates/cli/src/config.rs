//! Experiment configuration: flags over config file over defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Seed used when neither a flag, the config file nor `BBMLAB_SEED` sets one.
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const SEED_ENV: &str = "BBMLAB_SEED";

/// Invalid or missing configuration; maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

/// Every tunable a command may read. Flags and the JSON config file both
/// deserialize into this; unset fields stay `None` until resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pop_cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knot_only: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<String>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($f:ident),*) => {
        ExperimentConfig { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone())),* }
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::new(format!("bad config {}: {e}", path.display())))
    }

    /// Fields set in `self` win; the rest come from `lower`.
    pub fn over(&self, lower: &ExperimentConfig) -> ExperimentConfig {
        overlay!(self, lower; t, x, ell, n, seed, workers, grid_min, grid_max, grid_step,
            window_a, window_b, pop_cap, knot_only, curve, suite, functional)
    }

    /// Fills the seed from the environment when no layer set it.
    pub fn with_env_seed(mut self) -> Result<Self, ConfigError> {
        if self.seed.is_none() {
            self.seed = match std::env::var(SEED_ENV) {
                Ok(v) => Some(
                    v.trim()
                        .parse()
                        .map_err(|_| ConfigError::new(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
                ),
                Err(_) => Some(DEFAULT_SEED),
            };
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(0)
    }

    pub fn require_f64(&self, v: Option<f64>, name: &str) -> Result<f64, ConfigError> {
        match v {
            Some(v) if v.is_finite() => Ok(v),
            Some(v) => Err(ConfigError::new(format!("--{name} must be finite, got {v}"))),
            None => Err(ConfigError::new(format!("--{name} is required"))),
        }
    }

    pub fn require_n(&self) -> Result<u64, ConfigError> {
        match self.n {
            Some(0) => Err(ConfigError::new("--n must be at least 1")),
            Some(n) => Ok(n),
            None => Err(ConfigError::new("--n is required")),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
