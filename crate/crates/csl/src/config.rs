//! Run configuration shared by the command-line tools.
//!
//! One JSON file carries per-command sections; every field is optional so
//! command-line flags can override anything. Unknown keys are rejected to
//! catch typos. The seed resolves flag, then file, then the `CSL_SEED`
//! environment variable, then zero.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::FeatureConfig;
use crate::error::{CslError, Result};
use crate::sim::{Condition, Split};
use crate::train::SignMethod;

pub const SEED_ENV: &str = "CSL_SEED";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub gen: GenSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub out: Option<PathBuf>,
    pub condition: Option<Condition>,
    pub sessions: Option<usize>,
    pub sources: Option<usize>,
    pub duration_s: Option<f64>,
    pub angular_speed: Option<f64>,
    pub room_dims: Option<[f64; 3]>,
    pub snr_db: Option<f64>,
    pub block_frames: Option<usize>,
    pub split_fractions: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub max_bins_per_interval: Option<usize>,
    pub sign_method: Option<SignMethod>,
    pub features: Option<FeatureConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: Option<String>,
    pub win: Option<Vec<String>>,
    pub split: Option<Split>,
    pub grid_size: Option<usize>,
    pub grid_seed: Option<u64>,
    pub nsrc: Option<usize>,
    pub bandwidth_deg: Option<f64>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        CslError::invalid(format!("config {}: {e}", path.display()))
    })
}

/// Seed precedence: explicit flag, config file, `CSL_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CslError::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
        }),
        Err(_) => Ok(0),
    }
}

/// Worker-count precedence: flag, config file, logical cores.
pub fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> usize {
    flag.or(file)
        .filter(|&w| w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}
