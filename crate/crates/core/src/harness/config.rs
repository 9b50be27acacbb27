//! Experiment grid description, read from and written to TOML.
//!
//! ```toml
//! p_list = [50]
//! n_list = [1000]
//! x_list = [0.0, 0.3]
//! d_ratio = 0.1
//! methods = ["daniel", "sv-topd"]
//! reps = 200
//! base_seed = 1
//!
//! [optimizer]
//! eta = 0.1
//! gamma_max = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{MethodKind, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::optimize::OptimizerConfig;
use crate::sampling::DEFAULT_BURN_IN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub x_list: Vec<f64>,
    /// Explicit rank; overrides `optimizer.d` and `d_ratio`.
    pub d: Option<usize>,
    /// Rank as a fraction of `p` when no explicit rank is given.
    pub d_ratio: f64,
    pub methods: Vec<MethodKind>,
    pub reps: usize,
    pub base_seed: u64,
    pub burn_in: usize,
    /// Threshold of the SV-Soft and SV-Hard baselines.
    pub tau: f64,
    /// Share ground truth and samples across methods and `x` within a
    /// repetition, so method and distributedness comparisons are paired.
    pub paired: bool,
    pub optimizer: OptimizerConfig,
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p_list: vec![50],
            n_list: vec![1000],
            x_list: vec![0.0],
            d: None,
            d_ratio: 0.1,
            methods: MethodKind::ALL.to_vec(),
            reps: 200,
            base_seed: 0,
            burn_in: DEFAULT_BURN_IN,
            tau: DEFAULT_TAU,
            paired: true,
            optimizer: OptimizerConfig::default(),
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() || self.n_list.is_empty() || self.x_list.is_empty() {
            return Err(Error::invalid("p_list, n_list and x_list must be non-empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods must be non-empty"));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be ≥ 1"));
        }
        if self.burn_in == 0 {
            return Err(Error::invalid("burn_in must be ≥ 1"));
        }
        if let Some(x) = self.x_list.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("x={x} must lie in [0, 1]")));
        }
        if self.p_list.contains(&0) || self.n_list.contains(&0) {
            return Err(Error::invalid("p and n must be ≥ 1"));
        }
        if !(self.d_ratio > 0.0 && self.d_ratio <= 1.0) {
            return Err(Error::invalid("d_ratio must lie in (0, 1]"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be finite and ≥ 0"));
        }
        self.optimizer.validate()?;
        for &p in &self.p_list {
            let d = self.rank_for(p);
            if d > p {
                return Err(Error::invalid(format!("rank {d} exceeds p={p}")));
            }
        }
        Ok(())
    }

    /// Rank used for dimension `p`.
    pub fn rank_for(&self, p: usize) -> usize {
        self.d
            .or(self.optimizer.d)
            .unwrap_or_else(|| ((p as f64 * self.d_ratio + 1e-9).floor() as usize).max(1))
    }

    /// Number of result rows the grid produces.
    pub fn cell_count(&self) -> usize {
        self.p_list.len() * self.n_list.len() * self.x_list.len() * self.methods.len() * self.reps
    }
}
