//! Run configuration documents (TOML).
//!
//! ```toml
//! k_values = [1, 2, 4, 8]
//! output = "sweep.csv"
//!
//! [omega]
//! lo = 0.0
//! hi = 1.0
//! density = { kind = "uniform" }
//!
//! [omega_star]
//! lo = 2.0
//! hi = 3.0
//! density = { kind = "uniform" }
//!
//! [tolerances]
//! quad_abs_tol = 1e-10
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::density::{DensitySpec, Layout, TransportProblem};
use crate::dual_algebra::MAX_CERTIFIED_K;
use crate::error::{Error, Result};
use crate::numerics::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Sweep,
    Verify,
    Oracle,
}

fn default_k_values() -> Vec<f64> {
    (0..=10).map(|i| f64::from(1u32 << i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub omega: DensitySpec,
    pub omega_star: DensitySpec,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Allow touching or overlapping supports on the experimental path.
    #[serde(default)]
    pub experimental_overlap: bool,
}

impl RunConfig {
    pub fn layout(&self) -> Layout {
        Layout::classify(self.omega.lo, self.omega.hi, self.omega_star.lo, self.omega_star.hi)
    }

    pub fn validate(&self) -> Result<()> {
        for &k in &self.k_values {
            if !(1.0..=MAX_CERTIFIED_K).contains(&k) {
                return Err(Error::Config(format!(
                    "k_values entries must lie in [1, {MAX_CERTIFIED_K}], got {k}"
                )));
            }
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("k_values must be ascending".into()));
        }
        self.tolerances.validate().map_err(|e| Error::Config(format!("tolerances: {e}")))?;
        let layout = self.layout();
        if layout != Layout::Disjoint && !self.experimental_overlap {
            return Err(Error::Config(format!(
                "supports are {layout}; set experimental_overlap = true (or pass \
                 --experimental-overlap) to use the experimental path"
            )));
        }
        Ok(())
    }

    /// Build and validate both densities.
    pub fn problem(&self) -> Result<TransportProblem> {
        TransportProblem::from_specs(self.omega.clone(), self.omega_star.clone())
    }
}

/// Deserialize a config document without the semantic checks.
pub fn read_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config = read_config(text)?;
    config.validate()?;
    Ok(config)
}
