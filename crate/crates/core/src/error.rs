use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("density is not strictly positive: value {value} at x = {x}")]
    Positivity { x: f64, value: f64 },

    #[error("degenerate density: mass {mass} must be positive")]
    DegenerateDensity { mass: f64 },

    #[error("density on [{lo}, {hi}] is not normalized (mass {mass}); call normalize() first")]
    NotNormalized { lo: f64, hi: f64, mass: f64 },

    #[error(
        "balance condition violated: source mass {source_mass}, sink mass {sink_mass}; \
         normalize both densities"
    )]
    Balance { source_mass: f64, sink_mass: f64 },

    #[error("layout {layout} is not supported here: {reason}")]
    Layout { layout: String, reason: String },

    #[error("infeasible stress |theta| = {theta} > 1 would force |u_x| > 1")]
    InfeasibleStress { theta: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("balance constant search failed on {side}: {reason}")]
    BalanceConstant { side: String, reason: String },

    #[error("infeasible potential: {}", violations.join("; "))]
    Feasibility { violations: Vec<String> },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}
