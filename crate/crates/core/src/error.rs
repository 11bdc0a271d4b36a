use thiserror::Error;

use crate::bounds::Quantity;
use crate::model::StratumKey;

/// Errors raised while loading data or evaluating bounds and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error(
        "stratum {stratum}: zero count in cell (x={x}, y={y}); strict positivity required (try add-half smoothing)"
    )]
    Positivity { stratum: StratumKey, x: u8, y: u8 },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("stratum sets do not match: {0}")]
    StratumMismatch(String),

    #[error("stratum {stratum}: {quantity} bounds are infeasible (lower {lower:.6} > upper {upper:.6}); experimental and observational data are incompatible")]
    Incompatible {
        stratum: String,
        quantity: Quantity,
        lower: f64,
        upper: f64,
    },

    #[error("stratum {0}: empty feasible set of response-type distributions")]
    EmptyPolytope(String),

    #[error("sample size N is required for asymptotic variances but the joint carries none")]
    MissingSampleSize,

    #[error("no strata to analyse")]
    EmptyStrata,

    #[error("degenerate scenario: {discarded} of {attempts} simulated datasets had a zero cell")]
    DegenerateScenario { discarded: u64, attempts: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
