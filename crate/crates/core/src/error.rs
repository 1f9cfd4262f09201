use thiserror::Error;

use crate::sequence::TruncatedSequence;
use crate::solver::SolveDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("operator is not injective on the truncated space (rank {rank} < {dim})")]
    NotInjective { rank: usize, dim: usize },

    #[error("restricted Gram matrix on support {support:?} is singular")]
    SingularSupport { support: Vec<usize> },

    #[error("enumeration needs {required} patterns, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("{0} requires a euclidean data norm")]
    UnsupportedNorm(&'static str),

    #[error("constant c must lie in [0, 1), got {0}")]
    InvalidC(f64),

    #[error("gamma table is empty")]
    EmptyGammaTable,

    #[error("no method certifies the source condition up to n = {n_max}: {reason}")]
    NotCertified { n_max: usize, reason: String },

    #[error("unsupported problem: {0}")]
    UnsupportedProblem(String),

    #[error("solver stopped after {} iterations with kkt residual {:e}", .diagnostics.iterations, .diagnostics.kkt_residual)]
    NotConverged {
        best: Box<TruncatedSequence>,
        diagnostics: Box<SolveDiagnostics>,
    },

    #[error("discrepancy principle found no admissible alpha in [{lo:e}, {hi:e}]")]
    DiscrepancyExhausted { lo: f64, hi: f64 },

    #[error("grid of {grid_size} points is too coarse for frequency {max_frequency} (need >= {required})")]
    GridTooCoarse {
        grid_size: usize,
        max_frequency: u64,
        required: u64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
