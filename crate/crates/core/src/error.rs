//! Crate-wide error type.

use crate::linalg::LassoSolution;
use crate::model::SignalModel;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible or out-of-range dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A generator was invoked with the wrong signal-model tag.
    #[error("model mismatch: expected {expected}, got {actual}")]
    ModelMismatch {
        expected: SignalModel,
        actual: SignalModel,
    },

    /// Invalid numeric argument (probabilities, counts, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration document. The message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// The LASSO solver hit its iteration cap before meeting the KKT
    /// tolerance. The best iterate found so far is attached.
    #[error(
        "lasso did not converge: kkt residual {residual:e} after {} iterations",
        best.iterations_used
    )]
    NonConvergence {
        best: Box<LassoSolution>,
        residual: f64,
    },

    /// `estimate_k` requires at least two distinct score values.
    #[error("degenerate scores: all values are equal")]
    DegenerateScores,
}

pub type Result<T> = std::result::Result<T, Error>;
