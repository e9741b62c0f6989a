use thiserror::Error;

use crate::discrete_ot::TransportPlan;
use crate::gradnet::Activation;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("triangular matrix is singular at diagonal index {0}")]
    SingularMatrix(usize),

    #[error("symmetric eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("backward() needs a 1x1 root, got {0}x{1}")]
    NonScalarRoot(usize, usize),

    #[error("backward() already ran on this tape; reset it first")]
    DoubleBackward,

    #[error("node reference belongs to a different tape")]
    ForeignNode,

    #[error("image has no strictly positive intensity")]
    AllZeroImage,

    #[error("activation {0} has no closed-form antiderivative")]
    UnsupportedActivation(Activation),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("Sinkhorn kernel is not finite (cost / epsilon overflows)")]
    NonFiniteKernel,

    #[error(
        "Sinkhorn did not converge in {} iterations (marginal error {:e})",
        .0.iterations,
        .0.marginal_error
    )]
    SinkhornNotConverged(Box<TransportPlan>),

    #[error("transport plan row {0} carries no mass")]
    ZeroMassRow(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::DimensionMismatch {
        op,
        detail: detail.into(),
    }
}
