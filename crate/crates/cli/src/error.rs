use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

/// Everything a subcommand can fail with.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gradnetot_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed pixel data: {0}")]
    MalformedData(String),

    #[error("unsupported magic {0}")]
    UnsupportedMagic(String),

    #[error("image index {index} out of range for {count} images")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("usage: {0}")]
    Usage(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable snake_case name for the error object printed on failure.
    pub fn kind(&self) -> &'static str {
        use gradnetot_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::DimensionMismatch { .. } => "dimension_mismatch",
                E::NotSymmetric(_) => "not_symmetric",
                E::NotPositiveDefinite { .. } => "not_positive_definite",
                E::SingularMatrix(_) => "singular_matrix",
                E::NoConvergence(_) => "no_convergence",
                E::NonScalarRoot(..) => "non_scalar_root",
                E::DoubleBackward => "double_backward",
                E::ForeignNode => "foreign_node",
                E::AllZeroImage => "all_zero_image",
                E::UnsupportedActivation(_) => "unsupported_activation",
                E::NonFiniteLoss { .. } => "non_finite_loss",
                E::NonFiniteKernel => "non_finite_kernel",
                E::SinkhornNotConverged(_) => "sinkhorn_not_converged",
                E::ZeroMassRow(_) => "zero_mass_row",
                E::InvalidArgument(_) => "invalid_argument",
                E::Checkpoint(_) => "checkpoint",
            },
            CliError::Io { .. } => "io",
            CliError::MalformedHeader(_) => "malformed_header",
            CliError::MalformedData(_) => "malformed_data",
            CliError::UnsupportedMagic(_) => "unsupported_magic",
            CliError::IndexOutOfRange { .. } => "index_out_of_range",
            CliError::Config(_) => "config",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
            CliError::Usage(_) => "usage",
        }
    }

    /// `{"error": {"kind": …, "message": …}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Core(gradnetot_core::Error::NonFiniteLoss { iteration }) = self {
            obj["iteration"] = json!(iteration);
        }
        json!({ "error": obj })
    }
}
