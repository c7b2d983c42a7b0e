//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any stage of the toolkit. Each variant names the
/// offending file, column, or quantity so CLI diagnostics stay actionable.
#[derive(Debug, thiserror::Error)]
pub enum MorphoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} file {path}: {detail}")]
    Parse {
        format: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate landmark configuration: {0}")]
    DegenerateLandmarks(String),

    #[error("region {region:?} is not a closed surface ({boundary_edges} boundary edges)")]
    OpenSurface {
        region: String,
        boundary_edges: usize,
    },

    #[error("column {column:?} not found in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("column {0:?} is constant (zero standard deviation); cannot standardize")]
    ConstantColumn(String),

    #[error("missing value for subject {subject:?} in column {column:?}")]
    MissingValue { subject: String, column: String },

    #[error("unknown subject {0:?}")]
    UnknownSubject(String),

    #[error("labels contain a single class; both classes are required")]
    SingleClass,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error(
        "logistic fit diverged on separable data with ridge = 0; \
         set a positive ridge penalty (e.g. 1e-6)"
    )]
    SeparableData,

    #[error("direction is zero after whitening (orthogonal to all retained components)")]
    ZeroAfterWhitening,

    #[error("coefficients are orthogonal to the observed shape variability")]
    DegenerateMetric,

    #[error("cohort is already deflated; deflate consumes raw cohorts only")]
    AlreadyDeflated,

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MorphoError>;

impl MorphoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MorphoError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(
        format: &'static str,
        path: impl Into<PathBuf>,
        detail: impl Into<String>,
    ) -> Self {
        MorphoError::Parse {
            format,
            path: path.into(),
            detail: detail.into(),
        }
    }
}
