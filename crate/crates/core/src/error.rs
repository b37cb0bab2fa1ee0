use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("A-line index {index} out of range for {n_alines} A-lines")]
    AlineOutOfRange { index: usize, n_alines: usize },

    #[error("no lumen found: only {found} of {n_alines} A-lines crossed the threshold")]
    NoLumenFound { found: usize, n_alines: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("arc out of range: {0}")]
    ArcOutOfRange(String),

    #[error("arcs overlap at A-line {0}")]
    OverlappingArcs(usize),

    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),

    #[error(
        "infeasible anchors: ({from_aline}, {from_r}) -> ({to_aline}, {to_r}) needs more than {smooth_max} px per A-line"
    )]
    InfeasibleAnchors {
        from_aline: usize,
        from_r: usize,
        to_aline: usize,
        to_r: usize,
        smooth_max: usize,
    },

    #[error("empty arc: no thickness samples")]
    EmptyArc,

    #[error("too few pairs: {0} (need at least 2)")]
    TooFewPairs(usize),

    #[error("degenerate regression: first measurement has zero variance")]
    DegenerateX,

    #[error("degenerate regression: second measurement has zero variance, R² undefined")]
    DegenerateY,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),

    #[error("manifest not found in {0}")]
    MissingManifest(PathBuf),

    #[error("unsupported schema version {0:?}")]
    UnsupportedVersion(String),

    #[error("schema violation at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(
        what: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
