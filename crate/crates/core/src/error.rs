use thiserror::Error;

/// Measurement dimension, in the order `(x, y, amplitude, doppler)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    X,
    Y,
    A,
    D,
}

impl Dim {
    pub const ALL: [Dim; 4] = [Dim::X, Dim::Y, Dim::A, Dim::D];

    pub fn index(self) -> usize {
        match self {
            Dim::X => 0,
            Dim::Y => 1,
            Dim::A => 2,
            Dim::D => 3,
        }
    }
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Dim::X => "x",
            Dim::Y => "y",
            Dim::A => "amplitude",
            Dim::D => "doppler",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds in dimension {dim}: min {min} must be below max {max}")]
    InvalidBounds { dim: Dim, min: f64, max: f64 },

    #[error("empty measurement batch")]
    EmptyBatch,

    #[error("measurement {index}: {dim} = {value} lies outside [{min}, {max}]")]
    OutOfBounds {
        index: usize,
        dim: Dim,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("measurement {index}: {reason}")]
    InvalidTime { index: usize, reason: String },

    #[error("operation is not defined for the clutter hypothesis")]
    UnsupportedHypothesis,

    #[error("invalid covariance: sigma_{dim} = {value} must be positive")]
    InvalidCovariance { dim: Dim, value: f64 },

    #[error("degenerate likelihood: every mixture term of measurement {index} is zero")]
    DegenerateLikelihood { index: usize },

    #[error("hypothesis has no support (weighted mass {mass})")]
    EmptySupport { mass: f64 },

    #[error("degenerate geometry: singular 2x2 system (determinant {det})")]
    DegenerateGeometry { det: f64 },

    #[error("instance too large for exhaustive evaluation: {what}")]
    SizeLimit { what: String },

    #[error("oracle failed to converge: {0}")]
    OracleFailure(String),

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{path}: row {row}: {reason}")]
    Parse {
        path: String,
        row: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
