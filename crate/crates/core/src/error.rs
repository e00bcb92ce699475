use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("material `{name}` failed validation: {violations}")]
    Validation { name: String, violations: String },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("no material assigned to region {0}")]
    MissingMaterial(String),

    #[error("element {0} has a non-positive jacobian")]
    SingularElement(usize),

    #[error("eigensolver failed: {0}")]
    EigSolverFailure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no resonance found: {0}")]
    NoResonanceFound(String),

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("frequencies not strictly increasing at row {index}")]
    NonMonotoneFrequency { index: usize },

    #[error("singular S-to-Y conversion at frequency index {index}")]
    SingularConversion { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
