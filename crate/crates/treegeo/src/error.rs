use thiserror::Error;

/// Errors produced by the treegeo library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("missing column '{0}' in input header")]
    MissingColumn(String),

    #[error("malformed input at line {line}: {msg}")]
    MalformedInput { line: usize, msg: String },

    #[error("duplicate tree id '{0}'")]
    DuplicateTreeId(String),

    #[error("detection bottom edge at or above the horizon line")]
    NoGroundIntersection,

    #[error("projected ground point {0:.1} m away exceeds the distance cutoff")]
    TooFar(f64),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid capacity for address index {0}: capacity must be >= 1")]
    InvalidCapacity(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing ground truth for tree id '{0}'")]
    MissingGroundTruth(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
