use thiserror::Error;

/// Broad failure category, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters or invocation.
    Usage,
    /// Malformed, missing or inconsistent input data.
    Data,
    /// The math is undefined for the given input (collinear towers, zero norm, constant field...).
    Degenerate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: lon={lon}, lat={lat}")]
    CoordinateOutOfRange { lon: f64, lat: f64 },

    #[error("duplicate tower id `{0}`")]
    DuplicateTower(String),

    #[error("tower network is empty")]
    EmptyNetwork,

    #[error("unknown tower id `{0}`")]
    UnknownTower(String),

    #[error("tower `{0}` lies outside the boundary polygon")]
    TowerOutsideBoundary(String),

    #[error("invalid boundary polygon: {0}")]
    InvalidBoundary(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("schema mismatch in {source_name}: {msg}")]
    Schema { source_name: String, msg: String },

    #[error("invalid period: {0}")]
    InvalidPeriod(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tables cover different periods (`{0}` vs `{1}`)")]
    PeriodMismatch(String, String),

    #[error("SMC undefined for {rule_a} vs {rule_b} in {period}: no user detected by both")]
    UndefinedSmc {
        rule_a: String,
        rule_b: String,
        period: String,
    },

    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("vector `{0}` has zero norm")]
    ZeroNorm(String),

    #[error("invalid population vector `{source_tag}`: {msg}")]
    InvalidVector { source_tag: String, msg: String },

    #[error("census does not cover {} tower(s): {}", .0.len(), .0.join(", "))]
    MissingCensusTowers(Vec<String>),

    #[error("degenerate field: values are constant (standard deviation is zero)")]
    DegenerateField,

    #[error("degenerate weights at tower `{0}`: neighbourhood spans the whole network")]
    DegenerateWeights(String),

    #[error("user `{0}` is absent from the ground truth")]
    UnknownUser(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidParameter(_) => ErrorKind::Usage,
            DegenerateGeometry(_)
            | UndefinedSmc { .. }
            | ZeroNorm(_)
            | DegenerateField
            | DegenerateWeights(_) => ErrorKind::Degenerate,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
