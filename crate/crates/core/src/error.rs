use thiserror::Error;

/// Library-wide error type. Variants carry enough structure for callers to
/// distinguish config mistakes from numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("distribution family mismatch: {left} vs {right}")]
    FamilyMismatch {
        left: &'static str,
        right: &'static str,
    },

    #[error("grid mismatch: supports or resolutions differ ({detail})")]
    GridMismatch { detail: String },

    #[error("invalid parameter {name}: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("not a valid density: {detail}")]
    NotADensity { detail: String },

    #[error("empty dataset")]
    EmptyData,

    #[error("empty candidate set: {detail}")]
    EmptyCandidates { detail: String },

    #[error("point {y} lies outside the distribution support")]
    OutsideSupport { y: f64 },

    #[error("divergence {divergence} is not defined for {family} carriers")]
    UnsupportedDivergence {
        divergence: &'static str,
        family: &'static str,
    },

    #[error("functional {functional} is not defined for {family} carriers")]
    UnsupportedFunctional {
        functional: &'static str,
        family: &'static str,
    },

    #[error("iteration limit ({iterations}) reached, residual {residual:.3e}")]
    IterationLimit {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("covering grid needs {points} points, cap is {cap}")]
    GridTooLarge { points: u128, cap: u64 },

    #[error("confidence set is empty: {detail}")]
    EmptyConfidenceSet { detail: String },

    #[error("radii must be nondecreasing (r[{index}] = {value:.6e} drops below its predecessor)")]
    NonMonotoneRadii { index: usize, value: f64 },

    #[error("warm-up round {t} outside 1..={k}")]
    WarmupIndex { t: usize, k: usize },

    #[error("config field `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
