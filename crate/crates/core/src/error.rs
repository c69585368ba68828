use thiserror::Error;

use crate::topology::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("{what}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("saturated ADC reading {adc} (open or short circuit)")]
    SaturatedReading { adc: f64 },

    #[error("value {value} outside calibration domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("rank-deficient fit: {distinct} distinct abscissae, need at least {required}")]
    RankDeficient { distinct: usize, required: usize },

    #[error("strain {strain} at tendon {index} gives a non-positive length")]
    DegenerateStrain { index: usize, strain: f64 },

    #[error("strain {strain} is outside the invertible range of the sensor model")]
    NotInvertible { strain: f64 },

    #[error("sensor {index}: {source}")]
    Sensor {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("window underflow: need {needed} samples, have {available}")]
    WindowUnderflow { needed: usize, available: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid topology: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidTopology(Vec<Violation>),

    #[error("coincident connected nodes {a} and {b}")]
    SingularGeometry { a: usize, b: usize },

    #[error("anchored node {node} cannot be displaced or moved")]
    AnchorViolation { node: usize },

    #[error("timestamps must increase: {prev} ms followed by {next} ms")]
    Ordering { prev: f64, next: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Misaligned(String),

    #[error("t = {t_ms} ms: {source}")]
    Frame {
        t_ms: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_sensor(self, index: usize) -> Self {
        Error::Sensor {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_time(self, t_ms: f64) -> Self {
        Error::Frame {
            t_ms,
            source: Box::new(self),
        }
    }
}
