use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("index out of range in {op}: {index} (limit {limit})")]
    OutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("frequency {freq_hz} Hz out of range (0, {nyquist_hz}) Hz")]
    FrequencyOutOfRange { freq_hz: f64, nyquist_hz: f64 },

    #[error("invalid band {lo_hz}-{hi_hz} Hz: {reason}")]
    InvalidBand { lo_hz: f64, hi_hz: f64, reason: String },

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("cannot decimate {from_hz} Hz to {to_hz} Hz by an integer factor")]
    NonIntegerFactor { from_hz: f64, to_hz: f64 },

    #[error("FastICA did not converge after {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    #[error("input is rank deficient (eigenvalue ratio {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("degenerate window: zero variance")]
    DegenerateWindow,

    #[error("no spectral bins fall inside {lo_hz}-{hi_hz} Hz")]
    EmptyBand { lo_hz: f64, hi_hz: f64 },

    #[error("feature kind mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(u8),

    #[error("dataset contains a single class")]
    SingleClass,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
