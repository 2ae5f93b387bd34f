use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are split into validation failures (bad input shape or
/// parameters) and numerical failures; see [`Error::is_numerical`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("grid of {n} pixels cannot be split into {target} equal blocks")]
    IndivisibleGrid { n: usize, target: usize },
    #[error("central selection of fraction {fraction} on {n} pixels is empty")]
    EmptySelection { fraction: f64, n: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("k = {k} requires at least {} samples, got {n}", k + 1)]
    KTooLarge { k: usize, n: usize },
    #[error("duplicate points at shots {shots:?}; enable jitter to break ties")]
    DuplicatePoints { shots: Vec<usize> },
    #[error("argument {0} outside the function domain")]
    DomainError(f64),
    #[error("sample covariance is singular (degenerate or duplicated axes)")]
    SingularCovariance,
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("transfer operator cumulative vector underflowed at site {site}")]
    OperatorUnderflow { site: usize },
    #[error("coherence curve is not monotone in q near q = {q}")]
    NonMonotoneCurve { q: f64 },
    #[error("value {value} outside the range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("volume {volume} too large for {n} pixels")]
    VolumeTooLarge { volume: usize, n: usize },
    #[error("block {block} too large for {n} pixels")]
    BlockTooLarge { block: usize, n: usize },
    #[error("nonlinear fit diverged: {0}")]
    FitDiverged(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("fringe contrast {contrast:.3} below threshold; phase unreliable")]
    LowContrast { contrast: f64 },
    #[error("{bad} of {total} slices could not be fitted")]
    TooManyBadSlices { bad: usize, total: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DuplicatePoints { .. }
                | Error::SingularCovariance
                | Error::OperatorUnderflow { .. }
                | Error::NonMonotoneCurve { .. }
                | Error::FitDiverged(_)
                | Error::DegenerateData(_)
                | Error::LowContrast { .. }
                | Error::TooManyBadSlices { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
