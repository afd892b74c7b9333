use thiserror::Error;

/// Errors produced by the reduction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spectra overlap: eigenvalue separation {separation:.3e} is below {tol:.1e}")]
    SpectrumOverlap { separation: f64, tol: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("problem size {size} exceeds limit {limit}")]
    SizeLimitExceeded { size: usize, limit: usize },

    #[error("matrix is not Hurwitz (max real part {max_real:.3e})")]
    NotHurwitz { max_real: f64 },

    #[error("rank deficient: numerical rank {rank} < {required}{hint}")]
    RankDeficient {
        rank: usize,
        required: usize,
        hint: &'static str,
    },

    #[error("parameter {p} outside [{lo}, {hi}]")]
    ParameterOutOfRange { p: f64, lo: f64, hi: f64 },

    #[error("shift s = {re}{im:+}i is (numerically) an eigenvalue")]
    SingularShift { re: f64, im: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate interpolation frequency {0}")]
    DuplicateFrequency(f64),

    #[error("(S, L) is not observable")]
    ObservabilityFailure,

    #[error("(S, omega0) is not excitable")]
    ExcitabilityFailure,

    #[error("coefficient function of kind '{0}' has no Taylor expansion")]
    NonAnalyticCoefficient(&'static str),

    #[error("snapshot window too short: h = {h} < nu = {nu}")]
    WindowTooShort { h: usize, nu: usize },

    #[error("window [{t_start}, {t_end}] outside recorded trajectory [{t_min}, {t_max}]")]
    WindowOutsideTrajectory {
        t_start: f64,
        t_end: f64,
        t_min: f64,
        t_max: f64,
    },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("Gram matrix Pi^T X Pi is numerically singular")]
    SingularGram,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration at '{path}': {msg}")]
    ConfigInvalid { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
