use thiserror::Error;

/// Errors produced by the numerical routines and config loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spectral model has no modes")]
    EmptyModel,
    #[error("mode {0} has gamma = 0")]
    ZeroGamma(usize),
    #[error("mode {0} has nonpositive spectral weight")]
    NonpositiveMu(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("grid functions live on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("beta = {beta} outside [0, {limit})")]
    BetaOutOfRange { beta: f64, limit: f64 },
    #[error("stable data has a nonzero coordinate on unstable mode {0}")]
    UnstableSupport(usize),
    #[error("alpha has a negative entry at mode {0}")]
    NegativeAlpha(usize),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("level j = {j} exceeds cap {cap}")]
    TooLarge { j: usize, cap: usize },
    #[error("theta = {0} outside (0, pi/2)")]
    ThetaOutOfRange(f64),
    #[error("fixed-point iteration diverged after {iterations} iterations (update norm {update_norm:e})")]
    Diverged { iterations: usize, update_norm: f64 },
    #[error("no convergence in {iterations} iterations (update norm {update_norm:e})")]
    NoConvergence { iterations: usize, update_norm: f64 },
    #[error("|h| = {norm} exceeds eps1 = {eps1}")]
    RadiusExceeded { norm: f64, eps1: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
