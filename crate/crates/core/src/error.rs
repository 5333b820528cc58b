use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("system of {n_sites} sites exceeds the configured maximum of {max}")]
    Size { n_sites: usize, max: usize },

    #[error("site index {site} out of range for {n_sites} sites")]
    SiteIndex { site: usize, n_sites: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("superoperator dimension {dim} exceeds the spectral maximum {max}")]
    SpectralSize { dim: usize, max: usize },

    #[error("no eigenvalue within {zero_tol:e} of zero (smallest |lambda| = {smallest:e})")]
    NoSteadyState { zero_tol: f64, smallest: f64 },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("trace drifted by {drift:e} at t = {time}; reduce dt")]
    StepSize { time: f64, drift: f64 },

    #[error("norm collapsed to {norm:e} at t = {time}; reduce dt")]
    NormCollapse { time: f64, norm: f64 },

    #[error("non-finite value encountered at t = {time}")]
    Divergence { time: f64 },

    #[error("jump requested at t = {time} but every channel has zero probability")]
    DarkJump { time: f64 },

    #[error("decay window crosses zero at t = {time}; the decay is oscillatory, fit an envelope instead")]
    Oscillation { time: f64 },

    #[error("fit window [{t_start}, {t_end}] holds {points} usable points, need at least {required}")]
    FitWindow {
        t_start: f64,
        t_end: f64,
        points: usize,
        required: usize,
    },

    #[error("fitted rate {rate} is not a positive decay rate; the window does not decay")]
    NoDecay { rate: f64 },

    #[error("no samples after t_s = {t_s}")]
    EmptyWindow { t_s: f64 },

    #[error("bimodality coefficient undefined: every sample is zero")]
    UndefinedBimodality,

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}
