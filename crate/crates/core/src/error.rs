use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The CLI maps these onto stable exit codes: configuration and domain
/// problems exit with 2, numerical failures with 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WfbmError {
    #[error("parameters out of region: {violated} (a = {a}, b = {b})")]
    ParamOutOfRegion { a: f64, b: f64, violated: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("matrix is not positive definite (jitter {jitter:e} exceeded cap {jitter_max:e})")]
    NotPositiveDefinite { jitter: f64, jitter_max: f64 },

    #[error("lookahead {eps} is not an integer multiple of the grid step {step}")]
    MisalignedEpsilon { eps: f64, step: f64 },

    #[error("insufficient horizon: need {needed}, grid ends at {available}")]
    InsufficientHorizon { needed: f64, available: f64 },

    #[error("local time does not vanish at the x-grid edges (edge {edge:e}, max {max:e}); widen the x-grid")]
    EdgeMass { edge: f64, max: f64 },

    #[error("norm integral diverges: {0}")]
    NormInfinite(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("unknown test function: {0}")]
    UnknownFunction(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl WfbmError {
    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            WfbmError::NotPositiveDefinite { .. }
                | WfbmError::NormInfinite(_)
                | WfbmError::Quadrature(_)
                | WfbmError::EdgeMass { .. }
                | WfbmError::Io(_)
        )
    }
}

impl From<std::io::Error> for WfbmError {
    fn from(e: std::io::Error) -> Self {
        WfbmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WfbmError>;
