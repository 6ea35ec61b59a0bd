use thiserror::Error;

/// Errors raised across the physics, simulation and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received a value outside its domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The drive frequency sits too close to the trap frequency for the
    /// undamped off-resonant response to be meaningful.
    #[error("drive at {drive_hz} Hz is within the resonance guard of the {trap_hz} Hz trap")]
    Resonance { drive_hz: f64, trap_hz: f64 },

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature failed to reach tolerance {tolerance:e} on [{start:e}, {end:e}]")]
    Quadrature {
        start: f64,
        end: f64,
        tolerance: f64,
    },

    /// Every phase point carries the same D-state fraction; contrast and phase
    /// cannot be identified.
    #[error("degenerate fringe: all phase points have D fraction {fraction}")]
    DegenerateFringe { fraction: f64 },

    /// The data do not constrain the requested model parameters.
    #[error("model not identifiable: {0}")]
    NotIdentifiable(String),

    /// A fit finished without meeting its convergence criterion.
    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    /// A confidence interval was required but the fit carries none.
    #[error("fit result has no uncertainty for `{0}`")]
    MissingUncertainty(&'static str),

    /// Data ingestion failure (schema violation, malformed row, ...).
    #[error("{0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
