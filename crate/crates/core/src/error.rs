use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { what: &'static str, iterations: usize, last_change: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("state blew up at step {step} (norm {norm:e})")]
    BlowUp { step: usize, norm: f64 },

    #[error("point ({x}, {y}) lies outside the triangle 0 <= y <= x <= 1")]
    OutsideDomain { x: f64, y: f64 },

    #[error("the pair (A, B) is not controllable")]
    NotControllable,

    #[error("invalid pole specification: {0}")]
    InvalidPoles(String),

    #[error("invalid LQ weights: {0}")]
    InvalidWeights(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
