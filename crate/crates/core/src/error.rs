use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not doubly stochastic (max deviation {deviation:e})")]
    NotDoublyStochastic { deviation: f64 },

    #[error("geometric graph still disconnected after {attempts} attempts")]
    Disconnected { attempts: usize },

    #[error("contraction factor {0} is not below 1")]
    NotContractive(f64),

    #[error("batch size {b} out of range 1..={m}")]
    BatchOutOfRange { b: usize, m: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("iterates diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("preset {preset} cannot run on this topology: {reason}")]
    IncompatiblePreset { preset: String, reason: String },

    #[error("infeasible allocation: {0}")]
    InfeasibleAllocation(String),

    #[error("not enough samples of class {class}: need {needed}, have {available}")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("reference optimum did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
