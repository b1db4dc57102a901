use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),

    #[error("cut index {k} out of range 0..={max}")]
    CutOutOfRange { k: usize, max: usize },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("action at actor step {step} is not legal in its state")]
    IllegalAction { step: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("enumeration capacity exceeded: more than {limit} trajectories (stopped at {count})")]
    Capacity { limit: usize, count: usize },

    #[error("non-finite value in trace {trace}: {what}")]
    NonFinite { trace: usize, what: String },

    #[error("training diverged at step {step}: mean |theta| = {mean_abs}")]
    Diverged { step: usize, mean_abs: f64 },

    #[error("unknown question id {0}")]
    UnknownQuestion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
