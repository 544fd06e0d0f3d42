use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step {step}: {bound} violated ({value} outside [{lo}, {hi}])")]
    Dynamics {
        step: usize,
        bound: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("step {step}: no feasible battery dispatch (interval [{lo}, {hi}] is empty)")]
    EmptyInputSet { step: usize, lo: f64, hi: f64 },

    #[error("trajectory validation failed: {0}")]
    Validation(String),

    #[error("model build failed: {0}")]
    Build(String),

    #[error("{method} solve at step {step} ended with status {status}: {detail}")]
    Solve {
        method: String,
        step: usize,
        status: String,
        detail: String,
    },

    #[error("simulation log is incomplete: {0}")]
    Log(String),

    #[error("{path}:{row}: {message}")]
    Data {
        path: String,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
