use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {}", .0.join("; "))]
    InvalidMdp(Vec<String>),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("invalid policy over options: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("map error at row {row}, col {col}: {msg}")]
    Map { row: usize, col: usize, msg: String },

    #[error("map error: {0}")]
    MapShape(String),

    #[error("unreachable: no path from {from:?} to {to:?}")]
    Unreachable { from: (usize, usize), to: (usize, usize) },

    #[error("option {option} has infinite expected length from state {state}")]
    InfiniteOption { state: usize, option: usize },

    #[error("policy over options induces {classes} recurrent classes (expected one)")]
    Multichain { classes: usize },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("option {option} was truncated after {steps} steps from state {state}")]
    Truncated { state: usize, option: usize, steps: usize },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
