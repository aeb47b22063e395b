use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid side length must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("macroblock size {block} must be 1 or divide the grid side {n}")]
    InvalidMacroblock { n: usize, block: usize },
    #[error("determinism must lie in [0, 1], got {0}")]
    InvalidDeterminism(f64),
    #[error("discount factor must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("state {state} is outside the grid of {num_states} states")]
    StateOutOfRange { state: usize, num_states: usize },
    #[error("vector length {got} does not match the {expected} states of the world")]
    LengthMismatch { expected: usize, got: usize },
    #[error("world has no linear (LMDP) data; call to_lmdp first")]
    NotLinear,
    #[error("passive dynamics row for state {0} has no mass")]
    EmptyPassiveRow(usize),
    #[error("{solver} did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("genome contains a cycle")]
    CyclicGenome,
    #[error("network expects {expected} inputs, got {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("io error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
