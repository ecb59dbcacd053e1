use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    #[error("{requested} qubits exceed the configured cap of {cap}")]
    QubitCap { requested: usize, cap: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate level: {0}")]
    Degenerate(String),

    #[error("repair loop exceeded {limit} iterations (epsilon = {epsilon})")]
    RepairExhausted { limit: usize, epsilon: f64 },

    #[error("no convergence after {iterations} iterations: {detail}")]
    NotConverged { iterations: usize, detail: String },

    #[error("diverging iteration halted: {0}")]
    Diverged(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("pipeline stage failed: {0}")]
    Stage(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
