use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid address: {0}")]
    InvalidAddress(String),

    #[error("{x} is a k-adic point of level {level}; the axial density is undefined there")]
    KadicPoint { x: f64, level: u32 },

    #[error("value {0} lies outside [0, 1]")]
    OutOfRange(f64),

    #[error("depth {requested} is out of range (limit {limit})")]
    DepthOutOfRange { requested: u32, limit: u32 },

    #[error("{0}")]
    Mode(String),

    #[error("regime error: {0}")]
    Regime(String),

    #[error("no estimate: {0}")]
    NoEstimate(String),

    #[error("orphan cell {address} at depth {depth}: its parent is not in the tree")]
    Orphan { depth: u32, address: String },

    #[error("malformed tree file, line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
