use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, String),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("invalid potential value {value} in {location}")]
    InvalidValue { value: f64, location: String },
    #[error("every joint assignment is forbidden")]
    EmptyDomain,
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("joint state space of {states} exceeds enumeration cap {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported format version: {0}")]
    Version(String),
    #[error("solver precondition violated: {0}")]
    SolverPrecondition(String),
    #[error("invalid perturbation scheme: {0}")]
    InvalidScheme(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("training diverged at epoch {epoch}: loss {loss} exceeds limit {limit}")]
    Diverged { epoch: usize, loss: f64, limit: f64 },
    #[error("malformed results table: {0}")]
    MalformedTable(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
