use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("singular interior block in domain {domain} (pivot {pivot})")]
    SingularDomain { domain: usize, pivot: usize },

    #[error("singular diagonal block {block} (pivot {pivot})")]
    SingularBlock { block: usize, pivot: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("task graph contains a cycle through tasks {witness:?}")]
    GraphCycle { witness: Vec<usize> },

    #[error("graph build error: {0}")]
    GraphBuild(String),

    #[error("cost model not calibrated: {0}")]
    NotCalibrated(String),

    #[error("schedule inconsistent with graph: {0}")]
    ScheduleInconsistent(String),

    #[error("execution stalled: worker {worker} made no progress for {waited_ms} ms before task {task}")]
    ExecutionStalled {
        worker: usize,
        task: usize,
        waited_ms: u64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
