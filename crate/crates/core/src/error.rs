use thiserror::Error;

use crate::data::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("k = {k} is outside 1..={dim}")]
    TopKOutOfRange { k: usize, dim: usize },

    #[error("ratio undefined for the zero vector")]
    ZeroVector,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite activation while processing sample {sample}")]
    NonFiniteActivation { sample: usize },

    #[error("RDP curve has no grid points")]
    EmptyGrid,

    #[error("importance scores have not been finalized")]
    ScoresNotFinalized,

    #[error("importance scores were already finalized")]
    ScoresAlreadyFinalized,

    #[error("no importance steps were accumulated")]
    NoImportanceSteps,

    #[error("row {row} has norm {norm} above the clip bound {clip}")]
    NormBoundViolated { row: usize, norm: f64, clip: f64 },

    #[error("row {row} has a non-zero entry at masked-out coordinate {coord}")]
    OffMaskEntry { row: usize, coord: usize },

    #[error("batch size {batch} exceeds dataset size {size}")]
    BatchTooLarge { batch: usize, size: usize },

    #[error("step {t} is beyond the schedule horizon {horizon}")]
    ScheduleOutOfRange { t: usize, horizon: usize },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("step {step} ({module}): {source}")]
    Runtime {
        step: usize,
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("metrics serialization: {0}")]
    Serialize(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize, module: &'static str) -> Error {
        Error::Runtime {
            step,
            module,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
