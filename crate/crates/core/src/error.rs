use std::path::PathBuf;

/// Errors raised by the distillation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("divergence is infinite: {0}")]
    DivergenceInfinite(String),

    #[error("finite-difference oracle failed: {0}")]
    OracleFailure(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("rectification not applicable: teacher argmax {argmax} already matches label")]
    RectifyNotApplicable { argmax: usize },

    #[error("invalid rectification partner {given}: teacher argmax is {argmax}")]
    InvalidPartner { given: usize, argmax: usize },

    #[error("degenerate rectification pair: t_a + t_b = 0")]
    DegeneratePair,

    #[error("invalid subset: sample {index} is predicted correctly by the teacher")]
    InvalidSubset { index: usize },

    #[error("invalid schedule: epoch {epoch} of {total}")]
    InvalidSchedule { epoch: usize, total: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("checkpoint parse error at line {line}: {message}")]
    CheckpointParse { line: usize, message: String },

    #[error("{path}: row {row}: {message}")]
    DataParse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("invalid two-class setup: {0}")]
    InvalidSetup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach a batch position to an error raised for a single sample.
    pub fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// The innermost error, with any sample-index wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
