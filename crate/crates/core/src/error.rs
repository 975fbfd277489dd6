use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors across the pipeline. Variants carry enough location detail
/// (path, line, id) to act on without re-running with a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },

    #[error("corpus has no records")]
    EmptyCorpus,

    #[error("phrase set is empty")]
    EmptyPhraseSet,

    #[error("pair file `{0}` has no data rows")]
    EmptyPairs(String),

    #[error("unknown document id `{0}`")]
    UnknownDoc(String),

    #[error("phrase `{0}` is not in the universe")]
    UnknownPhrase(String),

    #[error("no embedding for id `{0}`")]
    MissingEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero variance in {0}; correlation undefined")]
    ZeroVariance(String),

    #[error("batch size {0} too small: in-batch negatives need at least 2 ego graphs")]
    BatchTooSmall(usize),

    #[error("no pair at or above the positive threshold {0}")]
    NoPositivePairs(f64),

    #[error("need at least 2 distinct phrases, got {0}")]
    TooFewPhrases(usize),

    #[error("non-finite loss at step {0}; training aborted")]
    NonFiniteLoss(u64),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
