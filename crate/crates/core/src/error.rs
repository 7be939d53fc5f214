use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch in tensor `{0}`")]
    ShapeMismatch(String),

    #[error("every action is masked")]
    AllMasked,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("corpus line {line}: {msg}")]
    CorpusParse { line: usize, msg: String },

    #[error("address book: {0}")]
    AddressBook(String),

    #[error("domain hook `{hook}` failed: {msg}")]
    Domain { hook: &'static str, msg: String },

    #[error("unknown action template `{0}`")]
    UnknownTemplate(String),

    #[error(
        "corpus dialog {dialog}, step {step}: action `{action}` is masked at its own position"
    )]
    MaskedCorpusAction {
        dialog: usize,
        step: usize,
        action: String,
    },

    #[error("supervised repair did not reconstruct the corpus within {0} epochs")]
    RepairFailed(usize),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("session {0} not found")]
    NoSuchSession(u64),

    #[error("session closed")]
    SessionClosed,

    #[error("no model loaded")]
    NoModel,

    #[error("busy: a training job is already running")]
    Busy,

    #[error("job {0} not found")]
    NoSuchJob(u64),

    #[error("cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
