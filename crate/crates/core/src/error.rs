use thiserror::Error;

pub type Result<T> = std::result::Result<T, QvnnError>;

#[derive(Debug, Error)]
pub enum QvnnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    /// Backward called without a recorded forward pass, or on a consumed tape.
    #[error("invalid state: {0}")]
    State(String),

    /// A caller-side precondition was violated (bad configuration, empty set, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("wrong magic in {what}: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic {
        what: String,
        expected: u32,
        found: u32,
    },

    #[error("truncated {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown layer tag {0}")]
    UnknownLayerTag(u8),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QvnnError {
    /// Short stable identifier, used by the CLI for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            QvnnError::Dimension(_) => "dimension",
            QvnnError::Index(_) => "index",
            QvnnError::State(_) => "state",
            QvnnError::Contract(_) => "contract",
            QvnnError::Data(_) => "data",
            QvnnError::NonFinite(_) => "non_finite",
            QvnnError::WrongMagic { .. } => "wrong_magic",
            QvnnError::Truncated { .. } => "truncated",
            QvnnError::UnsupportedVersion(_) => "unsupported_version",
            QvnnError::UnknownLayerTag(_) => "unknown_layer_tag",
            QvnnError::Format(_) => "format",
            QvnnError::Io(_) => "io",
        }
    }
}
