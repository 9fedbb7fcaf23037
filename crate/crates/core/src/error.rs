use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("architecture fingerprint mismatch (expected {expected:#018x}, found {found:#018x})")]
    Fingerprint { expected: u64, found: u64 },
    #[error("non-finite values in `{layer}`")]
    NonFinite { layer: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("device {device} failed: {source}")]
    Device {
        device: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
