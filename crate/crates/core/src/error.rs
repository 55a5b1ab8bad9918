use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal has no channels")]
    NoChannels,

    #[error("channel {channel} has {found} samples, expected {expected}")]
    LengthMismatch {
        channel: usize,
        expected: usize,
        found: usize,
    },

    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("expected {expected} frequency bins, found {found}")]
    BinCount { expected: usize, found: usize },

    #[error("frames out of order: expected frame {expected}, got {found}")]
    FrameOrder { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("matrix is not positive definite even after diagonal loading{}", bin_suffix(*.bin))]
    Singular { bin: Option<usize> },

    #[error("forgetting factor {0} outside (0, 1]")]
    InvalidForgetting(f64),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("source {index} is silent (lambda = {lambda:e})")]
    SilentSource { index: usize, lambda: f64 },

    #[error("all sources are silent")]
    AllSourcesSilent,

    #[error("insufficient data: {found} frames, need at least {required}")]
    InsufficientData { found: usize, required: usize },

    #[error("input is silent")]
    SilentInput,

    #[error("no active segments")]
    EmptyActiveSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bin_suffix(bin: Option<usize>) -> String {
    match bin {
        Some(f) => format!(" (frequency bin {f})"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a frequency-bin index to a singular-matrix error.
    pub fn at_bin(self, f: usize) -> Self {
        match self {
            Error::Singular { .. } => Error::Singular { bin: Some(f) },
            other => other,
        }
    }
}
