use std::path::PathBuf;

/// Errors produced across the pipeline.
///
/// Variants are grouped into families (see [`Error::family`]) so front ends
/// can map them onto stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed wav file: {0}")]
    MalformedWav(String),
    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("expected a mono file, found {0} channels")]
    MultiChannel(u16),
    #[error("sample rate {found} Hz is not supported (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("window [{start}, {end}) is outside the signal of length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("bad embedding file: {0}")]
    BadMagic(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("duplicate vote from annotator {annotator} on clip {clip}")]
    DuplicateVote { clip: String, annotator: String },
    #[error("kappa is undefined: chance agreement equals 1")]
    KappaUndefined,
    #[error("treatment is constant; propensity model cannot be fitted")]
    SingleClassTreatment,
    #[error("perfect separation detected (coefficients diverge)")]
    PerfectSeparation,
    #[error("no stratum has both treated and control records")]
    NoValidStrata,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("profile mismatch: model expects {expected}, got {found}")]
    ProfileMismatch { expected: String, found: String },
}

/// Coarse error families, one per exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Io,
    Format,
    Contract,
    Numerical,
    Data,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            Io { .. } => ErrorFamily::Io,
            MalformedWav(_) | UnsupportedEncoding(_) | MultiChannel(_) | SampleRate { .. }
            | BadMagic(_) | Checkpoint(_) => ErrorFamily::Format,
            Shape(_) | OutOfBounds { .. } | ProfileMismatch { .. } | InvalidAudio(_) => {
                ErrorFamily::Contract
            }
            NonFinite(_) | Diverged(_) | KappaUndefined | PerfectSeparation => {
                ErrorFamily::Numerical
            }
            InvalidInput(_) | DuplicateVote { .. } | SingleClassTreatment | NoValidStrata => {
                ErrorFamily::Data
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
