use std::path::PathBuf;

use thiserror::Error;

/// Parse failures for `.svox` files. Each malformed region has its own variant.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SvoxError {
    #[error("bad magic")]
    BadMagic,
    #[error("bad dtype code {0}")]
    BadDtype(u8),
    #[error("bad dims {0}x{1}x{2}")]
    BadDims(u32, u32, u32),
    #[error("bad spacing")]
    BadSpacing,
    #[error("short header")]
    ShortHeader,
    #[error("short payload: expected {expected} bytes, found {found}")]
    ShortPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("mask payload contains value {0}")]
    NonBinaryMask(u8),
    #[error("non-finite value in payload")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spacing ({0}, {1}, {2}): components must be finite and > 0")]
    InvalidSpacing(f64, f64, f64),
    #[error("invalid dims {0}x{1}x{2}")]
    InvalidDims(usize, usize, usize),
    #[error("data length {found} does not match dims (expected {expected})")]
    DataLength { expected: usize, found: usize },
    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),
    #[error("mask value {0} is not binary")]
    NonBinary(u8),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("empty object")]
    EmptyObject,
    #[error("undefined HD: empty mask")]
    UndefinedHd,
    #[error("undefined surface distance: empty mask")]
    UndefinedSurfaceDistance,
    #[error("empty rows")]
    EmptyRows,
    #[error("empty cohort")]
    EmptyCohort,
    #[error("dims {0}x{1}x{2} too small to place structures (need at least 48x48x32)")]
    PhantomTooSmall(usize, usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing mask for channel {0}")]
    MissingChannel(&'static str),
    #[error("rotation angle {0} deg exceeds +/-{1} deg")]
    RotationRange(f64, f64),
    #[error("voi size {voi:?} larger than volume {vol:?}")]
    VoiTooLarge { voi: [usize; 3], vol: [usize; 3] },
    #[error("spatial dims {0:?} not divisible by {1}")]
    NotDivisible([usize; 3], usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel layout checksum mismatch: stack {stack:#010x}, model {model:#010x}")]
    LayoutMismatch { stack: u32, model: u32 },
    #[error("backward before forward")]
    BackwardBeforeForward,
    #[error("non-finite value produced by {0}")]
    NanGuard(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("svox {path}: {source}")]
    Svox {
        path: PathBuf,
        #[source]
        source: SvoxError,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("output dir {0} is not empty (use --force)")]
    OutputNotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
