use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a PMFM feature file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported PMFM version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid feature dimensions {height}x{width}x{channels}")]
    InvalidDims {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("mask has no positive pixels")]
    EmptyMask,
    #[error("first mask of an IoA has no positive pixels")]
    EmptyFirstMask,
    #[error("stride {stride} must lie in 1..={max}")]
    InvalidStride { stride: usize, max: usize },
    #[error("cannot draw {k} distinct prompts from {available} patches")]
    KTooLarge { k: usize, available: usize },
    #[error("prompt ({row}, {col}) outside a {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("RLE counts sum to {sum}, expected {expected}")]
    BadCounts { sum: u64, expected: u64 },
    #[error("cannot upsample {from:?} to smaller size {to:?}")]
    Downscale {
        from: (usize, usize),
        to: (usize, usize),
    },
    #[error("could not place objects after {attempts} attempts")]
    PlacementFailure { attempts: usize },
    #[error("need {needed} inputs, found {found}")]
    NotEnoughInputs { needed: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::InvalidDims { .. } => "InvalidDims",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::EmptyMask => "EmptyMask",
            Error::EmptyFirstMask => "EmptyFirstMask",
            Error::InvalidStride { .. } => "InvalidStride",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::BadCounts { .. } => "BadCounts",
            Error::Downscale { .. } => "Downscale",
            Error::PlacementFailure { .. } => "PlacementFailure",
            Error::NotEnoughInputs { .. } => "NotEnoughInputs",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}
