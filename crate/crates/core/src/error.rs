// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io;

use thiserror::Error;

/// Failures while decoding a shard or checkpoint file.
///
/// Every structural problem is reported with the field that failed so that
/// exporter tooling written in other languages can match on it.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype {0} (only 1 = f32 is defined)")]
    UnsupportedDtype(u32),
    #[error("unsupported variant tag {0}")]
    UnsupportedVariant(u32),
    #[error("truncated file while reading {field}")]
    Truncated { field: &'static str },
    #[error("{0} trailing bytes after sample offsets")]
    TrailingBytes(u64),
    #[error("sample offsets are not strictly increasing at position {position}")]
    NonMonotoneOffsets { position: usize },
    #[error("sample offsets must start at 0 and end at num_rows={num_rows}, got first={first} last={last}")]
    OffsetBounds {
        first: u64,
        last: u64,
        num_rows: u64,
    },
    #[error("non-finite value in {field} at flat index {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error("invalid metadata: {0}")]
    BadMeta(String),
    #[error("invalid dimension field {field}: {value}")]
    BadDimension { field: &'static str, value: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("operation requires the {expected} variant")]
    WrongVariant { expected: &'static str },
    #[error("non-finite loss at step {step}: loss={loss}, aux={aux}")]
    NonFiniteLoss { step: usize, loss: f64, aux: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("missing feature set for record id {0}")]
    MissingFeatures(u64),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
