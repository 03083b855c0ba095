use std::io;
use std::path::Path;

use thiserror::Error;

/// Malformed or unreadable `HEEG1` / `HASSPRM` files.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic: not a recognized file")]
    BadMagic,
    #[error("truncated file: need {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("header/payload length mismatch: header implies {expected} bytes, file has {found}")]
    LengthMismatch { expected: u64, found: u64 },
    #[error("record {record}: label byte {code} is not a stage code (0-4)")]
    LabelOutOfRange { record: usize, code: u8 },
    #[error("unsupported feature depth D={0} (only D=1 is defined)")]
    UnsupportedDepth(u16),
    #[error("header declares a zero channel or time extent")]
    EmptyExtent,
    #[error("header values exceed the supported range")]
    HeaderRange,
    #[error("record {record}: non-finite sample")]
    NonFinite { record: usize },
    #[error("record {index} differs in shape from the first record")]
    Inhomogeneous { index: usize },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("tensor {index}: name is not valid UTF-8")]
    BadName { index: usize },
    #[error("tensor `{name}`: rank {rank} outside 1..=3")]
    BadRank { name: String, rank: u8 },
    #[error("tensor `{name}`: zero extent")]
    ZeroExtent { name: String },
    #[error("tensor `{name}`: non-finite value")]
    NonFiniteParam { name: String },
    #[error("tensor `{0}` appears twice")]
    DuplicateName(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl FormatError {
    pub(crate) fn io(path: &Path, err: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
