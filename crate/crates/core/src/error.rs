// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::wire::{Status, WireError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u64, bits: u32 },

    #[error("duplicate element {0:#x}")]
    DuplicateElement(u64),

    #[error("cuckoo insertion failed after {evictions} evictions")]
    InsertionFailure { evictions: usize },

    #[error("bin {bin} overflowed: load {load} exceeds maximum {max}")]
    BinOverflow { bin: usize, load: usize, max: usize },

    #[error("multiplicative depth exhausted")]
    DepthExhausted,

    #[error("ciphertext was encrypted under a different key")]
    KeyMismatch,

    #[error("operand shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label or value {0} is not allowed here")]
    InvalidValue(u64),

    #[error("parameter fingerprint mismatch")]
    FingerprintMismatch,

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("server rejected the request ({status:?}): {message}")]
    Rejected { status: Status, message: String },

    #[error("network: {0}")]
    Network(#[source] std::io::Error),

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures of the hashing layer that a re-key can recover from.
    pub fn is_protocol_failure(&self) -> bool {
        matches!(
            self,
            Error::InsertionFailure { .. } | Error::BinOverflow { .. }
        )
    }

    /// Transport failures: unreachable peer, reset or truncated stream.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            Error::Network(_) | Error::Wire(WireError::Io(_)) | Error::Wire(WireError::Truncated)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
