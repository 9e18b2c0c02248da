// SPDX-License-Identifier: Apache-2.0

//! Request and response frames.
//!
//! ```text
//! request:  "PEPSIv01" | kind=0 u8 | variant u8 | plan fp u64 | params fp u64
//!           | n_ct u32 | n_values u32 | n_ct × blob | n_values × blob
//! response: "PEPSIv01" | kind=1 u8 | status u8 | variant u8 | groups u32
//!           | n_ct u32 | n_ct × blob | message (blob, UTF-8)
//! blob:     len u32 | len bytes
//! ```
//!
//! Integers are little-endian. Ciphertext blobs are opaque to this layer.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::variants::Variant;

pub const MAGIC: &[u8; 8] = b"PEPSIv01";
const KIND_REQUEST: u8 = 0;
const KIND_RESPONSE: u8 = 1;

/// Upper bounds that keep a hostile frame from forcing huge allocations.
pub const MAX_BLOB_BYTES: usize = 1 << 27;
pub const MAX_BLOBS: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("expected message kind {expected}, got {got}")]
    UnexpectedKind { expected: u8, got: u8 },
    #[error("unknown variant tag {0}")]
    UnknownVariant(u8),
    #[error("unknown status {0}")]
    UnknownStatus(u8),
    #[error("{what} of {len} exceeds limit {max}")]
    TooLarge {
        what: &'static str,
        len: usize,
        max: usize,
    },
    #[error("error message is not UTF-8")]
    BadMessage,
    #[error("frame truncated")]
    Truncated,
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(e)
        }
    }
}

pub type WireResult<T> = std::result::Result<T, WireError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub variant: Variant,
    pub plan_fingerprint: u64,
    pub params_fingerprint: u64,
    /// `γ·ℓ·⌈b/N⌉` serialized ciphertexts.
    pub ciphertexts: Vec<Vec<u8>>,
    /// Encrypted client values, inner product only.
    pub client_values: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    FingerprintMismatch = 1,
    Unsupported = 2,
    Malformed = 3,
    Error = 4,
}

impl Status {
    fn from_u8(v: u8) -> WireResult<Self> {
        Ok(match v {
            0 => Status::Ok,
            1 => Status::FingerprintMismatch,
            2 => Status::Unsupported,
            3 => Status::Malformed,
            4 => Status::Error,
            other => return Err(WireError::UnknownStatus(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: Status,
    pub variant: Variant,
    /// Label limb groups for labelled responses, 1 otherwise.
    pub groups: u32,
    pub ciphertexts: Vec<Vec<u8>>,
    pub message: String,
}

impl Response {
    pub fn error(status: Status, variant: Variant, message: impl Into<String>) -> Self {
        Self {
            status,
            variant,
            groups: 0,
            ciphertexts: Vec::new(),
            message: message.into(),
        }
    }
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob);
}

fn read_array<const N: usize>(r: &mut impl Read) -> WireResult<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read) -> WireResult<u8> {
    Ok(read_array::<1>(r)?[0])
}

fn read_u32(r: &mut impl Read) -> WireResult<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> WireResult<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_count(r: &mut impl Read) -> WireResult<usize> {
    let n = read_u32(r)? as usize;
    if n > MAX_BLOBS {
        return Err(WireError::TooLarge {
            what: "blob count",
            len: n,
            max: MAX_BLOBS,
        });
    }
    Ok(n)
}

fn read_blob(r: &mut impl Read) -> WireResult<Vec<u8>> {
    let len = read_u32(r)? as usize;
    if len > MAX_BLOB_BYTES {
        return Err(WireError::TooLarge {
            what: "blob",
            len,
            max: MAX_BLOB_BYTES,
        });
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_blobs(r: &mut impl Read, n: usize) -> WireResult<Vec<Vec<u8>>> {
    (0..n).map(|_| read_blob(r)).collect()
}

fn read_header(r: &mut impl Read, kind: u8) -> WireResult<()> {
    let magic: [u8; 8] = read_array(r)?;
    if &magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let got = read_u8(r)?;
    if got != kind {
        return Err(WireError::UnexpectedKind {
            expected: kind,
            got,
        });
    }
    Ok(())
}

fn read_variant(r: &mut impl Read) -> WireResult<Variant> {
    let tag = read_u8(r)?;
    Variant::from_tag(tag).ok_or(WireError::UnknownVariant(tag))
}

fn decode_exact<T>(bytes: &[u8], read: impl FnOnce(&mut &[u8]) -> WireResult<T>) -> WireResult<T> {
    let mut cursor = bytes;
    let v = read(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(WireError::Trailing(cursor.len()));
    }
    Ok(v)
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(KIND_REQUEST);
        out.push(self.variant.tag());
        out.extend_from_slice(&self.plan_fingerprint.to_le_bytes());
        out.extend_from_slice(&self.params_fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.client_values.len() as u32).to_le_bytes());
        for b in self.ciphertexts.iter().chain(&self.client_values) {
            put_blob(&mut out, b);
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        8 + 2
            + 16
            + 8
            + self
                .ciphertexts
                .iter()
                .chain(&self.client_values)
                .map(|b| 4 + b.len())
                .sum::<usize>()
    }

    pub fn read_from(r: &mut impl Read) -> WireResult<Self> {
        read_header(r, KIND_REQUEST)?;
        let variant = read_variant(r)?;
        let plan_fingerprint = read_u64(r)?;
        let params_fingerprint = read_u64(r)?;
        let n_ct = read_count(r)?;
        let n_values = read_count(r)?;
        Ok(Self {
            variant,
            plan_fingerprint,
            params_fingerprint,
            ciphertexts: read_blobs(r, n_ct)?,
            client_values: read_blobs(r, n_values)?,
        })
    }

    pub fn decode(bytes: &[u8]) -> WireResult<Self> {
        decode_exact(bytes, |r| Self::read_from(r))
    }

    pub fn write_to(&self, w: &mut impl Write) -> WireResult<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(KIND_RESPONSE);
        out.push(self.status as u8);
        out.push(self.variant.tag());
        out.extend_from_slice(&self.groups.to_le_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u32).to_le_bytes());
        for b in &self.ciphertexts {
            put_blob(&mut out, b);
        }
        put_blob(&mut out, self.message.as_bytes());
        out
    }

    pub fn encoded_len(&self) -> usize {
        8 + 3
            + 8
            + self.ciphertexts.iter().map(|b| 4 + b.len()).sum::<usize>()
            + 4
            + self.message.len()
    }

    pub fn read_from(r: &mut impl Read) -> WireResult<Self> {
        read_header(r, KIND_RESPONSE)?;
        let status = Status::from_u8(read_u8(r)?)?;
        let variant = read_variant(r)?;
        let groups = read_u32(r)?;
        let n_ct = read_count(r)?;
        let ciphertexts = read_blobs(r, n_ct)?;
        let message = String::from_utf8(read_blob(r)?).map_err(|_| WireError::BadMessage)?;
        Ok(Self {
            status,
            variant,
            groups,
            ciphertexts,
            message,
        })
    }

    pub fn decode(bytes: &[u8]) -> WireResult<Self> {
        decode_exact(bytes, |r| Self::read_from(r))
    }

    pub fn write_to(&self, w: &mut impl Write) -> WireResult<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }
}
