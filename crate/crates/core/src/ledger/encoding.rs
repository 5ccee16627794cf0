//! Canonical byte encoding used for every hash in the ledger.
//!
//! Layout: one tag byte, then fields in declared order. Integers are 8-byte
//! big-endian, variable-length byte/string fields carry a 4-byte big-endian
//! length prefix, fixed 32-byte digests are written raw, and lists are a
//! 4-byte count followed by their elements.

use crate::digest::Digest;

pub const TAG_REVISION_RECORD: u8 = 0x01;
pub const TAG_TRANSACTION: u8 = 0x02;
pub const TAG_BLOCK_HEADER: u8 = 0x03;
pub const TAG_MERKLE_LEAF: u8 = 0x10;
pub const TAG_MERKLE_NODE: u8 = 0x11;

pub const MAX_WORK_ID_LEN: usize = 256;
pub const MAX_AUTHOR_ID_LEN: usize = 128;
pub const MAX_PROPOSER_ID_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("field `{field}` is {len} bytes, limit is {max}")]
    FieldTooLong { field: &'static str, len: usize, max: usize },
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(tag: u8) -> Encoder {
        Encoder { buf: vec![tag] }
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn bytes(&mut self, field: &'static str, b: &[u8], max: usize) -> Result<&mut Self, EncodeError> {
        if b.len() > max {
            return Err(EncodeError::FieldTooLong { field, len: b.len(), max });
        }
        self.buf.extend_from_slice(&(b.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(b);
        Ok(self)
    }

    pub fn count(&mut self, n: usize) -> &mut Self {
        self.buf.extend_from_slice(&(n as u32).to_be_bytes());
        self
    }

    /// Append a nested entity's full canonical bytes (including its tag).
    pub fn nested(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Entities with a canonical byte form.
pub trait CanonicalEncode {
    fn canonical_encode(&self) -> Result<Vec<u8>, EncodeError>;

    fn canonical_digest(&self) -> Result<Digest, EncodeError> {
        Ok(Digest::of(&self.canonical_encode()?))
    }
}
