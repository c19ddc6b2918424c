//! Canonical byte encoding.
//!
//! Fields are written in declaration order. Integers are big-endian,
//! variable-length fields (bytes, text, lists) carry a `u32` length prefix,
//! fixed-size values (digests, keys, signatures) are written raw. The decoder
//! is strict: trailing bytes and non-canonical tags are errors, which keeps
//! the encoding injective.

use thiserror::Error;

use crate::crypto::{Digest, PublicKey, Signature, DIGEST_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at offset {0}")]
    Eof(usize),
    #[error("invalid tag {tag} for {what}")]
    Tag { what: &'static str, tag: u8 },
    #[error("invalid utf-8 text at offset {0}")]
    Utf8(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("length {0} exceeds remaining input")]
    Length(u32),
}

#[derive(Default, Debug)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(u32::try_from(v.len()).expect("field larger than 4 GiB"));
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn key(&mut self, k: &PublicKey) -> &mut Self {
        self.buf.extend_from_slice(k.as_bytes());
        self
    }

    pub fn signature(&mut self, s: &Signature) -> &mut Self {
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        self.u32(u32::try_from(n).expect("list longer than u32::MAX"))
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.input.len() - self.pos < n {
            return Err(CodecError::Eof(self.pos));
        }
        let s = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::Tag { what: "bool", tag }),
        }
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let n = self.u32()?;
        if (self.input.len() - self.pos) < n as usize {
            return Err(CodecError::Length(n));
        }
        Ok(self.take(n as usize)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let at = self.pos;
        String::from_utf8(self.bytes()?).map_err(|_| CodecError::Utf8(at))
    }

    pub fn digest(&mut self) -> Result<Digest, CodecError> {
        Ok(Digest::from_bytes(self.take(DIGEST_LEN)?.try_into().expect("fixed")))
    }

    pub fn key(&mut self) -> Result<PublicKey, CodecError> {
        Ok(PublicKey::from_bytes(self.take(PUBLIC_KEY_LEN)?.try_into().expect("fixed")))
    }

    pub fn signature(&mut self) -> Result<Signature, CodecError> {
        Ok(Signature::from_bytes(self.take(SIGNATURE_LEN)?.try_into().expect("fixed")))
    }

    /// Reads a list length, rejecting counts that could not possibly fit in
    /// the remaining input (every element occupies at least one byte).
    pub fn count(&mut self) -> Result<usize, CodecError> {
        let n = self.u32()?;
        if n as usize > self.input.len() - self.pos {
            return Err(CodecError::Length(n));
        }
        Ok(n as usize)
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.input.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}
