//! Canonical binary encoding.
//!
//! Every structure that is hashed, signed, or written to disk goes through
//! this module so that there is exactly one byte representation per value.
//! Integers are big-endian. Variable-length fields carry a four-byte length
//! prefix. There is no padding and no alignment.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("input truncated at byte {0}")]
    Truncated(usize),
    #[error("length prefix {0} exceeds remaining input")]
    BadLength(u64),
    #[error("{0} trailing bytes after decode")]
    Trailing(usize),
    #[error("malformed field: {0}")]
    Malformed(&'static str),
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

/// Append-only buffer for canonical encoding.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Length-prefixed byte field.
    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    /// Raw bytes, no prefix. The field must be fixed-width by context.
    pub fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a canonical encoding.
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.data.len() - self.pos < n {
            return Err(WireError::Truncated(self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.u32()? as usize;
        if self.data.len() - self.pos < len {
            return Err(WireError::BadLength(len as u64));
        }
        self.take(len)
    }

    /// Fixed-width field of exactly `n` bytes.
    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    /// Succeeds only if the whole input was consumed.
    pub fn finish(self) -> Result<(), WireError> {
        let left = self.remaining();
        if left == 0 {
            Ok(())
        } else {
            Err(WireError::Trailing(left))
        }
    }
}

pub fn to_hex(b: &[u8]) -> String {
    hex::encode(b)
}

pub fn from_hex(s: &str) -> Result<Vec<u8>, WireError> {
    let s = s.trim();
    let s = s.strip_prefix("0x").unwrap_or(s);
    Ok(hex::decode(s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_scalars() {
        let mut w = Writer::new();
        w.u8(7);
        w.u32(0xdead_beef);
        w.u64(u64::MAX - 1);
        w.bytes(b"hello");
        w.bytes(b"");
        w.raw(&[1, 2, 3]);
        let buf = w.finish();

        let mut r = Reader::new(&buf);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 0xdead_beef);
        assert_eq!(r.u64().unwrap(), u64::MAX - 1);
        assert_eq!(r.bytes().unwrap(), b"hello");
        assert_eq!(r.bytes().unwrap(), b"");
        assert_eq!(r.raw(3).unwrap(), &[1, 2, 3]);
        r.finish().unwrap();
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut w = Writer::new();
        w.u64(42);
        let buf = w.finish();
        let mut r = Reader::new(&buf[..5]);
        assert!(matches!(r.u64(), Err(WireError::Truncated(_))));
    }

    #[test]
    fn oversized_length_prefix_is_an_error() {
        let mut w = Writer::new();
        w.u32(1000);
        w.raw(&[0; 4]);
        let buf = w.finish();
        let mut r = Reader::new(&buf);
        assert!(matches!(r.bytes(), Err(WireError::BadLength(1000))));
    }

    #[test]
    fn trailing_bytes_are_an_error() {
        let buf = [0u8; 3];
        let mut r = Reader::new(&buf);
        r.u8().unwrap();
        assert!(matches!(r.finish(), Err(WireError::Trailing(2))));
    }

    #[test]
    fn hex_roundtrip_accepts_0x_prefix() {
        assert_eq!(from_hex("0xDEADbeef").unwrap(), vec![0xde, 0xad, 0xbe, 0xef]);
        assert_eq!(to_hex(&[0xde, 0xad]), "dead");
        assert!(from_hex("xyz").is_err());
    }
}
