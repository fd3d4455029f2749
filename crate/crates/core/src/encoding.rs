//! Canonical byte encoding for every hashable domain value.
//!
//! Every hash in the system (block links, merkle leaves, pairing references,
//! rollover commitments) is computed over these bytes, so the encoding must be
//! identical across runs and platforms. Rules: struct fields in declared
//! order, integers as fixed-width 8-byte big-endian, byte strings and lists
//! prefixed with an 8-byte big-endian length/count, enum discriminants and
//! option flags as a single byte.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodingError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("invalid tag byte {tag} for {what} at offset {offset}")]
    InvalidTag { what: &'static str, tag: u8, offset: usize },
    #[error("length prefix {0} exceeds remaining input")]
    BadLength(u64),
    #[error("invalid utf-8 in string field")]
    BadUtf8,
    #[error("trailing bytes after decode: {0} left")]
    TrailingBytes(usize),
    #[error("value outside the closed encodable set: {0}")]
    UnencodableType(&'static str),
}

/// Types with a deterministic, injective (per type) byte representation.
pub trait Encodable: Sized {
    fn encode_into(&self, out: &mut Vec<u8>);

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError>;

    fn canonical_encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decode, requiring the input to be consumed exactly.
    fn canonical_decode(bytes: &[u8]) -> Result<Self, EncodingError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

/// Cursor over an input buffer being decoded.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], EncodingError> {
        if self.remaining() < n {
            return Err(EncodingError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn byte(&mut self) -> Result<u8, EncodingError> {
        Ok(self.take(1)?[0])
    }

    pub fn u64_be(&mut self) -> Result<u64, EncodingError> {
        let s = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(s);
        Ok(u64::from_be_bytes(a))
    }

    pub fn len_prefix(&mut self) -> Result<usize, EncodingError> {
        let n = self.u64_be()?;
        if n > self.remaining() as u64 {
            return Err(EncodingError::BadLength(n));
        }
        Ok(n as usize)
    }

    pub fn finish(&self) -> Result<(), EncodingError> {
        if self.remaining() != 0 {
            return Err(EncodingError::TrailingBytes(self.remaining()));
        }
        Ok(())
    }
}

impl Encodable for u64 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        r.u64_be()
    }
}

impl Encodable for i64 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let s = r.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(s);
        Ok(i64::from_be_bytes(a))
    }
}

impl Encodable for u32 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        (*self as u64).encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let v = r.u64_be()?;
        u32::try_from(v).map_err(|_| EncodingError::BadLength(v))
    }
}

impl Encodable for bool {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(EncodingError::InvalidTag { what: "bool", tag, offset }),
        }
    }
}

impl Encodable for Vec<u8> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode_into(out);
        out.extend_from_slice(self);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let n = r.len_prefix()?;
        Ok(r.take(n)?.to_vec())
    }
}

impl Encodable for String {
    fn encode_into(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode_into(out);
        out.extend_from_slice(self.as_bytes());
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let n = r.len_prefix()?;
        String::from_utf8(r.take(n)?.to_vec()).map_err(|_| EncodingError::BadUtf8)
    }
}

impl<T: Encodable> Encodable for Option<T> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_into(out);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(r)?)),
            tag => Err(EncodingError::InvalidTag { what: "option", tag, offset }),
        }
    }
}

// Vec<u8> is length-prefixed raw bytes; other element types get a count prefix.
macro_rules! encodable_vec {
    ($t:ty) => {
        impl Encodable for Vec<$t> {
            fn encode_into(&self, out: &mut Vec<u8>) {
                (self.len() as u64).encode_into(out);
                for item in self {
                    item.encode_into(out);
                }
            }

            fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
                let n = r.u64_be()?;
                let mut items = Vec::new();
                for _ in 0..n {
                    items.push(<$t>::decode_from(r)?);
                }
                Ok(items)
            }
        }
    };
}

encodable_vec!(u64);
encodable_vec!(i64);
encodable_vec!(String);
encodable_vec!(Vec<u8>);

impl<A: Encodable, B: Encodable> Encodable for (A, B) {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.0.encode_into(out);
        self.1.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok((A::decode_from(r)?, B::decode_from(r)?))
    }
}

impl<A: Encodable, B: Encodable> Encodable for Vec<(A, B)> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode_into(out);
        for item in self {
            item.encode_into(out);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let n = r.u64_be()?;
        let mut items = Vec::new();
        for _ in 0..n {
            items.push(<(A, B)>::decode_from(r)?);
        }
        Ok(items)
    }
}

/// Count-prefixed sequence helpers for composite types whose `Vec` impls
/// cannot be blanket-derived without colliding with the raw-bytes `Vec<u8>`.
pub fn encode_seq<T: Encodable>(items: &[T], out: &mut Vec<u8>) {
    (items.len() as u64).encode_into(out);
    for item in items {
        item.encode_into(out);
    }
}

pub fn decode_seq<T: Encodable>(r: &mut Reader<'_>) -> Result<Vec<T>, EncodingError> {
    let n = r.u64_be()?;
    let mut items = Vec::new();
    for _ in 0..n {
        items.push(T::decode_from(r)?);
    }
    Ok(items)
}

/// Maps encode as count-prefixed key/value pairs in key order, which the
/// `BTreeMap` iterator already guarantees.
impl<K: Encodable + Ord, V: Encodable> Encodable for std::collections::BTreeMap<K, V> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode_into(out);
        for (k, v) in self {
            k.encode_into(out);
            v.encode_into(out);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let n = r.u64_be()?;
        let mut map = std::collections::BTreeMap::new();
        for _ in 0..n {
            let k = K::decode_from(r)?;
            let v = V::decode_from(r)?;
            map.insert(k, v);
        }
        Ok(map)
    }
}
