//! Canonical byte serialization.
//!
//! Every structure that is signed, bound into associated data, or hashed into
//! the audit chain is rendered as a sequence of fields. Each field is a 4-byte
//! big-endian length followed by exactly that many bytes. There is no padding,
//! no alignment and no terminator; field order is fixed by the caller. Integers
//! are written as 8-byte big-endian fields. See `docs/FORMATS.md`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("input truncated while reading field {0}")]
    Truncated(usize),
    #[error("field {field} has invalid length {len}")]
    BadLength { field: usize, len: usize },
    #[error("unexpected tag {found:?}, expected {expected:?}")]
    BadTag { expected: String, found: String },
    #[error("field {0} is not valid UTF-8")]
    Utf8(usize),
    #[error("{0} trailing bytes after last field")]
    Trailing(usize),
    #[error("field {0} holds an invalid value")]
    Invalid(usize),
}

#[derive(Debug, Default, Clone)]
pub struct CanonicalWriter {
    buf: Vec<u8>,
}

impl CanonicalWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: &str) -> Self {
        let mut w = Self::new();
        w.str(tag);
        w
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("canonical field exceeds 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.bytes(&[u8::from(v)])
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct CanonicalReader<'a> {
    rest: &'a [u8],
    index: usize,
}

impl<'a> CanonicalReader<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self {
            rest: input,
            index: 0,
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        if self.rest.len() < 4 {
            return Err(CodecError::Truncated(self.index));
        }
        let (len, rest) = self.rest.split_at(4);
        let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
        if rest.len() < len {
            return Err(CodecError::Truncated(self.index));
        }
        let (field, rest) = rest.split_at(len);
        self.rest = rest;
        self.index += 1;
        Ok(field)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let index = self.index;
        let field = self.bytes()?;
        field.try_into().map_err(|_| CodecError::BadLength {
            field: index,
            len: field.len(),
        })
    }

    pub fn str(&mut self) -> Result<&'a str, CodecError> {
        let index = self.index;
        std::str::from_utf8(self.bytes()?).map_err(|_| CodecError::Utf8(index))
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        self.str().map(str::to_owned)
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        self.array::<8>().map(u64::from_be_bytes)
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        let index = self.index;
        match self.array::<1>()? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(CodecError::Invalid(index)),
        }
    }

    pub fn expect_tag(&mut self, tag: &str) -> Result<(), CodecError> {
        let found = self.str()?;
        if found != tag {
            return Err(CodecError::BadTag {
                expected: tag.to_owned(),
                found: found.to_owned(),
            });
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(CodecError::Trailing(self.rest.len()))
        }
    }
}
