//! Little-endian f32 matrix container shared by the embedding (`PDE1`) and
//! optimizer-state (`PDS1`) files.
//!
//! Layout: 4 magic bytes, u32 `count`, u32 `dim`, then one or more
//! `count × dim` row-major f32 matrices, then an optional trailer.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"PDE1";
pub const OPTIMIZER_MAGIC: [u8; 4] = *b"PDS1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("matrix too large: {count} x {dim}")]
    TooLarge { count: usize, dim: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub count: usize,
    pub dim: usize,
}

impl Header {
    pub fn matrix_len(&self) -> usize {
        self.count * self.dim
    }
}

pub fn write_header<W: Write>(w: &mut W, magic: [u8; 4], header: Header) -> Result<(), FormatError> {
    let count = u32::try_from(header.count).map_err(|_| FormatError::TooLarge {
        count: header.count,
        dim: header.dim,
    })?;
    let dim = u32::try_from(header.dim).map_err(|_| FormatError::TooLarge {
        count: header.count,
        dim: header.dim,
    })?;
    w.write_all(&magic)?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    Ok(())
}

/// Writes values as f32. Values are expected to already lie on the f32 grid;
/// anything finer is rounded to nearest.
pub fn write_matrix<W: Write>(w: &mut W, values: &[f64]) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Cursor over an in-memory file body with truncation-aware reads.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::TruncatedFile {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn header(&mut self, magic: [u8; 4]) -> Result<Header, FormatError> {
        if self.bytes.len() < 4 {
            return Err(FormatError::TruncatedFile {
                expected: 12,
                found: self.bytes.len(),
            });
        }
        let mut found = [0u8; 4];
        found.copy_from_slice(self.take(4)?);
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found });
        }
        let count = self.u32()? as usize;
        let dim = self.u32()? as usize;
        Ok(Header { count, dim })
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        b.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(b))
    }

    pub fn matrix(&mut self, header: Header) -> Result<Vec<f64>, FormatError> {
        let n = header.matrix_len();
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    pub fn finish(self) -> Result<(), FormatError> {
        let rest = self.bytes.len() - self.pos;
        if rest != 0 {
            return Err(FormatError::TrailingBytes(rest));
        }
        Ok(())
    }
}

pub fn read_all<R: Read>(mut r: R) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Rounds a value onto the f32 grid so that it survives a save/load cycle.
#[inline]
pub fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}
