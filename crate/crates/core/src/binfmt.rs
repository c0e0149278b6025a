//! Little-endian 64-bit container helpers shared by every artifact file.
//!
//! Every file starts with an 8-byte magic tag followed by a `u64` format
//! version. All further header fields are `u64` or `f64`, and all payloads are
//! `f64`, each little-endian.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u64(FORMAT_VERSION);
        w
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    /// Row-major dump of a (column-major) matrix.
    pub fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    pub fn vector(&mut self, v: &DVector<f64>) {
        self.f64s(v.iter().copied());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor at the first header field.
    pub fn new(bytes: &'a [u8], magic: &[u8; 8], path: &'a Path) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(path, "file too short for header"));
        }
        if &bytes[..8] != magic {
            return Err(Error::format(
                path,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&bytes[..8])
                ),
            ));
        }
        let mut r = Reader {
            bytes,
            pos: 8,
            path,
        };
        let version = r.u64()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
            ));
        }
        Ok(r)
    }

    fn take8(&mut self) -> Result<[u8; 8]> {
        let end = self.pos + 8;
        if end > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let mut out = [0u8; 8];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take8()?))
    }

    /// A `u64` header field bounded by what the remaining payload could hold.
    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.bytes.len() as u64 {
            return Err(Error::format(self.path, format!("implausible size field {v}")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take8()?))
    }

    fn check_remaining(&self, count: usize) -> Result<()> {
        let need = count.checked_mul(8).unwrap_or(usize::MAX);
        if self.bytes.len() - self.pos < need {
            return Err(Error::format(
                self.path,
                format!("payload truncated: need {count} more values"),
            ));
        }
        Ok(())
    }

    pub fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        self.check_remaining(count)?;
        (0..count).map(|_| self.f64()).collect()
    }

    pub fn matrix(&mut self, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
        let data = self.f64s(nrows * ncols)?;
        Ok(DMatrix::from_row_slice(nrows, ncols, &data))
    }

    pub fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.f64s(len)?))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        self.path
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
