//! Little-endian binary encoding shared by checkpoints and archive matrices.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) struct Encoder<W: Write> {
    inner: W,
}

impl<W: Write> Encoder<W> {
    pub fn new(inner: W) -> Self {
        Encoder { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.put(b)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u128(&mut self, v: u128) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn bool(&mut self, v: bool) -> Result<()> {
        self.put(&[v as u8])
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.usize(s.len())?;
        self.put(s.as_bytes())
    }

    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.usize(v.len())?;
        for x in v {
            self.f64(*x)?;
        }
        Ok(())
    }

    pub fn usizes(&mut self, v: &[usize]) -> Result<()> {
        self.usize(v.len())?;
        for x in v {
            self.usize(*x)?;
        }
        Ok(())
    }

    /// Dimensions followed by column-major entries.
    pub fn matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.usize(m.nrows())?;
        self.usize(m.ncols())?;
        for x in m.iter() {
            self.f64(*x)?;
        }
        Ok(())
    }

    pub fn bool_matrix(&mut self, m: &DMatrix<bool>) -> Result<()> {
        self.usize(m.nrows())?;
        self.usize(m.ncols())?;
        let bytes: Vec<u8> = m.iter().map(|b| *b as u8).collect();
        self.put(&bytes)
    }
}

pub(crate) struct Decoder<R: Read> {
    inner: R,
}

impl<R: Read> Decoder<R> {
    pub fn new(inner: R) -> Self {
        Decoder { inner }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated or unreadable data: {e}")))?;
        Ok(buf)
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated or unreadable data: {e}")))?;
        Ok(buf)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take()?))
    }

    /// A length or count; anything above `1 << 40` is treated as corruption.
    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > 1 << 40 {
            return Err(Error::Checkpoint(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.take::<1>()?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint(format!("invalid boolean byte {b}"))),
        }
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.bytes(n)?)
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let (r, c) = (self.usize()?, self.usize()?);
        let data = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(r, c, data))
    }

    pub fn bool_matrix(&mut self) -> Result<DMatrix<bool>> {
        let (r, c) = (self.usize()?, self.usize()?);
        let data = self
            .bytes(r * c)?
            .into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Checkpoint(format!("invalid boolean byte {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(r, c, data))
    }

    /// True when no bytes remain.
    pub fn at_end(&mut self) -> bool {
        let mut probe = [0u8; 1];
        matches!(self.inner.read(&mut probe), Ok(0))
    }
}
