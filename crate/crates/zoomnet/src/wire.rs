//! Little-endian primitives shared by the binary formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Reader<R> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R, kind: &'static str) -> Self {
        Reader { inner, kind }
    }

    pub(crate) fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.kind, format!("truncated: {e}")))?;
        Ok(buf)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.kind, format!("truncated: {e}")))?;
        Ok(buf)
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.vec(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }

    /// `u32` length followed by UTF-8 JSON.
    pub(crate) fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let raw = self.vec(len)?;
        Ok(serde_json::from_slice(&raw)?)
    }

    pub(crate) fn expect_end(mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.inner.read(&mut rest) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format(self.kind, "trailing bytes")),
            Err(e) => Err(Error::format(self.kind, e.to_string())),
        }
    }
}

impl Reader<&[u8]> {
    pub(crate) fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }
}

pub(crate) fn put_json<T: serde::Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    let raw = serde_json::to_vec(value)?;
    out.extend_from_slice(&len_u32(raw.len(), "json block")?.to_le_bytes());
    out.extend_from_slice(&raw);
    Ok(())
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn len_u32(n: usize, what: &'static str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(what, format!("{n} does not fit in 32 bits")))
}

pub(crate) fn len_u16(n: usize, what: &'static str) -> Result<u16> {
    u16::try_from(n).map_err(|_| Error::format(what, format!("{n} does not fit in 16 bits")))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(bytes).map_err(Error::io(path))
}
