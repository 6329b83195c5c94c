//! Little-endian framing shared by the binary file formats.
//!
//! Every file starts with a 4-byte magic and a `u32` format version.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], version: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LE>(version)?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(
    r: &mut R,
    kind: &'static str,
    magic: &[u8; 4],
    version: u32,
) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)
        .map_err(|_| Error::format(kind, "file too short for a header"))?;
    if &found != magic {
        return Err(Error::format(kind, format!("bad magic {found:?}")));
    }
    let v = r.read_u32::<LE>().map_err(|e| truncated(kind, e))?;
    if v != version {
        return Err(Error::Version {
            kind,
            found: v,
            expected: version,
        });
    }
    Ok(())
}

pub(crate) fn truncated(kind: &'static str, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format(kind, "unexpected end of file")
    } else {
        Error::Io(e)
    }
}

/// Reader that tags EOF errors with the file kind.
pub(crate) struct Decoder<R> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> Decoder<R> {
    pub(crate) fn new(inner: R, kind: &'static str) -> Self {
        Self { inner, kind }
    }

    pub(crate) fn kind(&self) -> &'static str {
        self.kind
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        self.inner.read_u8().map_err(|e| truncated(self.kind, e))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.inner.read_u32::<LE>().map_err(|e| truncated(self.kind, e))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.inner.read_u64::<LE>().map_err(|e| truncated(self.kind, e))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.inner.read_f64::<LE>().map_err(|e| truncated(self.kind, e))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = vec![0f32; n];
        self.inner
            .read_f32_into::<LE>(&mut out)
            .map_err(|e| truncated(self.kind, e))?;
        Ok(out)
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0f64; n];
        self.inner
            .read_f64_into::<LE>(&mut out)
            .map_err(|e| truncated(self.kind, e))?;
        Ok(out)
    }

    /// Length prefix with a sanity bound so corrupt files fail instead of allocating.
    pub(crate) fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > (1 << 40) {
            return Err(Error::format(self.kind, format!("implausible {what} count {n}")));
        }
        Ok(n as usize)
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(self.kind, "trailing bytes after payload")),
        }
    }
}

pub(crate) struct Encoder<W> {
    inner: W,
}

impl<W: Write> Encoder<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner }
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_u8(v)?)
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_u32::<LE>(v)?)
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.inner.write_u64::<LE>(v)?)
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_f64::<LE>(v)?)
    }

    pub(crate) fn f32(&mut self, v: f32) -> Result<()> {
        Ok(self.inner.write_f32::<LE>(v)?)
    }

    pub(crate) fn len(&mut self, n: usize) -> Result<()> {
        self.u64(n as u64)
    }

    pub(crate) fn into_inner(self) -> W {
        self.inner
    }
}
