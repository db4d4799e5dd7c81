//! Little-endian binary containers: `.sino` (PGSN) and `.imgpair` (PGIP).

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{format_err, Error, Result};
use crate::forward::{Bounds, ImagePair, Sinogram};

pub const SINO_MAGIC: &[u8; 4] = b"PGSN";
pub const IMGPAIR_MAGIC: &[u8; 4] = b"PGIP";
pub const FORMAT_VERSION: u32 = 1;

/// Cursor over a byte buffer with format-error reporting.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return format_err(format!("{}: truncated file", self.what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.buf.len() < 4 || &self.buf[..4] != magic {
            return format_err(format!("{}: bad magic", self.what));
        }
        self.pos = 4;
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("{}: size overflow", self.what)))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn version(&mut self) -> Result<u32> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return format_err(format!("{}: unsupported version {v}", self.what));
        }
        Ok(v)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return format_err(format!("{}: {} trailing bytes", self.what, self.buf.len() - self.pos));
        }
        Ok(())
    }
}

pub fn put_f64s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f64>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn encode_sino(s: &Sinogram) -> Vec<u8> {
    let (no, na) = s.y.dim();
    let mut out = Vec::with_capacity(24 + 8 * no * na);
    out.extend_from_slice(SINO_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(no as u32).to_le_bytes());
    out.extend_from_slice(&(na as u32).to_le_bytes());
    out.extend_from_slice(&s.grid_hash.to_le_bytes());
    put_f64s(&mut out, s.y.iter().copied());
    out
}

pub fn decode_sino(buf: &[u8]) -> Result<Sinogram> {
    let mut r = Reader::new(buf, "sinogram");
    r.magic(SINO_MAGIC)?;
    r.version()?;
    let no = r.u32()? as usize;
    let na = r.u32()? as usize;
    let grid_hash = r.u64()?;
    let vals = r.f64s(no * na)?;
    r.finish()?;
    Ok(Sinogram { y: Array2::from_shape_vec((no, na), vals).unwrap(), grid_hash })
}

pub fn write_sino(path: &Path, s: &Sinogram) -> Result<()> {
    write_atomic(path, &encode_sino(s))
}

pub fn read_sino(path: &Path) -> Result<Sinogram> {
    decode_sino(&fs::read(path)?)
}

pub fn encode_imgpair(u: &ImagePair) -> Vec<u8> {
    let n = u.n();
    let mut out = Vec::with_capacity(12 + 16 * n * n);
    out.extend_from_slice(IMGPAIR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    put_f64s(&mut out, u.lambda.iter().copied());
    put_f64s(&mut out, u.mu.iter().copied());
    out
}

pub fn decode_imgpair(buf: &[u8], bounds: Bounds) -> Result<ImagePair> {
    let mut r = Reader::new(buf, "image pair");
    r.magic(IMGPAIR_MAGIC)?;
    r.version()?;
    let n = r.u32()? as usize;
    let l = r.f64s(n * n)?;
    let m = r.f64s(n * n)?;
    r.finish()?;
    Ok(ImagePair {
        lambda: Array2::from_shape_vec((n, n), l).unwrap(),
        mu: Array2::from_shape_vec((n, n), m).unwrap(),
        bounds,
    })
}

pub fn write_imgpair(path: &Path, u: &ImagePair) -> Result<()> {
    write_atomic(path, &encode_imgpair(u))
}

pub fn read_imgpair(path: &Path, bounds: Bounds) -> Result<ImagePair> {
    decode_imgpair(&fs::read(path)?, bounds)
}
