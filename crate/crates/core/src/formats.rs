//! Little-endian binary containers for gridded fields, sinograms and boundary records.
//!
//! Every file starts with a 4-byte magic and a `u32` version. Writes go to a temporary file in the
//! target directory which is then renamed into place.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Point;

pub const GRID_MAGIC: &[u8; 4] = b"SRGD";
pub const SINO_MAGIC: &[u8; 4] = b"SRSN";
pub const DN_MAGIC: &[u8; 4] = b"SRDN";
pub const VERSION: u32 = 1;

pub(crate) struct Writer(Vec<u8>);

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(VERSION);
        w
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(Error::Format(format!("expected magic {:?}", String::from_utf8_lossy(magic))));
        }
        let mut r = Reader { buf, pos: 4 };
        let v = r.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Write `bytes` to `path` atomically (temporary file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// A vector-valued field sampled on a uniform `nx × ny` grid over a bounding box.
///
/// Samples are stored component-major, then row-major (`y` index slowest within a component).
#[derive(Clone, Debug, PartialEq)]
pub struct GridData {
    pub nx: usize,
    pub ny: usize,
    pub ncomp: usize,
    /// `[xmin, xmax, ymin, ymax]`
    pub bbox: [f64; 4],
    pub data: Vec<f64>,
}

impl GridData {
    pub fn new(nx: usize, ny: usize, ncomp: usize, bbox: [f64; 4]) -> Self {
        Self { nx, ny, ncomp, bbox, data: vec![0.0; nx * ny * ncomp] }
    }

    /// Sample `f` at the grid nodes.
    pub fn sample(nx: usize, ny: usize, ncomp: usize, bbox: [f64; 4], f: impl Fn(&Point) -> Vec<f64>) -> Self {
        let mut g = Self::new(nx, ny, ncomp, bbox);
        for j in 0..ny {
            for i in 0..nx {
                let v = f(&g.node(i, j));
                for (c, vc) in v.iter().enumerate().take(ncomp) {
                    let k = g.index(c, i, j);
                    g.data[k] = *vc;
                }
            }
        }
        g
    }

    pub fn dx(&self) -> f64 {
        (self.bbox[1] - self.bbox[0]) / (self.nx - 1) as f64
    }
    pub fn dy(&self) -> f64 {
        (self.bbox[3] - self.bbox[2]) / (self.ny - 1) as f64
    }
    pub fn node(&self, i: usize, j: usize) -> Point {
        Point::new(self.bbox[0] + i as f64 * self.dx(), self.bbox[2] + j as f64 * self.dy())
    }
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.ny + j) * self.nx + i
    }
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    /// Cubic convolution (Keys, a = -1/2) interpolation; indices are clamped at the edges.
    pub fn interp(&self, x: &Point) -> Vec<f64> {
        let fx = ((x[0] - self.bbox[0]) / self.dx()).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((x[1] - self.bbox[2]) / self.dy()).clamp(0.0, (self.ny - 1) as f64);
        let (i0, j0) = ((fx.floor() as usize).min(self.nx - 2), (fy.floor() as usize).min(self.ny - 2));
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let wx = keys_weights(tx);
        let wy = keys_weights(ty);
        let clamp = |k: isize, n: usize| k.clamp(0, n as isize - 1) as usize;
        (0..self.ncomp)
            .map(|c| {
                let mut s = 0.0;
                for (b, wyb) in wy.iter().enumerate() {
                    let j = clamp(j0 as isize + b as isize - 1, self.ny);
                    for (a, wxa) in wx.iter().enumerate() {
                        let i = clamp(i0 as isize + a as isize - 1, self.nx);
                        s += wxa * wyb * self.get(c, i, j);
                    }
                }
                s
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(GRID_MAGIC);
        w.u32(self.nx as u32);
        w.u32(self.ny as u32);
        w.u32(self.ncomp as u32);
        w.f64s(&self.bbox);
        w.f64s(&self.data);
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, GRID_MAGIC)?;
        let nx = r.u32()? as usize;
        let ny = r.u32()? as usize;
        let ncomp = r.u32()? as usize;
        if nx < 2 || ny < 2 || ncomp == 0 {
            return Err(Error::Format(format!("degenerate grid {nx}x{ny}x{ncomp}")));
        }
        let b = r.f64s(4)?;
        let data = r.f64s(nx * ny * ncomp)?;
        r.finish()?;
        Ok(Self { nx, ny, ncomp, bbox: [b[0], b[1], b[2], b[3]], data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read_path(path: &str) -> Result<Self> {
        Self::from_bytes(&read_all(Path::new(path))?)
    }
}

fn keys_weights(t: f64) -> [f64; 4] {
    let k = |s: f64| {
        let s = s.abs();
        if s <= 1.0 {
            1.5 * s * s * s - 2.5 * s * s + 1.0
        } else if s < 2.0 {
            -0.5 * s * s * s + 2.5 * s * s - 4.0 * s + 2.0
        } else {
            0.0
        }
    };
    [k(t + 1.0), k(t), k(1.0 - t), k(2.0 - t)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrip_is_bit_exact() {
        let g = GridData::sample(7, 5, 2, [-1.0, 1.0, -0.5, 0.5], |p| vec![p[0].sin(), p[0] * p[1]]);
        let h = GridData::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn cubic_interpolation_reproduces_quadratics() {
        let g = GridData::sample(21, 21, 1, [-1.0, 1.0, -1.0, 1.0], |p| vec![p[0] * p[0] - 2.0 * p[0] * p[1] + 3.0]);
        for p in [Point::new(0.13, -0.41), Point::new(-0.77, 0.52)] {
            let exact = p[0] * p[0] - 2.0 * p[0] * p[1] + 3.0;
            assert!((g.interp(&p)[0] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let g = GridData::new(3, 3, 1, [0.0, 1.0, 0.0, 1.0]);
        let b = g.to_bytes();
        assert!(GridData::from_bytes(&b[..b.len() - 3]).is_err());
        assert!(GridData::from_bytes(b"XXXX\x01\0\0\0").is_err());
    }
}
