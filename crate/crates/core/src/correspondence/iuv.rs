//! `IUV1` file: magic, `u32` H, `u32` W, `H*W` part bytes, then `H*W` pairs
//! of `f32` (u, v); all little-endian, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::IoContext;
use crate::{Error, Result};

pub const IUV_MAGIC: &[u8; 4] = b"IUV1";

/// Per-pixel part id (0 = background) and surface coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IuvImage {
    height: usize,
    width: usize,
    part: Vec<u8>,
    uv: Vec<[f32; 2]>,
}

impl IuvImage {
    /// All-background image.
    pub fn new(height: usize, width: usize) -> Self {
        IuvImage {
            height,
            width,
            part: vec![0; height * width],
            uv: vec![[0.0; 2]; height * width],
        }
    }

    pub fn from_raw(height: usize, width: usize, part: Vec<u8>, uv: Vec<[f32; 2]>) -> Result<Self> {
        let n = height * width;
        if part.len() != n || uv.len() != n {
            return Err(Error::Shape(format!(
                "iuv {height}x{width} needs {n} pixels, got {} parts and {} uv",
                part.len(),
                uv.len()
            )));
        }
        for (idx, (&p, c)) in part.iter().zip(&uv).enumerate() {
            if !c.iter().all(|x| (0.0..=1.0).contains(x)) {
                return Err(Error::Invalid(format!("pixel {idx} uv {c:?} outside [0,1]")));
            }
            if p == 0 && *c != [0.0, 0.0] {
                return Err(Error::Invalid(format!("background pixel {idx} carries uv {c:?}")));
            }
        }
        Ok(IuvImage { height, width, part, uv })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn parts(&self) -> &[u8] {
        &self.part
    }

    pub fn uvs(&self) -> &[[f32; 2]] {
        &self.uv
    }

    #[inline]
    pub fn part_at(&self, idx: usize) -> u8 {
        self.part[idx]
    }

    #[inline]
    pub fn uv_at(&self, idx: usize) -> [f32; 2] {
        self.uv[idx]
    }

    /// 0-based `(row, col)` lookup.
    pub fn get(&self, row: usize, col: usize) -> (u8, [f32; 2]) {
        let idx = row * self.width + col;
        (self.part[idx], self.uv[idx])
    }

    /// Sets a pixel; uv is clamped to `[0,1]` and zeroed on background.
    pub fn set(&mut self, row: usize, col: usize, part: u8, u: f64, v: f64) {
        let idx = row * self.width + col;
        self.part[idx] = part;
        self.uv[idx] = if part == 0 {
            [0.0; 2]
        } else {
            [u.clamp(0.0, 1.0) as f32, v.clamp(0.0, 1.0) as f32]
        };
    }

    pub fn max_part(&self) -> u8 {
        self.part.iter().copied().max().unwrap_or(0)
    }

    pub fn foreground_count(&self) -> usize {
        self.part.iter().filter(|&&p| p != 0).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).at(path)?);
        write_iuv(&mut w, self)?;
        w.flush().at(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_iuv(&mut BufReader::new(File::open(path).at(path)?))
    }
}

pub fn write_iuv<W: Write>(w: &mut W, img: &IuvImage) -> Result<()> {
    w.write_all(IUV_MAGIC)?;
    w.write_all(&(img.height as u32).to_le_bytes())?;
    w.write_all(&(img.width as u32).to_le_bytes())?;
    w.write_all(&img.part)?;
    let mut buf = Vec::with_capacity(img.uv.len() * 8);
    for c in &img.uv {
        buf.extend_from_slice(&c[0].to_le_bytes());
        buf.extend_from_slice(&c[1].to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_iuv<R: Read>(r: &mut R) -> Result<IuvImage> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..4] != IUV_MAGIC {
        return Err(Error::Format(format!("bad iuv magic {:?}", &head[..4])));
    }
    let h = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let n = h
        .checked_mul(w)
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| Error::Format(format!("implausible iuv size {h}x{w}")))?;
    let mut part = vec![0u8; n];
    r.read_exact(&mut part)?;
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    let uv = buf
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            ]
        })
        .collect();
    IuvImage::from_raw(h, w, part, uv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_size() {
        let mut img = IuvImage::new(2, 3);
        img.set(1, 2, 4, 0.5, 0.25);
        let mut buf = Vec::new();
        write_iuv(&mut buf, &img).unwrap();
        assert_eq!(&buf[..4], b"IUV1");
        assert_eq!(buf.len(), 12 + 6 + 6 * 8);
        assert_eq!(buf[12 + 5], 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_iuv(&mut &b"IUV2\0\0\0\0\0\0\0\0"[..]).is_err());
        assert!(IuvImage::from_raw(1, 1, vec![0], vec![[0.5, 0.0]]).is_err());
        assert!(IuvImage::from_raw(1, 1, vec![1], vec![[1.5, 0.0]]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_lossless(h in 1usize..6, w in 1usize..6, seed in proptest::collection::vec((0u8..5, 0f32..=1.0, 0f32..=1.0), 36)) {
            let mut img = IuvImage::new(h, w);
            for r in 0..h {
                for c in 0..w {
                    let (p, u, v) = seed[r * 6 + c];
                    img.set(r, c, p, u as f64, v as f64);
                }
            }
            let mut buf = Vec::new();
            write_iuv(&mut buf, &img).unwrap();
            prop_assert_eq!(read_iuv(&mut buf.as_slice()).unwrap(), img);
        }
    }
}
