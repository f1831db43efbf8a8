//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ToyImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_pgm())
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Dataset(format!("bad PGM: {m}"));
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not P5"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("dimension"));
        let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        let raster = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
        if raster.len() != w * h {
            return Err(bad("raster size"));
        }
        Self::new(w, h, raster.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let img = ToyImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(ToyImage::from_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_non_p5() {
        assert!(ToyImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
