//! Pixel grids and their on-disk formats.
//!
//! Images are H×W row-major grids of `f64` intensities, by convention in
//! [0, 1]. Two formats are supported: binary 8-bit PGM (P5) for viewing and
//! a lossless float container (magic `LDEMF32`, big-endian-free: u32 height,
//! u32 width, then row-major little-endian f32).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const F32_MAGIC: &[u8; 7] = b"LDEMF32";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "image data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    /// Single 1.0 at (row, col), zeros elsewhere.
    pub fn delta(height: usize, width: usize, row: usize, col: usize) -> Self {
        let mut img = Self::zeros(height, width);
        img.set(row, col, 1.0);
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Periodic (wrap-around) lookup; indices may be negative.
    #[inline]
    pub fn get_periodic(&self, row: i64, col: i64) -> f64 {
        let r = row.rem_euclid(self.height as i64) as usize;
        let c = col.rem_euclid(self.width as i64) as usize;
        self.get(r, c)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn from_vector(height: usize, width: usize, v: &DVector<f64>) -> Result<Self> {
        Self::new(height, width, v.as_slice().to_vec())
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("image shapes differ".into()));
        }
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Image {
        self.map(|x| c * x)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.data.len() + 32);
        out.extend_from_slice(format!("P5\n{} {}\n255\n", self.width, self.height).as_bytes());
        for &v in &self.data {
            let q = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            out.push(q);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cursor = 0usize;
        let mut fields = Vec::new();
        // header: magic, width, height, maxval; '#' starts a comment line
        while fields.len() < 4 && cursor < bytes.len() {
            while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if cursor < bytes.len() && bytes[cursor] == b'#' {
                while cursor < bytes.len() && bytes[cursor] != b'\n' {
                    cursor += 1;
                }
                continue;
            }
            let start = cursor;
            while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            fields.push(&bytes[start..cursor]);
        }
        if fields.len() < 4 || fields[0] != b"P5" {
            return Err(Error::Parse("not a binary PGM (P5) file".into()));
        }
        let width: usize = parse_ascii(fields[1])?;
        let height: usize = parse_ascii(fields[2])?;
        let maxval: usize = parse_ascii(fields[3])?;
        if maxval != 255 {
            return Err(Error::Parse(format!("unsupported PGM maxval {maxval}")));
        }
        cursor += 1; // single whitespace after maxval
        let need = width * height;
        if bytes.len() < cursor + need {
            return Err(Error::Parse("PGM pixel data truncated".into()));
        }
        let data = bytes[cursor..cursor + need]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        Image::new(height, width, data)
    }

    pub fn write_f32(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(F32_MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_f32(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != F32_MAGIC {
            return Err(Error::Parse("bad LDEMF32 magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let height = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let width = u32::from_le_bytes(u32buf) as usize;
        let mut data = Vec::with_capacity(height * width);
        let mut f32buf = [0u8; 4];
        for _ in 0..height * width {
            r.read_exact(&mut f32buf)?;
            data.push(f64::from(f32::from_le_bytes(f32buf)));
        }
        Image::new(height, width, data)
    }
}

fn parse_ascii(bytes: &[u8]) -> Result<usize> {
    std::str::from_utf8(bytes)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("bad integer in PGM header".into()))
}
