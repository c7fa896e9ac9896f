//! Float images, depth maps, masks and their file formats.
//!
//! Depth raster (`.depth`), little-endian: `"DPTH"`, `u32 width`,
//! `u32 height`, then `width * height` f32 values in row-major order.
//! A value of 0 means no surface.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("depth file: {0}")]
    Depth(String),
    #[error(transparent)]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// RGB image, row-major, channels interleaved, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::Shape(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Bilinear sample at continuous pixel coordinates where pixel centers
    /// sit on integers. Coordinates are clamped to the image. Coordinates
    /// within 1e-6 of an integer snap to it, so integer lookups are exact.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let snap = |v: f64| if (v - v.round()).abs() < 1e-6 { v.round() } else { v };
        let x = snap(x).clamp(0.0, (self.width - 1) as f64);
        let y = snap(y).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        if fx == 0.0 && fy == 0.0 {
            return self.get(x0, y0);
        }
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bot - top) * fy;
        }
        out
    }

    pub fn sample_nearest(&self, x: f64, y: f64) -> [f32; 3] {
        let xi = (x.round().max(0.0) as usize).min(self.width - 1);
        let yi = (y.round().max(0.0) as usize).min(self.height - 1);
        self.get(xi, yi)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
        })
    }

    /// Box-filter reduction by an integer factor; trailing partial blocks
    /// are dropped.
    pub fn downsample(&self, factor: usize) -> Image {
        assert!(factor >= 1);
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        Image::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = self.get(x * factor + dx, y * factor + dy);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            acc.map(|v| v * norm)
        })
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(path, &self.to_rgb8(), self.width as u32, self.height as u32, image::ColorType::Rgb8)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb32f();
        Ok(Self { width: img.width() as usize, height: img.height() as usize, data: img.into_raw() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(b"DPTH");
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != b"DPTH" {
            return Err(ImageError::Depth("bad header".into()));
        }
        let width = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        if buf.len() != 12 + 4 * width * height {
            return Err(ImageError::Depth(format!(
                "expected {} bytes for {width}x{height}, found {}",
                12 + 4 * width * height,
                buf.len()
            )));
        }
        let data = buf[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { width, height, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Mask { width: self.width, height: self.height, data }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::save_buffer(path, &buf, self.width as u32, self.height as u32, image::ColorType::L8)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self { width: w, height: h, data: img.into_raw().into_iter().map(|v| v >= 128).collect() })
    }
}
