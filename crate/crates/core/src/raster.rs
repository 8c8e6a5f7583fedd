//! Single-channel float rasters and 8-bit image IO.
//!
//! Float raster layout (little endian):
//!
//! ```text
//! magic   8 bytes "LSRASTER"
//! width   u32
//! height  u32
//! values  f32 * width * height, row-major
//! ```
//!
//! Visibility maps and depth rasters share this layout.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use thiserror::Error;

pub const RASTER_MAGIC: &[u8; 8] = b"LSRASTER";
pub const RASTER_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster: bad magic")]
    BadMagic,
    #[error("raster: expected {expected} bytes, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("size mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::DimensionMismatch(format!(
                "{} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RASTER_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(RASTER_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < RASTER_HEADER_LEN {
            return Err(RasterError::BadLength {
                expected: RASTER_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if &bytes[..8] != RASTER_MAGIC {
            return Err(RasterError::BadMagic);
        }
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let expected = RASTER_HEADER_LEN + 4 * width as usize * height as usize;
        if bytes.len() != expected {
            return Err(RasterError::BadLength {
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes[RASTER_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Three-channel float image in planar (channel, row, column) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image3 {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image3 {
    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let plane = width as usize * height as usize;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Self { width, height, data }
    }

    pub fn from_planes(planes: [&[f32]; 3], width: u32, height: u32) -> Result<Self, RasterError> {
        let plane = width as usize * height as usize;
        if planes.iter().any(|p| p.len() != plane) {
            return Err(RasterError::DimensionMismatch("planes differ from image size".into()));
        }
        Ok(Self {
            width,
            height,
            data: planes.concat(),
        })
    }

    fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = y as usize * self.width as usize + x as usize;
        let n = self.plane_len();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = y as usize * self.width as usize + x as usize;
        let n = self.plane_len();
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * n + i] = v;
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut out = Self::filled(w, h, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            out.set_pixel(x, y, p.0.map(|c| f32::from(c) / 255.0));
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| {
            image::Rgb(self.pixel(x, y).map(quantize))
        })
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        write_rgb_png(path, &self.to_rgb8())
    }
}

/// `[0, 1]` to 8 bits, `round(255 v)` with clamping.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_gray_png(path: impl AsRef<Path>, img: &GrayImage) -> Result<(), RasterError> {
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), RasterError> {
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn read_gray_png(path: impl AsRef<Path>) -> Result<GrayImage, RasterError> {
    Ok(image::open(path)?.to_luma8())
}
