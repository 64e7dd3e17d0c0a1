//! 8-bit RGB images, PNG I/O and PSNR.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("pixel buffer of {got} bytes does not match {width}x{height} RGB")]
    BadBuffer { width: u32, height: u32, got: usize },
    #[error("crop rectangle {0:?} outside {1}x{2} image")]
    CropOutOfBounds(CropRect, u32, u32),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

/// Row-major 8-bit RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(ImageError::BadBuffer { width, height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> Result<(), ImageError> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(ImageError::DimensionMismatch(self.width, self.height, other.width, other.height))
        }
    }

    /// Channel planes as `f64`.
    pub fn planes(&self) -> [Vec<f64>; 3] {
        let mut planes: [Vec<f64>; 3] = Default::default();
        for (c, plane) in planes.iter_mut().enumerate() {
            *plane = self.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect();
        }
        planes
    }

    /// Rebuilds an image from real-valued planes, rounding and clamping.
    pub fn from_planes(width: u32, height: u32, planes: &[Vec<f64>; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = vec![0u8; n * 3];
        for (c, plane) in planes.iter().enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                data[p * 3 + c] = to_u8(v);
            }
        }
        Self { width, height, data }
    }

    pub fn crop(&self, rect: CropRect) -> Result<Image, ImageError> {
        if rect.width == 0
            || rect.height == 0
            || rect.x.checked_add(rect.width).is_none_or(|r| r > self.width)
            || rect.y.checked_add(rect.height).is_none_or(|b| b > self.height)
        {
            return Err(ImageError::CropOutOfBounds(rect, self.width, self.height));
        }
        Ok(Image::from_fn(rect.width, rect.height, |x, y| self.pixel(rect.x + x, rect.y + y)))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w, height: h, data: img.into_raw() })
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w, height: h, data: img.into_raw() })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(out.into_inner())
    }
}

/// Rounds half away from zero and clamps to `[0, 255]`.
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Peak signal-to-noise ratio in dB over all channels; `+∞` for identical images.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64, ImageError> {
    reference.same_size(test)?;
    let sse: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / reference.data.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}
