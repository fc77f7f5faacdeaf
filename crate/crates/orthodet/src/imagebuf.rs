//! Grayscale image buffer used throughout the pipeline.
//!
//! Panoramic radiographs are monochrome; RGB-encoded files are collapsed to
//! luma on load. Intensities are kept normalized in `[0, 1]`.

use std::path::Path;

use image::ImageReader;

use crate::error::{Error, Result};
use crate::Scalar;

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates; zero outside.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> T {
        if x < -1.0 || y < -1.0 || x > self.width as f64 || y > self.height as f64 {
            return T::zero();
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = T::from_f64_lossy(x - x0);
        let fy = T::from_f64_lossy(y - y0);
        let one = T::one();
        let px = |ix: i64, iy: i64| -> T {
            if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
                T::zero()
            } else {
                self.get(ix as usize, iy as usize)
            }
        };
        let (ix, iy) = (x0 as i64, y0 as i64);
        let top = px(ix, iy) * (one - fx) + px(ix + 1, iy) * fx;
        let bottom = px(ix, iy + 1) * (one - fx) + px(ix + 1, iy + 1) * fx;
        top * (one - fy) + bottom * fy
    }

    /// Mirror about the vertical axis. Exact (pure index permutation).
    pub fn flipped_horizontal(&self) -> Self {
        let mut out = Self::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Bilinear resize to the given dimensions.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Self::zeros(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            for x in 0..width {
                // Map output pixel center into source coordinates.
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                out.set(x, y, self.sample_bilinear(src_x.max(0.0), src_y.max(0.0)));
            }
        }
        out
    }

    /// Load a PNG (or any readable raster file), collapsing to luma and
    /// normalizing to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = ImageReader::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .decode()
            .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
        let luma = reader.to_luma8();
        let (w, h) = (luma.width() as usize, luma.height() as usize);
        let scale = T::from_f64_lossy(1.0 / 255.0);
        let data = luma
            .into_raw()
            .into_iter()
            .map(|v| T::from_f64_lossy(v as f64) * scale)
            .collect();
        Ok(Self::from_data(w, h, data))
    }

    /// Save as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = image::GrayImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = (self.get(x, y).to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8;
                buf.put_pixel(x as u32, y as u32, image::Luma([v]));
            }
        }
        buf.save(path)
            .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))
    }
}
