//! Single-channel float rasters with per-pixel validity, coarse-to-fine
//! pyramids, and the horizontal gradient used by the patch solver.
//!
//! Intensities live in `[0, 255]` as floating point. A validity mask rides
//! along with every raster so rectification fill and border effects can be
//! excluded from residuals; invalid pixels always carry the value 0.

use crate::error::{Error, Result};

/// Grayscale raster: row-major `f32` samples plus a validity mask.
///
/// Images produced by [`to_gray`]/[`from_gray8`]/[`build_pyramid`] keep their
/// intensities in `[0, 255]`. The same container also carries derived rasters
/// (e.g. [`gradient_x`] output), whose samples may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl GrayImage {
    /// Builds an image from raw parts. Invalid pixels are forced to value 0 so
    /// the "invalid carries 0" invariant holds no matter what the caller put
    /// in the buffer.
    pub fn from_parts(width: usize, height: usize, mut data: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("zero dimension {width}x{height}")));
        }
        if data.len() != width * height || valid.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "buffer lengths {}/{} do not match {width}x{height}",
                data.len(),
                valid.len()
            )));
        }
        for (v, ok) in data.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        Ok(Self { width, height, data, valid })
    }

    /// Builds a fully-valid image by evaluating `f` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data, valid: vec![true; width * height] }
    }

    /// Fully-valid constant image.
    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Intensity at `(x, y)`. Panics if out of bounds.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// One row of intensities.
    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// One row of the validity mask.
    #[inline]
    pub fn valid_row(&self, y: usize) -> &[bool] {
        &self.valid[y * self.width..(y + 1) * self.width]
    }

    /// Raw intensity buffer (row-major).
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Raw validity buffer (row-major).
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Number of valid pixels.
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Converts a 24-bit RGB raster (interleaved `R,G,B` bytes, row-major) to
/// grayscale via `0.299·R + 0.587·G + 0.114·B`.
///
/// Pixels with all three channels equal to 0 are treated as rectification
/// fill and marked invalid.
pub fn to_gray(rgb: &[u8], width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidRaster(format!("zero dimension {width}x{height}")));
    }
    if rgb.len() != 3 * width * height {
        return Err(Error::InvalidRaster(format!(
            "RGB buffer length {} does not match {width}x{height}",
            rgb.len()
        )));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for px in rgb.chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        if r == 0 && g == 0 && b == 0 {
            data.push(0.0);
            valid.push(false);
        } else {
            let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
            data.push(y as f32);
            valid.push(true);
        }
    }
    Ok(GrayImage { width, height, data, valid })
}

/// Wraps an 8-bit grayscale raster. Follows the same fill convention as
/// [`to_gray`]: intensity 0 is treated as rectification fill and marked
/// invalid.
pub fn from_gray8(gray: &[u8], width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidRaster(format!("zero dimension {width}x{height}")));
    }
    if gray.len() != width * height {
        return Err(Error::InvalidRaster(format!(
            "gray buffer length {} does not match {width}x{height}",
            gray.len()
        )));
    }
    let data: Vec<f32> = gray.iter().map(|&v| f32::from(v)).collect();
    let valid: Vec<bool> = gray.iter().map(|&v| v != 0).collect();
    GrayImage::from_parts(width, height, data, valid)
}

/// Coarse-to-fine image stack. `level(0)` is the input resolution; each level
/// above it halves both dimensions (floor).
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
}

impl ImagePyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level `i`, where 0 is the finest.
    pub fn level(&self, i: usize) -> &GrayImage {
        &self.levels[i]
    }

    pub fn finest(&self) -> &GrayImage {
        &self.levels[0]
    }

    pub fn coarsest(&self) -> &GrayImage {
        &self.levels[self.levels.len() - 1]
    }
}

/// Builds a `num_levels`-deep pyramid by repeated 2×2 box-mean downsampling.
///
/// A coarse pixel is the mean of its four source pixels and is invalid if any
/// of them is invalid. Odd trailing rows/columns are dropped by the floor
/// halving. Errors if `num_levels` is 0 or some level would collapse to zero
/// size.
pub fn build_pyramid(img: &GrayImage, num_levels: usize) -> Result<ImagePyramid> {
    if num_levels == 0 {
        return Err(Error::Config("num_levels must be at least 1".into()));
    }
    let mut levels = Vec::with_capacity(num_levels);
    levels.push(img.clone());
    for level in 1..num_levels {
        let prev = &levels[level - 1];
        let (w, h) = (prev.width / 2, prev.height / 2);
        if w == 0 || h == 0 {
            return Err(Error::Config(format!(
                "num_levels {num_levels} is too deep for a {}x{} image",
                img.width, img.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        for y in 0..h {
            let r0 = prev.row(2 * y);
            let r1 = prev.row(2 * y + 1);
            let v0 = prev.valid_row(2 * y);
            let v1 = prev.valid_row(2 * y + 1);
            for x in 0..w {
                let ok = v0[2 * x] && v0[2 * x + 1] && v1[2 * x] && v1[2 * x + 1];
                if ok {
                    let sum = f64::from(r0[2 * x])
                        + f64::from(r0[2 * x + 1])
                        + f64::from(r1[2 * x])
                        + f64::from(r1[2 * x + 1]);
                    data.push((sum * 0.25) as f32);
                } else {
                    data.push(0.0);
                }
                valid.push(ok);
            }
        }
        levels.push(GrayImage { width: w, height: h, data, valid });
    }
    Ok(ImagePyramid { levels })
}

/// Horizontal intensity gradient: central differences `(I(x+1) − I(x−1)) / 2`
/// in the interior, one-sided differences at the first and last column.
///
/// A gradient sample is valid only if every pixel in its stencil is valid.
/// Errors if the image is a single column wide.
pub fn gradient_x(img: &GrayImage) -> Result<GrayImage> {
    let (w, h) = (img.width, img.height);
    if w < 2 {
        return Err(Error::InvalidRaster(format!("gradient needs width >= 2, got {w}")));
    }
    let mut data = vec![0.0f32; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        let row = img.row(y);
        let vrow = img.valid_row(y);
        let out = y * w;
        // One-sided at the borders, central in the interior.
        if vrow[0] && vrow[1] {
            data[out] = row[1] - row[0];
            valid[out] = true;
        }
        if vrow[w - 1] && vrow[w - 2] {
            data[out + w - 1] = row[w - 1] - row[w - 2];
            valid[out + w - 1] = true;
        }
        for x in 1..w - 1 {
            if vrow[x - 1] && vrow[x] && vrow[x + 1] {
                data[out + x] = (row[x + 1] - row[x - 1]) * 0.5;
                valid[out + x] = true;
            }
        }
    }
    GrayImage::from_parts(w, h, data, valid)
}
