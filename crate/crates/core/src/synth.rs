//! Deterministic synthetic stereo pairs with exact ground truth.
//!
//! A seeded multi-octave value-noise texture is rasterized onto a grid wider
//! than the frame; the left image is a crop of it, and the right image is the
//! same raster horizontally warped through the inverse of the disparity model
//! with linear sampling. Ground truth is therefore exact on the left grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::DisparityMap;
use crate::image::GrayImage;

/// One value-noise octave: random lattice values, smooth-interpolated.
struct Octave {
    cell: f64,
    amplitude: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl Octave {
    fn value(&self, x: f64, y: f64) -> f64 {
        let gx = (x / self.cell).clamp(0.0, (self.nx - 2) as f64);
        let gy = (y / self.cell).clamp(0.0, (self.ny - 2) as f64);
        let (ix, iy) = (gx as usize, gy as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let at = |x: usize, y: usize| self.values[y * self.nx + x];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// Smooth band-limited texture, evaluable at arbitrary real coordinates
/// within the extent it was built for (the frame plus a horizontal margin
/// wide enough for warped sampling).
pub struct TextureField {
    octaves: Vec<Octave>,
    lo: f64,
    hi: f64,
}

impl TextureField {
    /// Builds a texture for a `width`×`height` frame from `seed`. The field
    /// extends a quarter-width past the right border so warped lookups stay
    /// inside it.
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        let extent_x = width as f64 * 1.25 + 4.0;
        let extent_y = height as f64 + 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = [(32.0, 0.35), (16.0, 0.30), (8.0, 0.20), (4.0, 0.15)];
        let octaves = specs
            .iter()
            .map(|&(cell, amplitude)| {
                let nx = (extent_x / cell).ceil() as usize + 2;
                let ny = (extent_y / cell).ceil() as usize + 2;
                let values = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
                Octave { cell, amplitude, nx, ny, values }
            })
            .collect();
        Self { octaves, lo: 30.0, hi: 150.0 }
    }

    /// Intensity at real coordinates, in `[30, 150]`.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut norm = 0.0;
        for oct in &self.octaves {
            sum += oct.amplitude * oct.value(x, y);
            norm += oct.amplitude;
        }
        self.lo + (self.hi - self.lo) * (sum / norm)
    }
}

/// Ground-truth disparity as a function of the left x coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisparityModel {
    /// Constant disparity everywhere.
    Shift { amount: f64 },
    /// Linear ramp `base + slope · x` (a fronto-slanted plane).
    Plane { base: f64, slope: f64 },
    /// `mean + amplitude · sin(2π x / period)`.
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
}

impl DisparityModel {
    /// Disparity at left-image column `x`.
    pub fn disparity_at(&self, x: f64) -> f64 {
        match *self {
            Self::Shift { amount } => amount,
            Self::Plane { base, slope } => base + slope * x,
            Self::Sinusoid { mean, amplitude, period } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * x / period).sin()
            }
        }
    }

    /// Largest |d'(x)|; must stay below 1 for the warp to be invertible.
    fn max_abs_slope(&self) -> f64 {
        match *self {
            Self::Shift { .. } => 0.0,
            Self::Plane { slope, .. } => slope.abs(),
            Self::Sinusoid { amplitude, period, .. } => {
                amplitude.abs() * 2.0 * std::f64::consts::PI / period
            }
        }
    }

    /// Range of disparities over columns `[0, width)`.
    fn range(&self, width: usize) -> (f64, f64) {
        match *self {
            Self::Shift { amount } => (amount, amount),
            Self::Plane { base, slope } => {
                let end = base + slope * (width as f64 - 1.0);
                (base.min(end), base.max(end))
            }
            Self::Sinusoid { mean, amplitude, .. } => {
                (mean - amplitude.abs(), mean + amplitude.abs())
            }
        }
    }

    fn validate(&self, width: usize) -> Result<()> {
        if let Self::Sinusoid { period, .. } = *self {
            if !(period > 0.0) {
                return Err(Error::SynthParams(format!("sinusoid period must be positive, got {period}")));
            }
        }
        let (lo, hi) = self.range(width);
        if !(lo >= 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::SynthParams(format!(
                "disparity model reaches {lo}, below the minimum of 0"
            )));
        }
        let cap = width as f64 / 4.0;
        if hi > cap {
            return Err(Error::SynthParams(format!(
                "disparity model reaches {hi}, beyond the width/4 cap of {cap}"
            )));
        }
        if self.max_abs_slope() >= 0.9 {
            return Err(Error::SynthParams(format!(
                "disparity slope reaches {}, too steep for an invertible warp",
                self.max_abs_slope()
            )));
        }
        Ok(())
    }
}

/// A circular photometric highlight applied to the right image only:
/// intensity is scaled by a gain that peaks at `center` and decays linearly
/// to 1 at `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecularSpot {
    pub center: (f64, f64),
    pub radius: f64,
    /// Gain at the spot center; 1.0 is a no-op.
    pub peak_gain: f64,
}

impl SpecularSpot {
    fn gain(&self, x: f64, y: f64) -> f64 {
        let r = ((x - self.center.0).powi(2) + (y - self.center.1).powi(2)).sqrt();
        if r >= self.radius {
            1.0
        } else {
            1.0 + (self.peak_gain - 1.0) * (1.0 - r / self.radius)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.peak_gain >= 1.0) {
            return Err(Error::SynthParams(format!(
                "specular spot needs radius > 0 and peak_gain >= 1, got {} / {}",
                self.radius, self.peak_gain
            )));
        }
        Ok(())
    }
}

/// A rendered stereo pair and its exact ground truth on the left grid.
pub struct SyntheticPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub ground_truth: DisparityMap,
}

/// Solves `x - d(x) = target` for `x` by bisection. The model's slope bound
/// (< 1) makes the left side strictly increasing, so the root is unique.
fn invert_warp(model: &DisparityModel, target: f64, d_max: f64) -> f64 {
    let mut lo = target;
    let mut hi = target + d_max + 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid - model.disparity_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Renders a stereo pair of the seeded texture under `model`.
///
/// The texture is rasterized onto a grid extending `max disparity + 2` columns
/// past the frame. The left image is the frame-sized crop; the right image at
/// column `xr` linearly samples the raster at the unique source coordinate `x`
/// with `x - d(x) = xr`, so a left pixel at `x` reappears `d(x)` pixels to the
/// left in the right image. A constant shift therefore is a pure crop offset
/// with no resampling. `specular` optionally brightens a disc of the right
/// image to break the brightness-constancy assumption there.
pub fn render_pair(
    width: usize,
    height: usize,
    model: &DisparityModel,
    seed: u64,
    specular: Option<&SpecularSpot>,
) -> Result<SyntheticPair> {
    if width < 8 || height < 8 {
        return Err(Error::SynthParams(format!("frame {width}x{height} is too small to render")));
    }
    model.validate(width)?;
    if let Some(spot) = specular {
        spot.validate()?;
    }
    let texture = TextureField::new(width, height, seed);
    let (_, d_max) = model.range(width);
    let ext_w = width + d_max.ceil() as usize + 2;
    let mut raster = vec![0.0f64; ext_w * height];
    for y in 0..height {
        for x in 0..ext_w {
            raster[y * ext_w + x] = texture.value(x as f64, y as f64);
        }
    }
    let left = GrayImage::from_fn(width, height, |x, y| raster[y * ext_w + x] as f32);
    let right = GrayImage::from_fn(width, height, |xr, y| {
        let src = match *model {
            DisparityModel::Shift { amount } => xr as f64 + amount,
            _ => invert_warp(model, xr as f64, d_max),
        };
        let i0 = src.floor() as usize;
        let fx = src - i0 as f64;
        let row = &raster[y * ext_w..(y + 1) * ext_w];
        let mut v = row[i0] * (1.0 - fx) + row[i0 + 1] * fx;
        if let Some(spot) = specular {
            v = (v * spot.gain(xr as f64, y as f64)).min(255.0);
        }
        v as f32
    });
    let mut disp = Vec::with_capacity(width * height);
    for _y in 0..height {
        for x in 0..width {
            disp.push(model.disparity_at(x as f64) as f32);
        }
    }
    let ground_truth = DisparityMap::from_parts(
        width,
        height,
        disp,
        vec![1.0; width * height],
        vec![true; width * height],
    )?;
    Ok(SyntheticPair { left, right, ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn texture_is_deterministic_and_in_range() {
        let a = TextureField::new(64, 48, 7);
        let b = TextureField::new(64, 48, 7);
        let c = TextureField::new(64, 48, 8);
        let mut differs = false;
        for y in 0..48 {
            for x in 0..64 {
                let (xf, yf) = (x as f64, y as f64);
                assert_eq!(a.value(xf, yf), b.value(xf, yf));
                let v = a.value(xf, yf);
                assert!((30.0..=150.0).contains(&v), "value {v} out of range");
                differs |= (a.value(xf, yf) - c.value(xf, yf)).abs() > 1e-9;
            }
        }
        assert!(differs, "different seeds produced identical textures");
    }

    #[test]
    fn integer_shift_is_an_exact_crop() {
        let pair = render_pair(64, 32, &DisparityModel::Shift { amount: 5.0 }, 3, None).unwrap();
        // I_r(x - 5) must equal I_l(x) bitwise wherever both columns exist.
        for y in 0..32 {
            for x in 5..64 {
                assert_eq!(pair.left.pixel(x, y), pair.right.pixel(x - 5, y));
            }
        }
        assert_eq!(pair.ground_truth.disparity(10, 10), 5.0);
        assert_eq!(pair.ground_truth.valid_count(), 64 * 32);
    }

    #[test]
    fn warp_inversion_satisfies_the_model_equation() {
        let model = DisparityModel::Sinusoid { mean: 6.0, amplitude: 2.0, period: 40.0 };
        for xr in [0.0, 3.7, 19.2, 55.0] {
            let x = invert_warp(&model, xr, 8.0);
            assert_abs_diff_eq!(x - model.disparity_at(x), xr, epsilon = 1e-9);
        }
    }

    #[test]
    fn plane_render_linearly_samples_the_left_raster() {
        let model = DisparityModel::Plane { base: 2.0, slope: 0.05 };
        let pair = render_pair(96, 24, &model, 11, None).unwrap();
        let d_max = 2.0 + 0.05 * 95.0;
        // Wherever the warp source lands inside the frame, the right pixel
        // must be the linear blend of the two left pixels bracketing it.
        for &(xr, y) in &[(0usize, 0usize), (40, 10), (80, 23)] {
            let src = invert_warp(&model, xr as f64, d_max);
            let i0 = src.floor() as usize;
            let fx = src - i0 as f64;
            assert!(i0 + 1 < 96);
            let expect = f64::from(pair.left.pixel(i0, y)) * (1.0 - fx)
                + f64::from(pair.left.pixel(i0 + 1, y)) * fx;
            assert_abs_diff_eq!(f64::from(pair.right.pixel(xr, y)), expect, epsilon = 1e-4);
        }
        // Ground truth is linear in x: base 2 at the left edge, 2 + 0.05·95
        // at the right edge.
        assert_eq!(pair.ground_truth.disparity(0, 0), 2.0);
        assert_abs_diff_eq!(f64::from(pair.ground_truth.disparity(95, 0)), d_max, epsilon = 1e-6);
    }

    #[test]
    fn same_seed_and_params_render_bitwise_identical_pairs() {
        let model = DisparityModel::Sinusoid { mean: 5.0, amplitude: 1.5, period: 48.0 };
        let a = render_pair(96, 48, &model, 21, None).unwrap();
        let b = render_pair(96, 48, &model, 21, None).unwrap();
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn specular_spot_brightens_only_the_disc() {
        let model = DisparityModel::Shift { amount: 4.0 };
        let plain = render_pair(64, 64, &model, 9, None).unwrap();
        let spot = SpecularSpot { center: (32.0, 32.0), radius: 10.0, peak_gain: 1.5 };
        let lit = render_pair(64, 64, &model, 9, Some(&spot)).unwrap();
        assert!(lit.right.pixel(32, 32) > plain.right.pixel(32, 32));
        assert_eq!(lit.right.pixel(2, 2), plain.right.pixel(2, 2));
        assert_eq!(lit.left.pixel(32, 32), plain.left.pixel(32, 32));
    }

    #[test]
    fn rejects_out_of_range_models() {
        // Negative disparity.
        assert!(render_pair(64, 32, &DisparityModel::Plane { base: -1.0, slope: 0.0 }, 1, None).is_err());
        // Beyond the width/4 cap (64/4 = 16).
        assert!(render_pair(64, 32, &DisparityModel::Shift { amount: 17.0 }, 1, None).is_err());
        // Slope too steep to invert.
        assert!(render_pair(
            64,
            32,
            &DisparityModel::Sinusoid { mean: 8.0, amplitude: 6.0, period: 10.0 },
            1,
            None
        )
        .is_err());
        // Degenerate specular parameters.
        let spot = SpecularSpot { center: (0.0, 0.0), radius: 0.0, peak_gain: 1.2 };
        assert!(render_pair(64, 32, &DisparityModel::Shift { amount: 2.0 }, 1, Some(&spot)).is_err());
    }
}
