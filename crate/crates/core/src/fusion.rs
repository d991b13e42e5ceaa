//! Densification: fuses sparse patch estimates into a per-pixel disparity map.
//!
//! Every pixel takes the weighted mean of the disparities of all surviving
//! patches that cover it. The two weighting rules are the inverse-residual
//! baseline (`1 / max(r², 1)` per pixel) and the Bayesian rule (windowed
//! posterior × spatial mask). Accumulation runs over row bands in parallel,
//! but each pixel always sees its covering patches in `patch_id` order, so
//! the result is bitwise identical for any worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::patch::{PatchEstimate, PatchStatus};
use crate::weighting::{PatchPosterior, SpatialMask};

/// Which weighting rule fusion applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Windowed posterior × spatial Gaussian mask.
    Bayesian,
    /// Per-pixel inverse squared residual, clamped at 1.
    ResidualInverse,
}

/// Dense disparity estimate: values, per-pixel confidence (the accumulated
/// weight), and validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    disparity: Vec<f32>,
    confidence: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// All-invalid map of the given size.
    pub fn new_invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            disparity: vec![0.0; n],
            confidence: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Builds a map from raw parts (used by file readers and tests).
    pub fn from_parts(
        width: usize,
        height: usize,
        disparity: Vec<f32>,
        confidence: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if width == 0 || height == 0 || disparity.len() != n || confidence.len() != n || valid.len() != n {
            return Err(Error::InvalidRaster(format!(
                "disparity map buffers do not match {width}x{height}"
            )));
        }
        Ok(Self { width, height, disparity, confidence, valid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn disparity(&self, x: usize, y: usize) -> f32 {
        self.disparity[y * self.width + x]
    }

    #[inline]
    pub fn confidence(&self, x: usize, y: usize) -> f32 {
        self.confidence[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn disparities(&self) -> &[f32] {
        &self.disparity
    }

    pub fn confidences(&self) -> &[f32] {
        &self.confidence
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Rows per accumulation band. Bands are processed in parallel; the value
/// only affects load balancing, never results.
const BAND_ROWS: usize = 64;

/// Requires statuses to be `Converged` and ids to be strictly increasing, so
/// the in-band accumulation order (list order) is the documented patch_id
/// order.
fn check_estimates(estimates: &[PatchEstimate]) -> Result<()> {
    let mut last_id = None;
    for est in estimates {
        if est.status != PatchStatus::Converged {
            return Err(Error::Contract(format!(
                "fusion requires Converged estimates, got {:?} for patch {}",
                est.status, est.patch_id
            )));
        }
        if let Some(prev) = last_id {
            if est.patch_id <= prev {
                return Err(Error::Contract(
                    "estimates must be sorted by strictly increasing patch_id".into(),
                ));
            }
        }
        last_id = Some(est.patch_id);
    }
    Ok(())
}

/// Core accumulation loop shared by both fusion rules.
///
/// `weight` returns the fusion weight of estimate `k` at image pixel `(x, y)`
/// (patch-local `(dx, dy)`), or `None` if that patch contributes nothing
/// there. Output pixels with no contribution are invalid.
fn accumulate<W>(
    width: usize,
    height: usize,
    patch_size: usize,
    estimates: &[PatchEstimate],
    weight: W,
) -> DisparityMap
where
    W: Fn(usize, &PatchEstimate, usize, usize, usize, usize) -> Option<f64> + Sync,
{
    let n = width * height;
    let mut num = vec![0.0f64; n];
    let mut den = vec![0.0f64; n];

    num.par_chunks_mut(BAND_ROWS * width)
        .zip(den.par_chunks_mut(BAND_ROWS * width))
        .enumerate()
        .for_each(|(band, (num_band, den_band))| {
            let y0 = band * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(height);
            for (k, est) in estimates.iter().enumerate() {
                let (px, py) = est.origin;
                if py >= y1 || py + patch_size <= y0 {
                    continue;
                }
                let row_lo = py.max(y0);
                let row_hi = (py + patch_size).min(y1);
                for y in row_lo..row_hi {
                    let dy = y - py;
                    let base = (y - y0) * width;
                    for dx in 0..patch_size {
                        let x = px + dx;
                        if let Some(w) = weight(k, est, dx, dy, x, y) {
                            num_band[base + x] += w * est.disparity;
                            den_band[base + x] += w;
                        }
                    }
                }
            }
        });

    let mut disparity = vec![0.0f32; n];
    let mut confidence = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if den[i] > 0.0 {
            disparity[i] = (num[i] / den[i]) as f32;
            confidence[i] = den[i] as f32;
            valid[i] = true;
        }
    }
    DisparityMap { width, height, disparity, confidence, valid }
}

/// Samples one row of `right` at fractional column `pos` with linear
/// interpolation; `None` outside the image or when a needed tap is invalid.
#[inline]
fn sample_right_row(right: &GrayImage, y: usize, pos: f64) -> Option<f64> {
    if pos < 0.0 || pos > (right.width() - 1) as f64 {
        return None;
    }
    let x0 = pos.floor();
    let fx = pos - x0;
    let i = x0 as usize;
    let row = right.row(y);
    let vrow = right.valid_row(y);
    if fx == 0.0 {
        vrow[i].then(|| f64::from(row[i]))
    } else {
        (vrow[i] && vrow[i + 1])
            .then(|| (1.0 - fx) * f64::from(row[i]) + fx * f64::from(row[i + 1]))
    }
}

/// Baseline inverse-residual fusion.
///
/// Each covering patch weighs a pixel by `1 / max(r², 1)` where `r` is that
/// pixel's own brightness residual under the patch's disparity. Pixels where
/// a patch has no defined residual (invalid left pixel, invalid or
/// out-of-bounds right sample) receive no contribution from it.
pub fn fuse_residual(
    estimates: &[PatchEstimate],
    left: &GrayImage,
    right: &GrayImage,
    patch_size: usize,
) -> Result<DisparityMap> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch {
            expected_w: left.width(),
            expected_h: left.height(),
            got_w: right.width(),
            got_h: right.height(),
        });
    }
    check_estimates(estimates)?;
    Ok(accumulate(
        left.width(),
        left.height(),
        patch_size,
        estimates,
        |_, est, _, _, x, y| {
            if !left.is_valid(x, y) {
                return None;
            }
            let sample = sample_right_row(right, y, x as f64 - est.disparity)?;
            let r = f64::from(left.pixel(x, y)) - sample;
            Some(1.0 / (r * r).max(1.0))
        },
    ))
}

/// Bayesian fusion: weight = windowed posterior × spatial mask.
///
/// `posteriors` must align 1:1 with `estimates` (same order, same
/// `patch_id`s); a mismatch is a contract error.
pub fn fuse_bayesian(
    estimates: &[PatchEstimate],
    posteriors: &[PatchPosterior],
    mask: &SpatialMask,
    width: usize,
    height: usize,
) -> Result<DisparityMap> {
    if estimates.len() != posteriors.len() {
        return Err(Error::Contract(format!(
            "{} estimates but {} posteriors",
            estimates.len(),
            posteriors.len()
        )));
    }
    for (est, pp) in estimates.iter().zip(posteriors) {
        if est.patch_id != pp.patch_id {
            return Err(Error::Contract(format!(
                "estimate {} paired with posterior {}",
                est.patch_id, pp.patch_id
            )));
        }
    }
    check_estimates(estimates)?;
    Ok(accumulate(
        width,
        height,
        mask.size(),
        estimates,
        |k, _, dx, dy, _, _| Some(posteriors[k].posterior * mask.weight(dx, dy)),
    ))
}

/// Upsamples a coarse map to the next finer level: nearest-neighbor lookup
/// with disparities doubled. Invalid coarse pixels become invalid fine pixels
/// with value 0 and confidence 0.
pub fn upsample_disparity(coarse: &DisparityMap, fine_width: usize, fine_height: usize) -> DisparityMap {
    let mut fine = DisparityMap::new_invalid(fine_width, fine_height);
    for y in 0..fine_height {
        let cy = (y / 2).min(coarse.height - 1);
        for x in 0..fine_width {
            let cx = (x / 2).min(coarse.width - 1);
            if coarse.is_valid(cx, cy) {
                let i = y * fine_width + x;
                fine.disparity[i] = 2.0 * coarse.disparity(cx, cy);
                fine.confidence[i] = coarse.confidence(cx, cy);
                fine.valid[i] = true;
            }
        }
    }
    fine
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::make_spatial_mask;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn est(patch_id: usize, origin: (usize, usize), disparity: f64) -> PatchEstimate {
        PatchEstimate {
            patch_id,
            origin,
            disparity,
            residual_ss: 0.0,
            iterations: 1,
            status: PatchStatus::Converged,
        }
    }

    fn posterior(patch_id: usize, p: f64) -> PatchPosterior {
        PatchPosterior {
            patch_id,
            center_disparity: 0.0,
            window_disparities: vec![0.0],
            window_likelihoods: vec![1.0],
            posterior: p,
            compensation_ratio: 1.0,
        }
    }

    /// Left constant 100; right mostly 100 with two planted values so the
    /// probe pixel (12, 8) sees residual 1 under u=2 and residual 2 under u=4.
    fn residual_pair() -> (GrayImage, GrayImage) {
        let left = GrayImage::constant(32, 16, 100.0);
        let right = GrayImage::from_fn(32, 16, |x, y| match (x, y) {
            (10, 8) => 99.0,
            (8, 8) => 98.0,
            _ => 100.0,
        });
        (left, right)
    }

    #[test]
    fn single_patch_fills_footprint_regardless_of_residual() {
        let (left, right) = residual_pair();
        let map = fuse_residual(&[est(0, (8, 4), 3.0)], &left, &right, 8).unwrap();
        for dy in 0..8 {
            for dx in 0..8 {
                assert!(map.is_valid(8 + dx, 4 + dy));
                assert_relative_eq!(map.disparity(8 + dx, 4 + dy), 3.0);
            }
        }
        assert!(!map.is_valid(0, 0));
        assert!(!map.is_valid(20, 12));
    }

    #[test]
    fn residual_weights_clamp_below_one() {
        // Residuals 0 and 0 at the probe: both weights clamp to 1 → mean.
        let left = GrayImage::constant(32, 16, 100.0);
        let right = GrayImage::constant(32, 16, 100.0);
        let ests = [est(0, (8, 4), 2.0), est(1, (8, 4), 4.0)];
        let map = fuse_residual(&ests, &left, &right, 8).unwrap();
        assert_relative_eq!(map.disparity(12, 8), 3.0);
    }

    #[test]
    fn residual_weights_follow_inverse_square() {
        let (left, right) = residual_pair();
        let ests = [est(0, (8, 4), 2.0), est(1, (8, 4), 4.0)];
        let map = fuse_residual(&ests, &left, &right, 8).unwrap();
        // w = 1 and 1/4 → (2 + 1) / 1.25 = 2.4, rounded to f32 storage.
        assert_eq!(map.disparity(12, 8), 2.4f64 as f32);
        assert_relative_eq!(f64::from(map.confidence(12, 8)), 1.25, max_relative = 1e-6);
    }

    #[test]
    fn bayesian_equal_weights_average() {
        let mask = make_spatial_mask(8, 4.0);
        let ests = [est(0, (8, 4), 2.0), est(1, (8, 4), 4.0)];
        let pps = [posterior(0, 0.5), posterior(1, 0.5)];
        let map = fuse_bayesian(&ests, &pps, &mask, 32, 16).unwrap();
        assert_relative_eq!(map.disparity(12, 8), 3.0);
    }

    #[test]
    fn bayesian_posterior_ratio_tilts_the_mean() {
        let mask = make_spatial_mask(8, 4.0);
        let ests = [est(0, (8, 4), 2.0), est(1, (8, 4), 4.0)];
        let pps = [posterior(0, 0.9), posterior(1, 0.1)];
        let map = fuse_bayesian(&ests, &pps, &mask, 32, 16).unwrap();
        // (0.9·2 + 0.1·4) / 1.0 = 2.2 at every covered pixel (same mask value).
        assert_relative_eq!(f64::from(map.disparity(12, 8)), 2.2, max_relative = 1e-6);
        let expected_conf = 1.0 * mask.weight(4, 4);
        assert_relative_eq!(f64::from(map.confidence(12, 8)), expected_conf, max_relative = 1e-6);
    }

    #[test]
    fn uncovered_pixels_are_invalid() {
        let mask = make_spatial_mask(8, 4.0);
        let map = fuse_bayesian(&[], &[], &mask, 16, 16).unwrap();
        assert_eq!(map.valid_count(), 0);
        assert!(map.disparities().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn fusion_rejects_contract_violations() {
        let mask = make_spatial_mask(8, 4.0);
        // Mismatched lengths.
        assert!(matches!(
            fuse_bayesian(&[est(0, (0, 0), 1.0)], &[], &mask, 16, 16),
            Err(Error::Contract(_))
        ));
        // Mismatched ids.
        assert!(matches!(
            fuse_bayesian(&[est(0, (0, 0), 1.0)], &[posterior(1, 0.5)], &mask, 16, 16),
            Err(Error::Contract(_))
        ));
        // Non-converged estimate.
        let mut bad = est(0, (0, 0), 1.0);
        bad.status = PatchStatus::SaddleRejected;
        assert!(matches!(
            fuse_bayesian(&[bad], &[posterior(0, 0.5)], &mask, 16, 16),
            Err(Error::Contract(_))
        ));
        // Unsorted ids.
        let left = GrayImage::constant(32, 16, 100.0);
        assert!(matches!(
            fuse_residual(&[est(1, (0, 0), 1.0), est(0, (8, 0), 1.0)], &left, &left, 8),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn upsample_doubles_disparities() {
        let coarse = DisparityMap::from_parts(
            2,
            2,
            vec![2.5, 1.0, 0.5, 3.0],
            vec![1.0; 4],
            vec![true, true, false, true],
        )
        .unwrap();
        let fine = upsample_disparity(&coarse, 4, 4);
        assert_relative_eq!(fine.disparity(0, 0), 5.0);
        assert_relative_eq!(fine.disparity(1, 1), 5.0);
        assert_relative_eq!(fine.disparity(2, 0), 2.0);
        // Invalid coarse pixel → invalid fine block with value 0, confidence 0.
        assert!(!fine.is_valid(0, 2));
        assert_eq!(fine.disparity(0, 2), 0.0);
        assert_eq!(fine.confidence(0, 2), 0.0);
        assert!(fine.is_valid(3, 3));
        assert_relative_eq!(fine.disparity(3, 3), 6.0);
    }

    #[test]
    fn upsample_handles_odd_fine_dims() {
        let coarse = DisparityMap::from_parts(2, 2, vec![1.0; 4], vec![1.0; 4], vec![true; 4]).unwrap();
        let fine = upsample_disparity(&coarse, 5, 5);
        // Column/row 4 clamps to coarse index 1.
        assert!(fine.is_valid(4, 4));
        assert_relative_eq!(fine.disparity(4, 4), 2.0);
    }

    proptest! {
        /// The fused value is a convex combination: it lies within the min/max
        /// disparity of the patches covering that pixel.
        #[test]
        fn fused_value_is_convex_combination(
            us in proptest::collection::vec(0.0f64..5.0, 6),
            ps in proptest::collection::vec(0.01f64..1.0, 6),
        ) {
            let mask = make_spatial_mask(8, 4.0);
            let mut ests = Vec::new();
            let mut pps = Vec::new();
            for (k, (&u, &p)) in us.iter().zip(&ps).enumerate() {
                let origin = ((k % 3) * 4, (k / 3) * 4);
                ests.push(est(k, origin, u));
                pps.push(posterior(k, p));
            }
            let map = fuse_bayesian(&ests, &pps, &mask, 24, 16).unwrap();
            for y in 0..16 {
                for x in 0..24 {
                    if !map.is_valid(x, y) {
                        continue;
                    }
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for e in &ests {
                        if x >= e.origin.0 && x < e.origin.0 + 8 && y >= e.origin.1 && y < e.origin.1 + 8 {
                            lo = lo.min(e.disparity);
                            hi = hi.max(e.disparity);
                        }
                    }
                    // Slack covers the final rounding into f32 storage.
                    let slack = 1e-5 * (1.0 + hi.abs());
                    let d = f64::from(map.disparity(x, y));
                    prop_assert!(d >= lo - slack && d <= hi + slack);
                }
            }
        }
    }
}
