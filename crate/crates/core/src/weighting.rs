//! Bayesian confidence weighting for converged patches.
//!
//! Each converged patch gets (1) a match likelihood — a Boltzmann function of
//! its photometric residual — normalized over a small window of disparities
//! around the solution into a posterior probability, and (2) a fixed spatial
//! Gaussian mask that concentrates its influence near the patch center. The
//! product of the two is the per-pixel fusion weight.

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::patch::{warped_residual_ss, PatchEstimate, PatchStatus, PatchTemplate};

/// Shape of the spatial mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskForm {
    /// Gaussian of distance to the patch center: `exp(−‖x−c‖² / (2σ_s²))`.
    /// The default; equivalent to the per-pixel-sum form up to a variance
    /// rescaling and a constant factor that cancels in fusion.
    Centered,
    /// Literal sum over all patch pixels: `exp(−Σ_q ‖x−q‖² / (2σ_s²))`.
    /// Available for fidelity experiments; sharper than `Centered`.
    LiteralSum,
}

/// Which length normalizes the match-likelihood exponent `R / (2σ_r²s²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoltzmannScale {
    /// `s` is the patch side length (default).
    PatchSide,
    /// `s` is the number of window samples.
    WindowSize,
}

/// Per-patch windowed posterior: the match likelihood at the converged
/// disparity normalized over the sampled window.
#[derive(Debug, Clone)]
pub struct PatchPosterior {
    /// Mirrors [`PatchEstimate::patch_id`]; fusion checks the alignment.
    pub patch_id: usize,
    /// The converged disparity the window is centered on.
    pub center_disparity: f64,
    /// Disparities actually sampled (out-of-bounds samples are dropped).
    pub window_disparities: Vec<f64>,
    /// Match likelihood of each retained sample, aligned with
    /// `window_disparities`. May underflow to 0 for very large residuals;
    /// the posterior itself is computed from exponent differences and stays
    /// finite regardless.
    pub window_likelihoods: Vec<f64>,
    /// Normalized, compensation-scaled posterior of the center disparity.
    pub posterior: f64,
    /// The compensation ratio that was applied.
    pub compensation_ratio: f64,
}

/// Residual exponent `R / (2 σ_r² s_b²)` where `R` is the squared residual
/// sum rescaled to the full patch area (`ss · s² / valid_count`), making
/// partially-valid patches comparable to fully-valid ones.
fn match_exponent(
    tmpl: &PatchTemplate,
    right: &GrayImage,
    disparity: f64,
    sigma_r: f64,
    scale: f64,
) -> Result<f64> {
    let (ss, n) = warped_residual_ss(tmpl, right, disparity)?;
    let area = (tmpl.size() * tmpl.size()) as f64;
    let rescaled = ss * area / n as f64;
    Ok(rescaled / (2.0 * sigma_r * sigma_r * scale * scale))
}

/// Match likelihood `exp(−R / (2σ_r²s²))` of the template against the right
/// image warped by `disparity`, with `s` the patch side length.
///
/// Errors with `WarpOutOfBounds` if the warped patch leaves the right image
/// and `NoValidPixels` if no pixel is valid in both images.
pub fn illumination_probability(
    tmpl: &PatchTemplate,
    right: &GrayImage,
    disparity: f64,
    sigma_r: f64,
) -> Result<f64> {
    let e = match_exponent(tmpl, right, disparity, sigma_r, tmpl.size() as f64)?;
    Ok((-e).exp())
}

/// Normalizes the converged disparity's likelihood over a window of
/// `cfg.window_samples` disparities spaced `cfg.window_spacing` apart and
/// centered on the estimate.
///
/// Samples whose warp leaves the right image (or that share no valid pixels)
/// are excluded from the normalization. The posterior is computed from
/// exponent differences, so it stays well-defined even when every raw
/// likelihood underflows. The configured compensation ratio multiplies the
/// result.
pub fn window_posterior(
    tmpl: &PatchTemplate,
    right: &GrayImage,
    est: &PatchEstimate,
    cfg: &SolverConfig,
) -> Result<PatchPosterior> {
    if est.status != PatchStatus::Converged {
        return Err(Error::Contract(format!(
            "window_posterior requires a Converged estimate, got {:?}",
            est.status
        )));
    }
    let scale = match cfg.boltzmann_scale {
        BoltzmannScale::PatchSide => tmpl.size() as f64,
        BoltzmannScale::WindowSize => cfg.window_samples as f64,
    };
    let half = (cfg.window_samples / 2) as isize;

    let mut disparities = Vec::with_capacity(cfg.window_samples);
    let mut exponents = Vec::with_capacity(cfg.window_samples);
    let mut center_idx = None;
    for i in 0..cfg.window_samples as isize {
        let u = est.disparity + (i - half) as f64 * cfg.window_spacing;
        match match_exponent(tmpl, right, u, cfg.sigma_r, scale) {
            Ok(e) => {
                if i == half {
                    center_idx = Some(disparities.len());
                }
                disparities.push(u);
                exponents.push(e);
            }
            Err(Error::WarpOutOfBounds) | Err(Error::NoValidPixels) => continue,
            Err(other) => return Err(other),
        }
    }
    let center = center_idx.ok_or_else(|| {
        Error::Contract("center disparity of a converged estimate fell out of bounds".into())
    })?;

    // Shift by the smallest exponent before exponentiating: the common factor
    // cancels in the ratio, and the sum can no longer underflow to zero.
    let e_min = exponents.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut center_l = 0.0;
    for (i, &e) in exponents.iter().enumerate() {
        let l = (-(e - e_min)).exp();
        if i == center {
            center_l = l;
        }
        sum += l;
    }
    let posterior = center_l / sum * cfg.compensation_ratio;
    let window_likelihoods = exponents.iter().map(|&e| (-e).exp()).collect();

    Ok(PatchPosterior {
        patch_id: est.patch_id,
        center_disparity: est.disparity,
        window_disparities: disparities,
        window_likelihoods,
        posterior,
        compensation_ratio: cfg.compensation_ratio,
    })
}

/// Precomputed spatial weight of each pixel offset inside a patch.
///
/// The mask depends only on the patch geometry, never on image content, so
/// one instance serves every patch of a level.
#[derive(Debug, Clone)]
pub struct SpatialMask {
    size: usize,
    weights: Vec<f64>,
}

impl SpatialMask {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Weight of patch-local offset `(dx, dy)`. Panics if out of bounds; use
    /// [`pixel_weight`] for a checked product with a posterior.
    #[inline]
    pub fn weight(&self, dx: usize, dy: usize) -> f64 {
        self.weights[dy * self.size + dx]
    }
}

/// Centered Gaussian mask: `exp(−‖x − c‖² / (2σ_s²))` with `c` the patch
/// center `((s−1)/2, (s−1)/2)`.
pub fn make_spatial_mask(size: usize, sigma_s: f64) -> SpatialMask {
    let c = (size as f64 - 1.0) / 2.0;
    let denom = 2.0 * sigma_s * sigma_s;
    let mut weights = Vec::with_capacity(size * size);
    for dy in 0..size {
        for dx in 0..size {
            let (ex, ey) = (dx as f64 - c, dy as f64 - c);
            weights.push((-(ex * ex + ey * ey) / denom).exp());
        }
    }
    SpatialMask { size, weights }
}

/// Literal per-pixel-sum mask: `exp(−Σ_q ‖x − q‖² / (2σ_s²))` over all patch
/// pixels `q`. Equal to the centered form with variance shrunk by `s²`, times
/// a constant that cancels in fusion.
pub fn make_spatial_mask_literal(size: usize, sigma_s: f64) -> SpatialMask {
    let denom = 2.0 * sigma_s * sigma_s;
    let mut weights = Vec::with_capacity(size * size);
    for dy in 0..size {
        for dx in 0..size {
            let mut sum = 0.0f64;
            for qy in 0..size {
                for qx in 0..size {
                    let (ex, ey) = (dx as f64 - qx as f64, dy as f64 - qy as f64);
                    sum += ex * ex + ey * ey;
                }
            }
            weights.push((-sum / denom).exp());
        }
    }
    SpatialMask { size, weights }
}

/// Builds the mask in the configured form.
pub fn make_spatial_mask_form(size: usize, sigma_s: f64, form: MaskForm) -> SpatialMask {
    match form {
        MaskForm::Centered => make_spatial_mask(size, sigma_s),
        MaskForm::LiteralSum => make_spatial_mask_literal(size, sigma_s),
    }
}

/// Combined fusion weight of one pixel: `posterior × mask(dx, dy)`.
///
/// Errors if the offset lies outside the mask footprint.
pub fn pixel_weight(pp: &PatchPosterior, mask: &SpatialMask, offset: (usize, usize)) -> Result<f64> {
    let (dx, dy) = offset;
    if dx >= mask.size || dy >= mask.size {
        return Err(Error::OffsetOutOfPatch { dx, dy, size: mask.size });
    }
    Ok(pp.posterior * mask.weight(dx, dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gradient_x;
    use crate::patch::{make_template, solve_patch};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn const_template(size: usize, value: f32) -> PatchTemplate {
        let img = GrayImage::constant(32, 32, value);
        let grad = gradient_x(&img).unwrap();
        make_template(&img, &grad, (8, 8), size, 0.75, 1.0).unwrap()
    }

    #[test]
    fn boltzmann_closed_forms() {
        // Constant per-pixel residual c on a fully valid patch with σ_r = 4:
        // exponent = c² / (2·σ_r²) once the area rescale cancels the count.
        let tmpl = const_template(8, 100.0);
        let right4 = GrayImage::constant(32, 32, 104.0);
        let p = illumination_probability(&tmpl, &right4, 0.0, 4.0).unwrap();
        assert!((p - (-0.5f64).exp()).abs() < 1e-12);

        let right8 = GrayImage::constant(32, 32, 108.0);
        let p = illumination_probability(&tmpl, &right8, 0.0, 4.0).unwrap();
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn partial_validity_is_rescaled() {
        // Half the template rows invalid; same constant residual 4 must give
        // the same exp(−0.5) because R is rescaled by s²/valid_count.
        let w = 32;
        let valid: Vec<bool> = (0..w * 32).map(|i| (i / w) % 2 == 0).collect();
        let img = GrayImage::from_parts(w, 32, vec![100.0; w * 32], valid).unwrap();
        let grad = gradient_x(&img).unwrap();
        let tmpl = make_template(&img, &grad, (8, 8), 8, 0.25, 0.0).unwrap();
        assert_eq!(tmpl.valid_count(), 32);
        let right = GrayImage::constant(w, 32, 104.0);
        let p = illumination_probability(&tmpl, &right, 0.0, 4.0).unwrap();
        assert!((p - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn likelihood_strictly_decreases_with_residual() {
        let tmpl = const_template(8, 100.0);
        let mut last = f64::INFINITY;
        for c in 1..=10 {
            let right = GrayImage::constant(32, 32, 100.0 + c as f32);
            let p = illumination_probability(&tmpl, &right, 0.0, 4.0).unwrap();
            assert!(p < last, "p({c}) = {p} not below {last}");
            last = p;
        }
    }

    #[test]
    fn probability_errors() {
        let tmpl = const_template(8, 100.0);
        let right = GrayImage::constant(32, 32, 104.0);
        assert!(matches!(
            illumination_probability(&tmpl, &right, 30.0, 4.0),
            Err(Error::WarpOutOfBounds)
        ));
        let dead = GrayImage::from_parts(32, 32, vec![0.0; 32 * 32], vec![false; 32 * 32]).unwrap();
        assert!(matches!(
            illumination_probability(&tmpl, &dead, 0.0, 4.0),
            Err(Error::NoValidPixels)
        ));
    }

    fn converged(disparity: f64) -> PatchEstimate {
        PatchEstimate {
            patch_id: 3,
            origin: (8, 8),
            disparity,
            residual_ss: 0.0,
            iterations: 1,
            status: PatchStatus::Converged,
        }
    }

    #[test]
    fn uniform_window_posterior_is_exactly_one_fifth() {
        // A constant template against a constant right image: every window
        // sample has the same residual, so the posterior is exactly 1/5.
        let cfg = SolverConfig::default();
        let tmpl = const_template(8, 100.0);
        let right = GrayImage::constant(32, 32, 104.0);
        let pp = window_posterior(&tmpl, &right, &converged(2.0), &cfg).unwrap();
        assert_eq!(pp.posterior, 0.2);
        assert_eq!(pp.window_disparities, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(pp.window_likelihoods.len(), 5);
        let l0 = pp.window_likelihoods[0];
        assert!(pp.window_likelihoods.iter().all(|&l| l == l0));
    }

    #[test]
    fn posterior_matches_explicit_enumeration() {
        // Independent recomputation: sample the five disparities with the
        // test's own interpolation and Boltzmann formula, then normalize.
        let cfg = SolverConfig::default();
        let img = GrayImage::from_fn(48, 24, |x, y| {
            (110.0 + 45.0 * (0.5 * x as f64 + 0.2 * y as f64).sin()) as f32
        });
        let grad = gradient_x(&img).unwrap();
        let tmpl = make_template(&img, &grad, (20, 8), 8, 0.75, 1.0).unwrap();
        let est = solve_patch(&tmpl, &img, 0.3, &cfg);
        assert_eq!(est.status, PatchStatus::Converged);
        let pp = window_posterior(&tmpl, &img, &est, &cfg).unwrap();

        let mut enumerated = Vec::new();
        for i in -2i32..=2 {
            let u = est.disparity + f64::from(i) * cfg.window_spacing;
            let mut ss = 0.0;
            let mut n = 0usize;
            for dy in 0..8 {
                for dx in 0..8 {
                    let (x, y) = (20 + dx, 8 + dy);
                    let pos = x as f64 - u;
                    let x0 = pos.floor();
                    let f = pos - x0;
                    let a = f64::from(img.pixel(x0 as usize, y));
                    let b = f64::from(img.pixel((x0 as usize + 1).min(47), y));
                    let r = f64::from(img.pixel(x, y)) - ((1.0 - f) * a + f * b);
                    ss += r * r;
                    n += 1;
                }
            }
            let rescaled = ss * 64.0 / n as f64;
            enumerated.push((-rescaled / (2.0 * 16.0 * 64.0)).exp());
        }
        let total: f64 = enumerated.iter().sum();
        let expected = enumerated[2] / total;
        assert_relative_eq!(pp.posterior, expected, max_relative = 1e-12);
        for (got, want) in pp.window_likelihoods.iter().zip(&enumerated) {
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn posterior_survives_likelihood_underflow() {
        // Residual ~200 per pixel: raw likelihoods underflow to 0, but the
        // normalized posterior must stay finite and in (0, 1].
        let cfg = SolverConfig::default();
        let tmpl = const_template(8, 10.0);
        let right = GrayImage::constant(32, 32, 250.0);
        let pp = window_posterior(&tmpl, &right, &converged(2.0), &cfg).unwrap();
        assert_eq!(pp.window_likelihoods[2], 0.0);
        assert_eq!(pp.posterior, 0.2);
    }

    #[test]
    fn compensation_ratio_scales_posterior() {
        let tmpl = const_template(8, 100.0);
        let right = GrayImage::constant(32, 32, 104.0);
        let base = SolverConfig::default();
        let scaled = SolverConfig { compensation_ratio: 2.0, ..base.clone() };
        let p1 = window_posterior(&tmpl, &right, &converged(2.0), &base).unwrap();
        let p2 = window_posterior(&tmpl, &right, &converged(2.0), &scaled).unwrap();
        assert_eq!(p2.posterior, 2.0 * p1.posterior);
        assert_eq!(p2.compensation_ratio, 2.0);
    }

    #[test]
    fn window_excludes_out_of_bounds_samples() {
        let cfg = SolverConfig::default();
        let img = GrayImage::from_fn(32, 32, |x, y| (x * 7 % 23 + y) as f32 + 30.0);
        let grad = gradient_x(&img).unwrap();
        let tmpl = make_template(&img, &grad, (0, 8), 8, 0.75, 1.0).unwrap();
        // Window around 0: samples +0.5 and +1.0 warp past the left border.
        let pp = window_posterior(&tmpl, &img, &converged(0.0), &cfg).unwrap();
        assert_eq!(pp.window_disparities, vec![-1.0, -0.5, 0.0]);
        assert!(pp.posterior > 0.0 && pp.posterior <= 1.0);
    }

    #[test]
    fn textured_windows_discriminate_flat_windows_do_not() {
        let cfg = SolverConfig::default();
        // Constant patch: flat likelihood profile, max/min == 1.
        let tmpl = const_template(8, 100.0);
        let right = GrayImage::constant(32, 32, 104.0);
        let flat = window_posterior(&tmpl, &right, &converged(2.0), &cfg).unwrap();
        let (lo, hi) = flat
            .window_likelihoods
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        assert_eq!(hi / lo, 1.0);

        // Textured patch: the profile peaks at the solution.
        let img = GrayImage::from_fn(48, 24, |x, y| {
            (110.0 + 45.0 * (0.5 * x as f64 + 0.2 * y as f64).sin()) as f32
        });
        let grad = gradient_x(&img).unwrap();
        let tmpl = make_template(&img, &grad, (20, 8), 8, 0.75, 1.0).unwrap();
        let est = solve_patch(&tmpl, &img, 0.3, &cfg);
        let peaked = window_posterior(&tmpl, &img, &est, &cfg).unwrap();
        let (lo, hi) = peaked
            .window_likelihoods
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        assert!(hi / lo > 1.0);
    }

    #[test]
    fn mask_center_symmetry_and_corner() {
        let mask = make_spatial_mask(8, 4.0);
        // Corner offset (0,0): distance² = 3.5² + 3.5² = 24.5, σ denominator 32.
        assert!((mask.weight(0, 0) - (-24.5f64 / 32.0).exp()).abs() < 1e-12);
        // Symmetry across both axes.
        for dy in 0..8 {
            for dx in 0..8 {
                assert_relative_eq!(mask.weight(dx, dy), mask.weight(7 - dx, dy), max_relative = 1e-12);
                assert_relative_eq!(mask.weight(dx, dy), mask.weight(dx, 7 - dy), max_relative = 1e-12);
            }
        }
        // The four center pixels carry the maximum.
        let m = mask.weight(3, 3);
        assert!(mask.weights.iter().all(|&w| w <= m && w > 0.0));
    }

    #[test]
    fn unit_mask_is_one() {
        let mask = make_spatial_mask(1, 4.0);
        assert_eq!(mask.weight(0, 0), 1.0);
    }

    #[test]
    fn literal_mask_matches_closed_form() {
        let (size, sigma) = (8usize, 4.0f64);
        let mask = make_spatial_mask_literal(size, sigma);
        let c = (size as f64 - 1.0) / 2.0;
        // Σ_q ‖p−q‖² = s²·‖p−c‖² + Σ_q ‖q−c‖²
        let mut spread = 0.0;
        for qy in 0..size {
            for qx in 0..size {
                spread += (qx as f64 - c).powi(2) + (qy as f64 - c).powi(2);
            }
        }
        for dy in 0..size {
            for dx in 0..size {
                let d2 = (dx as f64 - c).powi(2) + (dy as f64 - c).powi(2);
                let expected = (-(((size * size) as f64) * d2 + spread) / (2.0 * sigma * sigma)).exp();
                assert_relative_eq!(mask.weight(dx, dy), expected, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn pixel_weight_is_checked_product() {
        let mask = make_spatial_mask(8, 4.0);
        let pp = PatchPosterior {
            patch_id: 0,
            center_disparity: 1.0,
            window_disparities: vec![1.0],
            window_likelihoods: vec![1.0],
            posterior: 0.5,
            compensation_ratio: 1.0,
        };
        let w = pixel_weight(&pp, &mask, (3, 3)).unwrap();
        assert_relative_eq!(w, 0.5 * mask.weight(3, 3), max_relative = 1e-15);
        assert!(matches!(
            pixel_weight(&pp, &mask, (8, 0)),
            Err(Error::OffsetOutOfPatch { .. })
        ));
    }

    proptest! {
        /// Masks are separable into identical 1D Gaussians (within 1e−12) and
        /// symmetric; posteriors of full windows normalize to 1 within a few ulp.
        #[test]
        fn mask_is_separable(size in 1usize..16, sigma in 0.5f64..10.0) {
            let mask = make_spatial_mask(size, sigma);
            let c = (size as f64 - 1.0) / 2.0;
            let g1 = |t: f64| (-(t - c) * (t - c) / (2.0 * sigma * sigma)).exp();
            for dy in 0..size {
                for dx in 0..size {
                    let expected = g1(dx as f64) * g1(dy as f64);
                    prop_assert!((mask.weight(dx, dy) - expected).abs() < 1e-12);
                }
            }
        }

        /// Over a full (no-exclusion) window, normalized likelihoods sum to 1.
        #[test]
        fn posterior_normalizes(shift in 0.5f64..3.0) {
            let cfg = SolverConfig::default();
            let img = GrayImage::from_fn(64, 24, |x, y| {
                (110.0 + 45.0 * (0.5 * x as f64 + 0.2 * y as f64).sin()) as f32
            });
            let grad = gradient_x(&img).unwrap();
            let tmpl = make_template(&img, &grad, (24, 8), 8, 0.75, 1.0).unwrap();
            let right = GrayImage::from_fn(64, 24, |x, y| {
                (110.0 + 45.0 * (0.5 * (x as f64 + shift) + 0.2 * y as f64).sin()) as f32
            });
            let est = solve_patch(&tmpl, &right, shift.round(), &cfg);
            prop_assume!(est.status == PatchStatus::Converged);
            let pp = window_posterior(&tmpl, &right, &est, &cfg).unwrap();
            prop_assert_eq!(pp.window_disparities.len(), 5);
            prop_assert!(pp.posterior > 0.0 && pp.posterior <= 1.0);
            let sum: f64 = pp.window_likelihoods.iter().map(|l| l / pp.window_likelihoods.iter().sum::<f64>()).sum();
            prop_assert!((sum - 1.0).abs() < 1e-14);
        }
    }
}
