//! Patch-wise disparity solver.
//!
//! A patch is an `s`×`s` template cut from the left image. The solver runs an
//! inverse-search Gauss–Newton iteration: gradients and the scalar Hessian are
//! computed once on the template, and each iteration only samples the right
//! image along the epipolar (horizontal) line. The right image is never
//! differentiated — it is touched exclusively through intensity sampling.
//!
//! Disparity sign convention: `u >= 0` means the left-image feature appears
//! `u` pixels to the left in the right image, i.e. the solver compares
//! `I_l(x)` against `I_r(x - u)`.

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Whether a template carries enough signal to be solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateViability {
    /// Enough valid pixels and enough texture.
    Viable,
    /// Fewer valid pixels than the γ·s² floor.
    InsufficientValid,
    /// Hessian below the minimum — gradient too weak to invert.
    Degenerate,
}

/// Precomputed left-image patch: intensities, horizontal gradients, and the
/// scalar Gauss–Newton Hessian. Built once per patch and never re-evaluated
/// during iteration.
#[derive(Debug, Clone)]
pub struct PatchTemplate {
    origin: (usize, usize),
    size: usize,
    intensities: Vec<f32>,
    valid: Vec<bool>,
    grad: Vec<f64>,
    grad_valid: Vec<bool>,
    hessian: f64,
    valid_count: usize,
    viability: TemplateViability,
}

impl PatchTemplate {
    /// Top-left corner of the patch in image coordinates.
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    /// Side length in pixels.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Sum of squared horizontal gradients over gradient-valid pixels.
    pub fn hessian(&self) -> f64 {
        self.hessian
    }

    /// Count of intensity-valid pixels in the window.
    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn viability(&self) -> TemplateViability {
        self.viability
    }

    /// Template intensity at patch-local `(dx, dy)`.
    pub fn intensity(&self, dx: usize, dy: usize) -> f32 {
        self.intensities[dy * self.size + dx]
    }

    /// Validity of the template pixel at patch-local `(dx, dy)`.
    pub fn is_valid(&self, dx: usize, dy: usize) -> bool {
        self.valid[dy * self.size + dx]
    }
}

/// Terminal state of a patch solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchStatus {
    /// Iteration terminated with a step below the convergence threshold (or at
    /// a point no step could improve).
    Converged,
    /// Iteration cap reached before the step shrank below the threshold.
    MaxIterations,
    /// Template Hessian below the minimum; never solved.
    Degenerate,
    /// The warped patch left the right image.
    OutOfBounds,
    /// Converged, but a disturbed disparity had a lower residual — the
    /// solution sits on an unstable point and is rejected.
    SaddleRejected,
    /// Too few valid pixels (template below the γ floor, or no jointly-valid
    /// pixels with the right image).
    InsufficientValid,
}

/// Result of solving one patch. Only `Converged` estimates may enter fusion.
#[derive(Debug, Clone)]
pub struct PatchEstimate {
    /// Index of the patch in its level's grid; fusion accumulates in this
    /// order to stay deterministic.
    pub patch_id: usize,
    /// Top-left corner of the patch in image coordinates.
    pub origin: (usize, usize),
    /// Estimated horizontal displacement in pixels.
    pub disparity: f64,
    /// Sum of squared residuals at the final disparity over pixels valid in
    /// both images. NaN when the solve never evaluated a residual.
    pub residual_ss: f64,
    /// Gauss–Newton iterations used.
    pub iterations: u32,
    pub status: PatchStatus,
}

/// Cuts an `size`×`size` template at `origin` from the left image.
///
/// `grad` must be the [`crate::image::gradient_x`] raster of `left`. The
/// template is flagged `InsufficientValid` when fewer than `gamma · size²`
/// pixels are valid, and `Degenerate` when the Hessian falls below `h_min`.
pub fn make_template(
    left: &GrayImage,
    grad: &GrayImage,
    origin: (usize, usize),
    size: usize,
    gamma: f64,
    h_min: f64,
) -> Result<PatchTemplate> {
    if grad.width() != left.width() || grad.height() != left.height() {
        return Err(Error::Contract("gradient raster does not match the left image".into()));
    }
    let (x, y) = origin;
    if size == 0 || x + size > left.width() || y + size > left.height() {
        return Err(Error::PatchOutOfBounds {
            x,
            y,
            size,
            width: left.width(),
            height: left.height(),
        });
    }

    let n = size * size;
    let mut intensities = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut grad_valid = Vec::with_capacity(n);
    let mut hessian = 0.0f64;
    let mut valid_count = 0usize;
    for dy in 0..size {
        let irow = left.row(y + dy);
        let ivalid = left.valid_row(y + dy);
        let grow = grad.row(y + dy);
        let gvalid = grad.valid_row(y + dy);
        for dx in 0..size {
            let ok = ivalid[x + dx];
            intensities.push(irow[x + dx]);
            valid.push(ok);
            valid_count += usize::from(ok);
            let gok = gvalid[x + dx];
            let gv = if gok { f64::from(grow[x + dx]) } else { 0.0 };
            g.push(gv);
            grad_valid.push(gok);
            hessian += gv * gv;
        }
    }

    let viability = if (valid_count as f64) < gamma * (n as f64) {
        TemplateViability::InsufficientValid
    } else if hessian < h_min {
        TemplateViability::Degenerate
    } else {
        TemplateViability::Viable
    };

    Ok(PatchTemplate {
        origin,
        size,
        intensities,
        valid,
        grad: g,
        grad_valid,
        hessian,
        valid_count,
        viability,
    })
}

/// True when every sample of the template warped by `u` lands inside the
/// right image. The warp is purely horizontal, so only the first and last
/// column positions need checking.
#[inline]
fn warp_in_bounds(tmpl: &PatchTemplate, right_width: usize, u: f64) -> bool {
    let first = tmpl.origin.0 as f64 - u;
    let last = (tmpl.origin.0 + tmpl.size - 1) as f64 - u;
    first >= 0.0 && last <= (right_width - 1) as f64
}

/// Sum of squared residuals `I_l(x) − I_r(x − u)` over pixels valid in both
/// images, with linear interpolation along the row for fractional `u`.
///
/// Returns the raw sum and the jointly-valid pixel count. Errors with
/// `WarpOutOfBounds` if the warped patch leaves the right image and
/// `NoValidPixels` if no pixel is valid in both images.
pub(crate) fn warped_residual_ss(
    tmpl: &PatchTemplate,
    right: &GrayImage,
    u: f64,
) -> Result<(f64, usize)> {
    if !warp_in_bounds(tmpl, right.width(), u) {
        return Err(Error::WarpOutOfBounds);
    }
    let s = tmpl.size;
    let base = tmpl.origin.0 as f64 - u;
    let x0 = base.floor();
    let fx = base - x0;
    let ix = x0 as usize;
    let mut ss = 0.0f64;
    let mut n = 0usize;
    if fx == 0.0 {
        for dy in 0..s {
            let row = right.row(tmpl.origin.1 + dy);
            let vrow = right.valid_row(tmpl.origin.1 + dy);
            let ti = dy * s;
            for dx in 0..s {
                if tmpl.valid[ti + dx] && vrow[ix + dx] {
                    let r = f64::from(tmpl.intensities[ti + dx]) - f64::from(row[ix + dx]);
                    ss += r * r;
                    n += 1;
                }
            }
        }
    } else {
        let (w0, w1) = (1.0 - fx, fx);
        for dy in 0..s {
            let row = right.row(tmpl.origin.1 + dy);
            let vrow = right.valid_row(tmpl.origin.1 + dy);
            let ti = dy * s;
            for dx in 0..s {
                if tmpl.valid[ti + dx] && vrow[ix + dx] && vrow[ix + dx + 1] {
                    let sample = w0 * f64::from(row[ix + dx]) + w1 * f64::from(row[ix + dx + 1]);
                    let r = f64::from(tmpl.intensities[ti + dx]) - sample;
                    ss += r * r;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok((ss, n))
}

/// Gauss–Newton numerator `Σ g(x) · (I_r(x − u) − I_l(x))` over pixels with a
/// valid template gradient and valid right-image taps. Bounds must have been
/// checked by the caller.
fn gn_numerator(tmpl: &PatchTemplate, right: &GrayImage, u: f64) -> f64 {
    let s = tmpl.size;
    let base = tmpl.origin.0 as f64 - u;
    let x0 = base.floor();
    let fx = base - x0;
    let ix = x0 as usize;
    let mut num = 0.0f64;
    if fx == 0.0 {
        for dy in 0..s {
            let row = right.row(tmpl.origin.1 + dy);
            let vrow = right.valid_row(tmpl.origin.1 + dy);
            let ti = dy * s;
            for dx in 0..s {
                if tmpl.grad_valid[ti + dx] && vrow[ix + dx] {
                    num += tmpl.grad[ti + dx]
                        * (f64::from(row[ix + dx]) - f64::from(tmpl.intensities[ti + dx]));
                }
            }
        }
    } else {
        let (w0, w1) = (1.0 - fx, fx);
        for dy in 0..s {
            let row = right.row(tmpl.origin.1 + dy);
            let vrow = right.valid_row(tmpl.origin.1 + dy);
            let ti = dy * s;
            for dx in 0..s {
                if tmpl.grad_valid[ti + dx] && vrow[ix + dx] && vrow[ix + dx + 1] {
                    let sample = w0 * f64::from(row[ix + dx]) + w1 * f64::from(row[ix + dx + 1]);
                    num += tmpl.grad[ti + dx] * (sample - f64::from(tmpl.intensities[ti + dx]));
                }
            }
        }
    }
    num
}

/// Solves one patch for horizontal disparity starting from `init`.
///
/// Each iteration applies the inverse-search update `Δu = Σ g·(I_r(x−u) −
/// I_l(x)) / hessian`, `u ← u + Δu`. A step that would increase the residual
/// is halved up to three times; if candidates exist but none descends, the
/// solve terminates at the best disparity found. If instead every candidate
/// leaves the searchable warp range while the solver still wants to move by
/// at least the convergence threshold, the optimum is unreachable inside the
/// right image and the patch is reported `OutOfBounds` (common for patches
/// flush against the left border, whose true match lies past the border).
/// Disparities are clamped to `[-1, cfg.max_disparity]` (small negative slack
/// absorbs calibration error).
pub fn solve_patch(
    tmpl: &PatchTemplate,
    right: &GrayImage,
    init: f64,
    cfg: &SolverConfig,
) -> PatchEstimate {
    let mut est = PatchEstimate {
        patch_id: 0,
        origin: tmpl.origin,
        disparity: init,
        residual_ss: f64::NAN,
        iterations: 0,
        status: PatchStatus::Converged,
    };
    match tmpl.viability {
        TemplateViability::InsufficientValid => {
            est.status = PatchStatus::InsufficientValid;
            return est;
        }
        TemplateViability::Degenerate => {
            est.status = PatchStatus::Degenerate;
            return est;
        }
        TemplateViability::Viable => {}
    }

    let bound = cfg.max_disparity;
    let mut u = init.clamp(-1.0, bound);
    let (mut residual_ss, _) = match warped_residual_ss(tmpl, right, u) {
        Ok(v) => v,
        Err(Error::WarpOutOfBounds) => {
            est.disparity = u;
            est.status = PatchStatus::OutOfBounds;
            return est;
        }
        Err(_) => {
            est.disparity = u;
            est.status = PatchStatus::InsufficientValid;
            return est;
        }
    };

    let mut status = PatchStatus::MaxIterations;
    for iter in 1..=cfg.max_iterations {
        est.iterations = iter;
        let step = gn_numerator(tmpl, right, u) / tmpl.hessian;
        let mut accepted = None;
        let mut evaluated_any = false;
        let mut scale = 1.0f64;
        for _ in 0..4 {
            let cand = (u + step * scale).clamp(-1.0, bound);
            if let Ok((r_cand, _)) = warped_residual_ss(tmpl, right, cand) {
                evaluated_any = true;
                if r_cand <= residual_ss {
                    accepted = Some((cand, r_cand));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, r_cand)) => {
                let moved = (cand - u).abs();
                u = cand;
                residual_ss = r_cand;
                if moved < cfg.convergence_eps {
                    status = PatchStatus::Converged;
                    break;
                }
            }
            None if !evaluated_any && step.abs() >= cfg.convergence_eps => {
                // Every candidate left the warp range while the solver still
                // wanted a real move: the optimum is not observable here.
                status = PatchStatus::OutOfBounds;
                break;
            }
            None => {
                // No admissible step descends: the current point is the best
                // this iteration can reach.
                status = PatchStatus::Converged;
                break;
            }
        }
    }

    est.disparity = u;
    est.residual_ss = residual_ss;
    est.status = status;
    est
}

/// Vets a converged estimate against small disparity disturbances.
///
/// The residual is re-evaluated at `u ± d` for every `d` in `disturbances`;
/// if any disturbed residual is strictly lower than the converged residual,
/// the estimate sits on a saddle or local maximum of the residual landscape
/// and its status becomes `SaddleRejected`. Disturbances whose warp leaves
/// the right image are skipped. Non-`Converged` estimates pass through
/// unchanged.
pub fn saddle_check(
    tmpl: &PatchTemplate,
    right: &GrayImage,
    mut est: PatchEstimate,
    disturbances: &[f64],
) -> PatchEstimate {
    if est.status != PatchStatus::Converged {
        return est;
    }
    for &d in disturbances {
        for u_d in [est.disparity + d, est.disparity - d] {
            if let Ok((r_d, _)) = warped_residual_ss(tmpl, right, u_d) {
                if r_d < est.residual_ss {
                    est.status = PatchStatus::SaddleRejected;
                    return est;
                }
            }
        }
    }
    est
}
