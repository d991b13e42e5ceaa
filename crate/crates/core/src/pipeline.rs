//! End-to-end disparity pipeline: pyramids, per-level patch grids, solves,
//! confidence weighting, and fusion, coarse to fine.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse_bayesian, fuse_residual, upsample_disparity, DisparityMap, FusionMode};
use crate::image::{build_pyramid, gradient_x, GrayImage};
use crate::patch::{make_template, saddle_check, solve_patch, PatchEstimate, PatchStatus};
use crate::weighting::{make_spatial_mask_form, window_posterior};

/// Wall-clock and outcome accounting for one pyramid level.
#[derive(Debug, Clone, Default)]
pub struct LevelStats {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    /// Patches in the level's grid.
    pub patches: usize,
    /// Estimates that survived to fusion.
    pub fused: usize,
    pub converged: usize,
    pub saddle_rejected: usize,
    pub degenerate: usize,
    pub insufficient_valid: usize,
    pub out_of_bounds: usize,
    pub max_iterations: usize,
    /// Gradient, grid, and init-map preparation.
    pub prep_ms: f64,
    /// Template construction and Gauss–Newton solves.
    pub solve_ms: f64,
    /// Saddle vetting and posterior computation (Bayesian mode only).
    pub weight_ms: f64,
    /// Fusion into the level's dense map.
    pub fuse_ms: f64,
}

/// Timing breakdown of one pipeline run.
#[derive(Debug, Clone, Default)]
pub struct PipelineStats {
    /// Pyramid construction for both images.
    pub pyramid_ms: f64,
    /// Indexed by level; 0 is the finest.
    pub levels: Vec<LevelStats>,
    /// Wall time of the whole computation.
    pub total_ms: f64,
}

impl PipelineStats {
    /// Sum of all recorded stage times. In a single-threaded run this tracks
    /// `total_ms` closely; the difference is unattributed overhead.
    pub fn stage_sum_ms(&self) -> f64 {
        self.pyramid_ms
            + self
                .levels
                .iter()
                .map(|l| l.prep_ms + l.solve_ms + l.weight_ms + l.fuse_ms)
                .sum::<f64>()
    }
}

/// Top-left origins of the patch grid over a `width`×`height` level,
/// row-major. Origins advance by `stride`; if the last stride step does not
/// land a patch flush against the border, an extra clamped origin is added so
/// every pixel is covered. Empty if a patch does not fit.
pub fn patch_grid(width: usize, height: usize, patch_size: usize, stride: usize) -> Vec<(usize, usize)> {
    if patch_size == 0 || stride == 0 || patch_size > width || patch_size > height {
        return Vec::new();
    }
    let axis = |extent: usize| {
        let mut out = Vec::new();
        let mut p = 0;
        while p + patch_size <= extent {
            out.push(p);
            p += stride;
        }
        let last = extent - patch_size;
        if *out.last().unwrap() != last {
            out.push(last);
        }
        out
    };
    let xs = axis(width);
    let ys = axis(height);
    let mut grid = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            grid.push((x, y));
        }
    }
    grid
}

/// Initial disparity for a patch: the upsampled coarser map sampled at the
/// patch center, falling back to the mean of valid pixels in the footprint,
/// then to 0.
fn init_disparity(init_map: Option<&DisparityMap>, origin: (usize, usize), size: usize) -> f64 {
    let Some(map) = init_map else { return 0.0 };
    let (cx, cy) = (origin.0 + size / 2, origin.1 + size / 2);
    if map.is_valid(cx, cy) {
        return f64::from(map.disparity(cx, cy));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for dy in 0..size {
        for dx in 0..size {
            if map.is_valid(origin.0 + dx, origin.1 + dy) {
                sum += f64::from(map.disparity(origin.0 + dx, origin.1 + dy));
                n += 1;
            }
        }
    }
    if n > 0 {
        sum / n as f64
    } else {
        0.0
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn run(
    left: &GrayImage,
    right: &GrayImage,
    cfg: &SolverConfig,
    keep_trace: bool,
) -> Result<(DisparityMap, PipelineStats, Vec<DisparityMap>)> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch {
            expected_w: left.width(),
            expected_h: left.height(),
            got_w: right.width(),
            got_h: right.height(),
        });
    }
    cfg.validate()?;
    let (mut cw, mut ch) = (left.width(), left.height());
    for _ in 1..cfg.num_levels {
        cw /= 2;
        ch /= 2;
    }
    if cw < cfg.patch_size || ch < cfg.patch_size {
        return Err(Error::Config(format!(
            "num_levels {} leaves a {cw}x{ch} coarsest level, smaller than one {}px patch",
            cfg.num_levels, cfg.patch_size
        )));
    }

    let t_total = Instant::now();
    let t = Instant::now();
    let left_pyr = build_pyramid(left, cfg.num_levels)?;
    let right_pyr = build_pyramid(right, cfg.num_levels)?;
    let pyramid_ms = ms(t);

    let mask = make_spatial_mask_form(cfg.patch_size, cfg.sigma_s, cfg.mask_form);
    let mut stats = PipelineStats {
        pyramid_ms,
        levels: vec![LevelStats::default(); cfg.num_levels],
        total_ms: 0.0,
    };
    let mut trace: Vec<DisparityMap> = Vec::new();
    if keep_trace {
        trace.resize(cfg.num_levels, DisparityMap::new_invalid(1, 1));
    }

    let mut prev: Option<DisparityMap> = None;
    for level in (0..cfg.num_levels).rev() {
        let level_left = left_pyr.level(level);
        let level_right = right_pyr.level(level);
        let (w, h) = (level_left.width(), level_left.height());
        // The search bound shrinks with the level scale.
        let level_cfg = SolverConfig {
            max_disparity: cfg.max_disparity / (1 << level) as f64,
            ..cfg.clone()
        };

        let t = Instant::now();
        let grad = gradient_x(level_left)?;
        let init_map = prev.take().map(|m| upsample_disparity(&m, w, h));
        let grid = patch_grid(w, h, cfg.patch_size, cfg.patch_stride);
        let prep_ms = ms(t);

        let t = Instant::now();
        let estimates: Vec<PatchEstimate> = grid
            .par_iter()
            .enumerate()
            .map(|(i, &origin)| {
                let tmpl = make_template(level_left, &grad, origin, cfg.patch_size, cfg.gamma, cfg.h_min)?;
                let init = init_disparity(init_map.as_ref(), origin, cfg.patch_size);
                let mut est = solve_patch(&tmpl, level_right, init, &level_cfg);
                est.patch_id = i;
                Ok(est)
            })
            .collect::<Result<_>>()?;
        let solve_ms = ms(t);

        let lstats = &mut stats.levels[level];
        lstats.level = level;
        lstats.width = w;
        lstats.height = h;
        lstats.patches = estimates.len();

        let (map, weight_ms, fuse_ms) = match cfg.fusion_mode {
            FusionMode::ResidualInverse => {
                for est in &estimates {
                    match est.status {
                        PatchStatus::Converged => lstats.converged += 1,
                        PatchStatus::MaxIterations => lstats.max_iterations += 1,
                        PatchStatus::Degenerate => lstats.degenerate += 1,
                        PatchStatus::OutOfBounds => lstats.out_of_bounds += 1,
                        PatchStatus::InsufficientValid => lstats.insufficient_valid += 1,
                        PatchStatus::SaddleRejected => lstats.saddle_rejected += 1,
                    }
                }
                let survivors: Vec<PatchEstimate> = estimates
                    .into_iter()
                    .filter(|e| e.status == PatchStatus::Converged)
                    .collect();
                lstats.fused = survivors.len();
                let t = Instant::now();
                let map = fuse_residual(&survivors, level_left, level_right, cfg.patch_size)?;
                (map, 0.0, ms(t))
            }
            FusionMode::Bayesian => {
                // Vet converged estimates against disturbances, then compute
                // posteriors for the survivors. Order is preserved, so fusion
                // still sees strictly increasing patch ids.
                let t = Instant::now();
                let vetted: Vec<PatchEstimate> = estimates
                    .into_par_iter()
                    .map(|est| {
                        if est.status == PatchStatus::Converged {
                            let tmpl = make_template(
                                level_left,
                                &grad,
                                est.origin,
                                cfg.patch_size,
                                cfg.gamma,
                                cfg.h_min,
                            )?;
                            Ok(saddle_check(&tmpl, level_right, est, &cfg.disturbances))
                        } else {
                            Ok(est)
                        }
                    })
                    .collect::<Result<_>>()?;
                for est in &vetted {
                    match est.status {
                        PatchStatus::Converged => lstats.converged += 1,
                        PatchStatus::MaxIterations => lstats.max_iterations += 1,
                        PatchStatus::Degenerate => lstats.degenerate += 1,
                        PatchStatus::OutOfBounds => lstats.out_of_bounds += 1,
                        PatchStatus::InsufficientValid => lstats.insufficient_valid += 1,
                        PatchStatus::SaddleRejected => lstats.saddle_rejected += 1,
                    }
                }
                let survivors: Vec<PatchEstimate> = vetted
                    .into_iter()
                    .filter(|e| e.status == PatchStatus::Converged)
                    .collect();
                let posteriors = survivors
                    .par_iter()
                    .map(|est| {
                        let tmpl = make_template(
                            level_left,
                            &grad,
                            est.origin,
                            cfg.patch_size,
                            cfg.gamma,
                            cfg.h_min,
                        )?;
                        window_posterior(&tmpl, level_right, est, &level_cfg)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let weight_ms = ms(t);
                lstats.fused = survivors.len();
                let t = Instant::now();
                let map = fuse_bayesian(&survivors, &posteriors, &mask, w, h)?;
                (map, weight_ms, ms(t))
            }
        };
        lstats.prep_ms = prep_ms;
        lstats.solve_ms = solve_ms;
        lstats.weight_ms = weight_ms;
        lstats.fuse_ms = fuse_ms;

        if keep_trace {
            trace[level] = map.clone();
        }
        prev = Some(map);
    }

    stats.total_ms = ms(t_total);
    Ok((prev.unwrap(), stats, trace))
}

/// Computes the dense disparity map of a rectified pair.
///
/// Both images must have identical dimensions, and the coarsest pyramid level
/// must still fit one patch. The result has the input resolution; pixels not
/// covered by any surviving patch are invalid.
pub fn compute_disparity(left: &GrayImage, right: &GrayImage, cfg: &SolverConfig) -> Result<DisparityMap> {
    run(left, right, cfg, false).map(|(map, _, _)| map)
}

/// Like [`compute_disparity`], additionally returning per-stage wall times
/// and patch outcome counts.
pub fn compute_disparity_with_stats(
    left: &GrayImage,
    right: &GrayImage,
    cfg: &SolverConfig,
) -> Result<(DisparityMap, PipelineStats)> {
    run(left, right, cfg, false).map(|(map, stats, _)| (map, stats))
}

/// Like [`compute_disparity`], additionally returning every level's fused map
/// (index 0 = finest). Intended for diagnostics and tests.
pub fn compute_disparity_trace(
    left: &GrayImage,
    right: &GrayImage,
    cfg: &SolverConfig,
) -> Result<(DisparityMap, Vec<DisparityMap>)> {
    run(left, right, cfg, true).map(|(map, _, trace)| (map, trace))
}
