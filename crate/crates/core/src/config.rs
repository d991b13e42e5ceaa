//! Solver configuration: tuned defaults, resolution-dependent profiles,
//! validation, and the `key = value` config-file format.

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::weighting::{BoltzmannScale, MaskForm};

/// All tunables of the disparity pipeline.
///
/// `Default::default()` is the 640×480 profile; [`SolverConfig::for_size`]
/// picks the profile from the input resolution. Field names double as the
/// keys of the config-file format.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Patch side length in pixels.
    pub patch_size: usize,
    /// Horizontal and vertical spacing of the patch grid. Must not exceed
    /// `patch_size`, so the grid covers every pixel.
    pub patch_stride: usize,
    /// Pyramid depth (1 = single level).
    pub num_levels: usize,
    /// Residual (photometric) standard deviation of the match likelihood.
    pub sigma_r: f64,
    /// Spatial standard deviation of the per-patch pixel mask.
    pub sigma_s: f64,
    /// Minimum fraction of valid pixels a template needs to be solved.
    pub gamma: f64,
    /// Number of disparities sampled by the windowed posterior (odd).
    pub window_samples: usize,
    /// Spacing in pixels between window samples.
    pub window_spacing: f64,
    /// Disturbance magnitudes (pixels) used by the saddle check.
    pub disturbances: Vec<f64>,
    /// Posterior compensation ratio `r` (default 1 = no compensation).
    pub compensation_ratio: f64,
    /// Gauss–Newton terminates once the applied step is below this (pixels).
    pub convergence_eps: f64,
    /// Iteration cap per patch.
    pub max_iterations: u32,
    /// Minimum template Hessian; below it the patch is degenerate.
    pub h_min: f64,
    /// Which weighting rule fusion uses.
    pub fusion_mode: FusionMode,
    /// Finest-level search bound in pixels (coarser levels scale it down).
    pub max_disparity: f64,
    /// Shape of the spatial mask (centered Gaussian, or the literal
    /// per-pixel-sum form for fidelity experiments).
    pub mask_form: MaskForm,
    /// Which patch dimension normalizes the match-likelihood exponent.
    pub boltzmann_scale: BoltzmannScale,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            patch_stride: 4,
            num_levels: 4,
            sigma_r: 4.0,
            sigma_s: 4.0,
            gamma: 0.75,
            window_samples: 5,
            window_spacing: 0.5,
            disturbances: vec![0.5, 1.0],
            compensation_ratio: 1.0,
            convergence_eps: 0.01,
            max_iterations: 12,
            h_min: 1.0,
            fusion_mode: FusionMode::Bayesian,
            max_disparity: 160.0,
            mask_form: MaskForm::Centered,
            boltzmann_scale: BoltzmannScale::PatchSide,
        }
    }
}

impl SolverConfig {
    /// Profile for a given input resolution: large frames (min dimension
    /// ≥ 480) get 4 pyramid levels and a 0.75 valid-pixel floor, smaller
    /// frames 3 levels and 0.25. The search bound defaults to a quarter of
    /// the image width.
    pub fn for_size(width: usize, height: usize) -> Self {
        let big = width.min(height) >= 480;
        Self {
            num_levels: if big { 4 } else { 3 },
            gamma: if big { 0.75 } else { 0.25 },
            max_disparity: (width as f64 / 4.0).max(1.0),
            ..Self::default()
        }
    }

    /// Checks every documented range and relationship.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size < 2 {
            return fail(format!("patch_size must be at least 2, got {}", self.patch_size));
        }
        if self.patch_stride == 0 || self.patch_stride > self.patch_size {
            return fail(format!(
                "patch_stride must be in 1..=patch_size ({}), got {}",
                self.patch_size, self.patch_stride
            ));
        }
        if self.num_levels == 0 {
            return fail("num_levels must be at least 1".into());
        }
        if !(self.sigma_r > 0.0) || !(self.sigma_s > 0.0) {
            return fail(format!("sigma_r/sigma_s must be positive, got {}/{}", self.sigma_r, self.sigma_s));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.window_samples == 0 || self.window_samples % 2 == 0 {
            return fail(format!("window_samples must be odd, got {}", self.window_samples));
        }
        if !(self.window_spacing > 0.0) {
            return fail(format!("window_spacing must be positive, got {}", self.window_spacing));
        }
        if self.disturbances.iter().any(|d| !(*d > 0.0)) {
            return fail("disturbances must all be positive".into());
        }
        if !(self.compensation_ratio > 0.0) {
            return fail(format!("compensation_ratio must be positive, got {}", self.compensation_ratio));
        }
        if !(self.convergence_eps > 0.0) {
            return fail(format!("convergence_eps must be positive, got {}", self.convergence_eps));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be at least 1".into());
        }
        if self.h_min < 0.0 {
            return fail(format!("h_min must be non-negative, got {}", self.h_min));
        }
        if !(self.max_disparity > 0.0) {
            return fail(format!("max_disparity must be positive, got {}", self.max_disparity));
        }
        Ok(())
    }

    /// Applies `key = value` overrides from a config file on top of `self`.
    ///
    /// Blank lines and lines starting with `#` are ignored. Unknown keys and
    /// malformed values are configuration errors. Call [`validate`] after
    /// applying; this only parses.
    ///
    /// [`validate`]: SolverConfig::validate
    pub fn apply_file_overrides(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: {what} `{value}` for key `{key}`", lineno + 1));
            match key {
                "patch_size" => self.patch_size = value.parse().map_err(|_| bad("invalid integer"))?,
                "patch_stride" => self.patch_stride = value.parse().map_err(|_| bad("invalid integer"))?,
                "num_levels" => self.num_levels = value.parse().map_err(|_| bad("invalid integer"))?,
                "sigma_r" => self.sigma_r = value.parse().map_err(|_| bad("invalid number"))?,
                "sigma_s" => self.sigma_s = value.parse().map_err(|_| bad("invalid number"))?,
                "gamma" => self.gamma = value.parse().map_err(|_| bad("invalid number"))?,
                "window_samples" => self.window_samples = value.parse().map_err(|_| bad("invalid integer"))?,
                "window_spacing" => self.window_spacing = value.parse().map_err(|_| bad("invalid number"))?,
                "disturbances" => {
                    self.disturbances = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("invalid number list"))?;
                }
                "compensation_ratio" => self.compensation_ratio = value.parse().map_err(|_| bad("invalid number"))?,
                "convergence_eps" => self.convergence_eps = value.parse().map_err(|_| bad("invalid number"))?,
                "max_iterations" => self.max_iterations = value.parse().map_err(|_| bad("invalid integer"))?,
                "h_min" => self.h_min = value.parse().map_err(|_| bad("invalid number"))?,
                "fusion_mode" => {
                    self.fusion_mode = match value {
                        "bayesian" | "bdis" => FusionMode::Bayesian,
                        "residual_inverse" | "dis" => FusionMode::ResidualInverse,
                        _ => return Err(bad("unknown fusion mode")),
                    }
                }
                "max_disparity" => self.max_disparity = value.parse().map_err(|_| bad("invalid number"))?,
                "mask_form" => {
                    self.mask_form = match value {
                        "centered" => MaskForm::Centered,
                        "literal_sum" => MaskForm::LiteralSum,
                        _ => return Err(bad("unknown mask form")),
                    }
                }
                "boltzmann_scale" => {
                    self.boltzmann_scale = match value {
                        "patch_side" => BoltzmannScale::PatchSide,
                        "window_size" => BoltzmannScale::WindowSize,
                        _ => return Err(bad("unknown boltzmann scale")),
                    }
                }
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1))),
            }
        }
        Ok(())
    }
}
