//! Ground-truth evaluation: error metrics over jointly-valid pixels, raster
//! sentinel handling, and depth-to-disparity conversion from intrinsics.

use crate::error::{Error, Result};
use crate::fusion::DisparityMap;

/// Accuracy summary of a predicted map against ground truth.
///
/// Errors are `None` when no pixel is valid in both maps; `median_error` is
/// not assumed to be below `mean_error` (heavy outliers routinely push the
/// mean far above the median), so both are reported independently.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Median of |pred − gt| over jointly-valid pixels (even counts: mean of
    /// the two central order statistics).
    pub median_error: Option<f64>,
    /// Mean of |pred − gt| over jointly-valid pixels.
    pub mean_error: Option<f64>,
    /// Count of pixels the prediction marks valid.
    pub valid_pixels: usize,
    /// Fraction of the image evaluated: jointly-valid count / (width·height).
    pub density: f64,
    /// Wall-clock per frame, when the caller measured one.
    pub runtime_ms: Option<f64>,
}

/// Median by the even-count rule: mean of the two central order statistics.
/// `values` must be non-empty; it is sorted in place.
fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Compares a prediction against ground truth of the same dimensions.
///
/// Errors are |pred − gt| over pixels valid in BOTH maps (masking is
/// symmetric); `valid_pixels` counts prediction-valid pixels only. With no
/// jointly-valid pixel the report carries density 0 and undefined errors.
pub fn evaluate(pred: &DisparityMap, gt: &DisparityMap) -> Result<EvalReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            expected_w: gt.width(),
            expected_h: gt.height(),
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    let mut errs: Vec<f64> = Vec::new();
    for ((pd, pv), (gd, gv)) in pred
        .disparities()
        .iter()
        .zip(pred.valid())
        .zip(gt.disparities().iter().zip(gt.valid()))
    {
        if *pv && *gv {
            errs.push((f64::from(*pd) - f64::from(*gd)).abs());
        }
    }
    let total = (pred.width() * pred.height()) as f64;
    let density = errs.len() as f64 / total;
    let (median_error, mean_error) = if errs.is_empty() {
        (None, None)
    } else {
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        (Some(median_in_place(&mut errs)), Some(mean))
    };
    Ok(EvalReport {
        median_error,
        mean_error,
        valid_pixels: pred.valid_count(),
        density,
        runtime_ms: None,
    })
}

/// Interprets a raw float raster as a disparity map: pixels equal to
/// `invalid_sentinel` or non-finite are invalid. A NaN sentinel marks every
/// NaN invalid.
pub fn disparity_from_raster(
    width: usize,
    height: usize,
    data: &[f32],
    invalid_sentinel: f32,
) -> Result<DisparityMap> {
    if data.len() != width * height {
        return Err(Error::InvalidRaster(format!(
            "raster has {} samples, expected {width}x{height}",
            data.len()
        )));
    }
    let mut disp = Vec::with_capacity(data.len());
    let mut valid = Vec::with_capacity(data.len());
    for &v in data {
        let ok = v.is_finite() && !(v == invalid_sentinel || (v.is_nan() && invalid_sentinel.is_nan()));
        disp.push(if ok { v } else { 0.0 });
        valid.push(ok);
    }
    let conf = valid.iter().map(|ok| if *ok { 1.0 } else { 0.0 }).collect();
    DisparityMap::from_parts(width, height, disp, conf, valid)
}

/// Rectified camera parameters, read from a plain-text file of five numbers:
/// `fx fy cx cy baseline`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline, in the same length unit as the depth values it will
    /// convert.
    pub baseline: f64,
}

impl CameraIntrinsics {
    /// Parses the `fx fy cx cy baseline` text form (whitespace separated,
    /// `#` comments allowed).
    pub fn parse(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Config(format!("camera file: bad number {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if nums.len() != 5 {
            return Err(Error::Config(format!(
                "camera file: expected 5 numbers (fx fy cx cy baseline), got {}",
                nums.len()
            )));
        }
        let cam = Self { fx: nums[0], fy: nums[1], cx: nums[2], cy: nums[3], baseline: nums[4] };
        if !(cam.fx > 0.0) || !(cam.baseline > 0.0) {
            return Err(Error::Config(format!(
                "camera file: fx and baseline must be positive, got {} / {}",
                cam.fx, cam.baseline
            )));
        }
        Ok(cam)
    }

    /// `disparity = fx · baseline / depth`; non-positive or non-finite depth
    /// has no disparity.
    pub fn depth_to_disparity(&self, depth: f64) -> Option<f64> {
        if depth.is_finite() && depth > 0.0 {
            Some(self.fx * self.baseline / depth)
        } else {
            None
        }
    }

    /// Converts a depth map (in baseline units) to a disparity map; pixels
    /// with unusable depth become invalid.
    pub fn depth_map_to_disparity(&self, depth: &DisparityMap) -> DisparityMap {
        let n = depth.width() * depth.height();
        let mut disp = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for (d, ok) in depth.disparities().iter().zip(depth.valid()) {
            match if *ok { self.depth_to_disparity(f64::from(*d)) } else { None } {
                Some(v) => {
                    disp.push(v as f32);
                    valid.push(true);
                }
                None => {
                    disp.push(0.0);
                    valid.push(false);
                }
            }
        }
        let conf = valid.iter().map(|ok| if *ok { 1.0 } else { 0.0 }).collect();
        DisparityMap::from_parts(depth.width(), depth.height(), disp, conf, valid)
            .expect("dimensions come from a valid map")
    }
}
