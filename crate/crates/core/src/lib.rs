//! Patch-based stereo disparity estimation for rectified image pairs.
//!
//! The engine searches for per-patch horizontal displacements with an
//! inverse-compositional Gauss–Newton solver driven coarse-to-fine over an
//! image pyramid, then fuses the overlapping patch estimates into a dense
//! disparity map under one of two weighting rules:
//!
//! * [`FusionMode::ResidualInverse`] — the fast-optical-flow baseline, where
//!   each patch votes with the inverse squared photometric residual of the
//!   pixel it covers;
//! * [`FusionMode::Bayesian`] — a windowed posterior over disparity samples
//!   around each converged estimate, multiplied by a spatial Gaussian mask,
//!   after vetting estimates against local disturbances.
//!
//! The high-level entry point is [`compute_disparity`]; everything it builds
//! on (pyramids, templates, the patch solver, weighting, fusion) is public
//! for reuse and testing. The crate also ships a deterministic synthetic
//! scene generator ([`synth`]), ground-truth evaluation metrics ([`eval`]),
//! PFM disparity I/O ([`pfm`]), and a latency benchmark harness ([`bench`]).
//!
//! Images and disparity maps store `f32` samples with an explicit validity
//! mask (invalid pixels always carry the value 0); all arithmetic runs in
//! `f64`. Results are bitwise reproducible for any worker-thread count.

pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod image;
pub mod patch;
pub mod pfm;
pub mod pipeline;
pub mod synth;
pub mod weighting;

pub use bench::{run_benchmark, BenchReport};
pub use config::SolverConfig;
pub use error::{Error, Result};
pub use eval::{disparity_from_raster, evaluate, CameraIntrinsics, EvalReport};
pub use fusion::{DisparityMap, FusionMode};
pub use image::{build_pyramid, from_gray8, gradient_x, to_gray, GrayImage, ImagePyramid};
pub use patch::{
    make_template, saddle_check, solve_patch, PatchEstimate, PatchStatus, PatchTemplate,
    TemplateViability,
};
pub use pipeline::{
    compute_disparity, compute_disparity_trace, compute_disparity_with_stats, patch_grid,
    LevelStats, PipelineStats,
};
pub use synth::{render_pair, DisparityModel, SpecularSpot, SyntheticPair, TextureField};
pub use weighting::{
    illumination_probability, make_spatial_mask, window_posterior, BoltzmannScale, MaskForm,
    PatchPosterior, SpatialMask,
};
