//! Error type shared by every module of the crate.

use std::io;

/// Errors reported by image construction, the solver, fusion, and file I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An image dimension was zero or a buffer length disagreed with the
    /// declared width and height.
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    /// Left and right images (or prediction and ground truth) differ in size.
    #[error("dimension mismatch: left/expected {expected_w}x{expected_h}, right/got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    /// A patch window does not fit inside the image it was requested from.
    #[error("patch at ({x},{y}) with size {size} exceeds a {width}x{height} image")]
    PatchOutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },

    /// A pixel offset lies outside the patch footprint it indexes into.
    #[error("offset ({dx},{dy}) lies outside a patch of size {size}")]
    OffsetOutOfPatch { dx: usize, dy: usize, size: usize },

    /// The warped patch leaves the right image, so no residual can be formed.
    #[error("warped patch leaves the right image")]
    WarpOutOfBounds,

    /// A residual or probability was requested over a window with no valid
    /// pixels.
    #[error("no valid pixels in patch window")]
    NoValidPixels,

    /// A configuration value violates its documented range or relationship.
    #[error("configuration: {0}")]
    Config(String),

    /// Synthetic-scene parameters are out of range.
    #[error("synthesis parameters: {0}")]
    SynthParams(String),

    /// Caller broke an API contract (e.g. mismatched estimate/posterior lists).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Underlying file I/O failure.
    #[error("i/o: {0}")]
    Io(#[from] io::Error),

    /// A disparity file could not be parsed.
    #[error("pfm: {0}")]
    Pfm(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
