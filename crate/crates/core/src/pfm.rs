//! PFM (portable float map) disparity and confidence I/O.
//!
//! Files are written as grayscale `Pf`, scale −1.0 (little-endian), rows
//! bottom-up, one 32-bit float per pixel. Invalid disparities are encoded as
//! +∞; confidence rasters have no sentinel (invalid pixels carry 0). The
//! reader also accepts big-endian files (positive scale) and applies |scale|
//! as a value multiplier when it is not 1.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::disparity_from_raster;
use crate::fusion::DisparityMap;
use crate::image::GrayImage;

fn bad(msg: impl Into<String>) -> Error {
    Error::Pfm(msg.into())
}

/// Writes a raw raster (top-down samples) in PFM form.
fn write_samples(out: &mut impl Write, width: usize, height: usize, samples: &[f32]) -> Result<()> {
    debug_assert_eq!(samples.len(), width * height);
    write!(out, "Pf\n{width} {height}\n-1.0\n")?;
    for y in (0..height).rev() {
        for &v in &samples[y * width..(y + 1) * width] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes the disparity channel; invalid pixels become +∞.
pub fn write_disparity_pfm(out: &mut impl Write, map: &DisparityMap) -> Result<()> {
    let samples: Vec<f32> = map
        .disparities()
        .iter()
        .zip(map.valid())
        .map(|(d, ok)| if *ok { *d } else { f32::INFINITY })
        .collect();
    write_samples(out, map.width(), map.height(), &samples)
}

/// Writes the confidence channel as plain values (invalid pixels carry 0).
pub fn write_confidence_pfm(out: &mut impl Write, map: &DisparityMap) -> Result<()> {
    write_samples(out, map.width(), map.height(), map.confidences())
}

pub fn write_disparity_pfm_file(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_disparity_pfm(&mut out, map)?;
    out.flush()?;
    Ok(())
}

pub fn write_confidence_pfm_file(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_confidence_pfm(&mut out, map)?;
    out.flush()?;
    Ok(())
}

/// Writes a grayscale brightness raster; invalid pixels are encoded as NaN.
///
/// This is the lossless interchange form for synthetic images: float samples
/// survive bitwise, unlike 8-bit quantized formats.
pub fn write_image_pfm(out: &mut impl Write, img: &GrayImage) -> Result<()> {
    let samples: Vec<f32> = (0..img.height())
        .flat_map(|y| {
            img.row(y)
                .iter()
                .zip(img.valid_row(y))
                .map(|(v, ok)| if *ok { *v } else { f32::NAN })
        })
        .collect();
    write_samples(out, img.width(), img.height(), &samples)
}

pub fn write_image_pfm_file(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_image_pfm(&mut out, img)?;
    out.flush()?;
    Ok(())
}

/// Reads a grayscale brightness raster; non-finite samples become invalid
/// pixels (value 0).
pub fn read_image_pfm(input: &mut impl Read) -> Result<GrayImage> {
    let (width, height, samples) = read_pfm_raster(input)?;
    let valid: Vec<bool> = samples.iter().map(|v| v.is_finite()).collect();
    let data: Vec<f32> = samples
        .iter()
        .zip(&valid)
        .map(|(v, ok)| if *ok { *v } else { 0.0 })
        .collect();
    GrayImage::from_parts(width, height, data, valid)
}

pub fn read_image_pfm_file(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_image_pfm(&mut BufReader::new(File::open(path)?))
}

/// Reads one whitespace-delimited header token, consuming the single
/// whitespace byte that terminates it.
fn read_token(input: &mut impl Read) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            return Err(bad("truncated header"));
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue; // leading whitespace
            }
            break;
        }
        if token.len() > 32 {
            return Err(bad("header token too long"));
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| bad("non-UTF-8 header token"))
}

/// Reads a PFM file into `(width, height, top-down samples)`.
pub fn read_pfm_raster(input: &mut impl Read) -> Result<(usize, usize, Vec<f32>)> {
    let kind = read_token(input)?;
    match kind.as_str() {
        "Pf" => {}
        "PF" => return Err(bad("3-channel color PFM is not supported, expected grayscale Pf")),
        other => return Err(bad(format!("not a PFM file (header {other:?})"))),
    }
    let width: usize = read_token(input)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = read_token(input)?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = read_token(input)?.parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad(format!("degenerate dimensions {width}x{height}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("invalid scale {scale}")));
    }
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let mut payload = vec![0u8; n];
    input.read_exact(&mut payload).map_err(|_| bad("truncated pixel data"))?;

    let little_endian = scale < 0.0;
    let multiplier = scale.abs();
    let mut samples = vec![0.0f32; width * height];
    for file_row in 0..height {
        let image_row = height - 1 - file_row;
        for x in 0..width {
            let off = (file_row * width + x) * 4;
            let bytes: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            let mut v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            if multiplier != 1.0 {
                v = (f64::from(v) * multiplier) as f32;
            }
            samples[image_row * width + x] = v;
        }
    }
    Ok((width, height, samples))
}

/// Reads a disparity PFM; +∞ (and any non-finite value) marks a pixel
/// invalid. Confidence is 1 for valid pixels — pair with
/// [`read_map_pfm_files`] to restore a stored confidence channel.
pub fn read_disparity_pfm(input: &mut impl Read) -> Result<DisparityMap> {
    let (width, height, samples) = read_pfm_raster(input)?;
    disparity_from_raster(width, height, &samples, f32::INFINITY)
}

pub fn read_disparity_pfm_file(path: impl AsRef<Path>) -> Result<DisparityMap> {
    read_disparity_pfm(&mut BufReader::new(File::open(path)?))
}

/// Restores a full map from its disparity and confidence files.
pub fn read_map_pfm_files(
    disparity_path: impl AsRef<Path>,
    confidence_path: impl AsRef<Path>,
) -> Result<DisparityMap> {
    let base = read_disparity_pfm_file(disparity_path)?;
    let mut conf_reader = BufReader::new(File::open(confidence_path)?);
    let (cw, ch, conf) = read_pfm_raster(&mut conf_reader)?;
    if cw != base.width() || ch != base.height() {
        return Err(Error::DimensionMismatch {
            expected_w: base.width(),
            expected_h: base.height(),
            got_w: cw,
            got_h: ch,
        });
    }
    DisparityMap::from_parts(
        base.width(),
        base.height(),
        base.disparities().to_vec(),
        conf,
        base.valid().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample_map() -> DisparityMap {
        // Mixed finite values, a negative, and invalid pixels.
        let disp = vec![0.1, -0.75, 3.25, 0.0, 159.9921875, 0.0];
        let conf = vec![0.9, 0.5, 1.0, 0.0, 0.0625, 0.0];
        let valid = vec![true, true, true, false, true, false];
        DisparityMap::from_parts(3, 2, disp, conf, valid).unwrap()
    }

    #[test]
    fn header_is_the_documented_byte_sequence() {
        let mut buf = Vec::new();
        write_disparity_pfm(&mut buf, &sample_map()).unwrap();
        assert!(buf.starts_with(b"Pf\n3 2\n-1.0\n"));
        assert_eq!(buf.len(), b"Pf\n3 2\n-1.0\n".len() + 3 * 2 * 4);
        // Bottom row is written first: the first float is pixel (0, 1).
        let first = f32::from_le_bytes(buf[b"Pf\n3 2\n-1.0\n".len()..][..4].try_into().unwrap());
        assert!(first.is_infinite(), "invalid pixel (0,1) must encode as +inf");
    }

    #[test]
    fn disparity_round_trip_is_bitwise() {
        let map = sample_map();
        let mut buf = Vec::new();
        write_disparity_pfm(&mut buf, &map).unwrap();
        let back = read_disparity_pfm(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back.disparities(), map.disparities());
        assert_eq!(back.valid(), map.valid());
    }

    #[test]
    fn full_map_round_trip_via_both_files_is_bitwise() {
        let map = sample_map();
        let dir = tempfile::tempdir().unwrap();
        let dpath = dir.path().join("out.pfm");
        let cpath = dir.path().join("out_conf.pfm");
        write_disparity_pfm_file(&dpath, &map).unwrap();
        write_confidence_pfm_file(&cpath, &map).unwrap();
        let back = read_map_pfm_files(&dpath, &cpath).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn reads_big_endian_and_scaled_files() {
        // 2×1, scale +2.0 → big-endian values multiplied by 2.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"Pf\n2 1\n2.0\n");
        buf.extend_from_slice(&1.5f32.to_be_bytes());
        buf.extend_from_slice(&(-4.0f32).to_be_bytes());
        let (w, h, samples) = read_pfm_raster(&mut Cursor::new(&buf)).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(samples, vec![3.0, -8.0]);
    }

    #[test]
    fn bottom_up_row_order_is_respected() {
        // 1×2 little-endian: file rows are bottom-up, so the first stored
        // float belongs to image row 1.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"Pf\n1 2\n-1.0\n");
        buf.extend_from_slice(&10.0f32.to_le_bytes());
        buf.extend_from_slice(&20.0f32.to_le_bytes());
        let (_, _, samples) = read_pfm_raster(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(samples, vec![20.0, 10.0]);
    }

    #[test]
    fn rejects_malformed_files() {
        let junk: &[&[u8]] = &[
            b"P5\n2 2\n255\n....",                 // wrong magic
            b"PF\n2 2\n-1.0\n",                    // color variant
            b"Pf\n2 2\n-1.0\n\x00\x00",            // truncated payload
            b"Pf\n0 2\n-1.0\n",                    // zero dimension
            b"Pf\n2 2\n0.0\n\x00\x00\x00\x00",     // zero scale
            b"Pf\n-3 2\n-1.0\n",                   // negative width
            b"Pf\nhello 2\n-1.0\n",                // non-numeric width
        ];
        for bytes in junk {
            assert!(
                read_pfm_raster(&mut Cursor::new(*bytes)).is_err(),
                "accepted malformed input {bytes:?}"
            );
        }
    }

    #[test]
    fn image_raster_round_trip_is_bitwise() {
        let img = GrayImage::from_parts(
            3,
            2,
            vec![10.5, 0.0, 250.25, 90.0, 0.0, 1.0e-3],
            vec![true, false, true, true, false, true],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_image_pfm(&mut buf, &img).unwrap();
        let back = read_image_pfm(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back.valid(), img.valid());
        for y in 0..2 {
            assert_eq!(back.row(y), img.row(y));
        }
    }

    #[test]
    fn nan_payload_pixels_read_as_invalid() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"Pf\n2 1\n-1.0\n");
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        buf.extend_from_slice(&2.0f32.to_le_bytes());
        let map = read_disparity_pfm(&mut Cursor::new(&buf)).unwrap();
        assert!(!map.is_valid(0, 0));
        assert!(map.is_valid(1, 0));
        assert_eq!(map.disparity(1, 0), 2.0);
    }
}
