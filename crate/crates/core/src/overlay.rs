//! Qualitative renderings: masks tinted red over grayscale frames.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::datamodel::{frame_file_name, ImageFrame, MaskFrame};
use crate::error::{Error, Result};

pub const ALPHA: f32 = 0.5;
const RED: [f32; 3] = [255.0, 0.0, 0.0];

/// Grayscale frame with `mask` blended in red at [`ALPHA`].
pub fn overlay(frame: &ImageFrame, mask: &MaskFrame) -> Result<RgbImage> {
    if (frame.height, frame.width) != (mask.height, mask.width) {
        return Err(Error::shape("frame and mask sizes differ"));
    }
    let mut img = RgbImage::new(frame.width as u32, frame.height as u32);
    for (i, (p, m)) in frame.pixels.iter().zip(&mask.pixels).enumerate() {
        let g = (p * 255.0).round();
        let px = if *m != 0 {
            RED.map(|c| ((1.0 - ALPHA) * g + ALPHA * c).round() as u8)
        } else {
            [g as u8; 3]
        };
        img.put_pixel((i % frame.width) as u32, (i / frame.width) as u32, Rgb(px));
    }
    Ok(img)
}

/// Prediction overlay, with the ground-truth overlay to its right when
/// given.
pub fn overlay_panel(frame: &ImageFrame, pred: &MaskFrame, gt: Option<&MaskFrame>) -> Result<RgbImage> {
    let left = overlay(frame, pred)?;
    let Some(gt) = gt else { return Ok(left) };
    let right = overlay(frame, gt)?;
    let (w, h) = left.dimensions();
    let mut out = RgbImage::new(2 * w, h);
    image::imageops::replace(&mut out, &left, 0, 0);
    image::imageops::replace(&mut out, &right, w as i64, 0);
    Ok(out)
}

/// Writes one overlay PNG per frame into `out_dir` (named like frames).
pub fn write_overlays(
    frames: &[ImageFrame],
    preds: &[MaskFrame],
    gts: Option<&[MaskFrame]>,
    video_id: &str,
    out_dir: &Path,
) -> Result<usize> {
    if frames.len() != preds.len() || gts.is_some_and(|g| g.len() != frames.len()) {
        return Err(Error::CountMismatch {
            video: video_id.to_string(),
            declared: frames.len(),
            found: if preds.len() != frames.len() {
                preds.len()
            } else {
                gts.map_or(0, |g| g.len())
            },
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, (f, p)) in frames.iter().zip(preds).enumerate() {
        let img = overlay_panel(f, p, gts.map(|g| &g[i]))?;
        let path = out_dir.join(frame_file_name(f.frame_index));
        img.save(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
    }
    Ok(frames.len())
}
