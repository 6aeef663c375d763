//! Ultrasound videos, masks, dataset manifests and sequence-consistent
//! augmentation.
//!
//! On disk a dataset is a directory holding `manifest.json` and one
//! sub-directory per video with `frame_000000.png …` (8-bit grayscale) and,
//! when annotated, `mask_000000.png …` (values 0/255).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIZE: usize = 256;
pub const DEFAULT_FPS: f64 = 20.0;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn mask_file_name(index: usize) -> String {
    format!("mask_{index:06}.png")
}

pub fn pred_file_name(index: usize) -> String {
    format!("pred_{index:06}.png")
}

/// Grayscale frame with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub video_id: String,
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl ImageFrame {
    pub fn new(
        video_id: impl Into<String>,
        frame_index: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "frame has {} pixels, expected {height}x{width}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageFrame {
            video_id: video_id.into(),
            frame_index,
            height,
            width,
            pixels,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Binary needle mask aligned with an [`ImageFrame`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFrame {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl MaskFrame {
    pub fn new(frame_index: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "mask has {} pixels, expected {height}x{width}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| *v > 1) {
            return Err(Error::shape("mask values must be 0 or 1"));
        }
        Ok(MaskFrame {
            frame_index,
            height,
            width,
            pixels,
        })
    }

    pub fn empty(frame_index: usize, height: usize, width: usize) -> Self {
        MaskFrame {
            frame_index,
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|v| **v != 0).count()
    }

    /// Foreground pixel coordinates `(x, y)` in row-major order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }
}

/// One video: ordered frames plus optional aligned masks.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub video_id: String,
    pub frames: Vec<ImageFrame>,
    pub masks: Option<Vec<MaskFrame>>,
    pub fps: f64,
}

impl VideoSequence {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<ImageFrame>,
        masks: Option<Vec<MaskFrame>>,
        fps: f64,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if frames.is_empty() {
            return Err(Error::EmptyInput(format!("video {video_id} has no frames")));
        }
        let (h, w) = (frames[0].height, frames[0].width);
        for (i, f) in frames.iter().enumerate() {
            if f.frame_index != i {
                return Err(Error::shape(format!(
                    "frame indices must run 0.. in order; position {i} holds {}",
                    f.frame_index
                )));
            }
            if (f.height, f.width) != (h, w) {
                return Err(Error::shape("frames differ in size"));
            }
        }
        if let Some(masks) = &masks {
            if masks.len() != frames.len() {
                return Err(Error::shape(format!(
                    "{} masks for {} frames",
                    masks.len(),
                    frames.len()
                )));
            }
            for (i, m) in masks.iter().enumerate() {
                if m.frame_index != i || (m.height, m.width) != (h, w) {
                    return Err(Error::shape(format!("mask {i} misaligned with its frame")));
                }
            }
        }
        Ok(VideoSequence {
            video_id,
            frames,
            masks,
            fps,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.frames[0].height, self.frames[0].width)
    }

    pub fn has_masks(&self) -> bool {
        self.masks.is_some()
    }

    /// Contiguous sub-sequence `[start, start + len)`, re-indexed from 0.
    pub fn window(&self, start: usize, len: usize) -> Result<VideoSequence> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Index {
                index: start + len,
                len: self.len(),
            });
        }
        let frames = self.frames[start..start + len]
            .iter()
            .enumerate()
            .map(|(i, f)| ImageFrame {
                frame_index: i,
                ..f.clone()
            })
            .collect();
        let masks = self.masks.as_ref().map(|m| {
            m[start..start + len]
                .iter()
                .enumerate()
                .map(|(i, m)| MaskFrame {
                    frame_index: i,
                    ..m.clone()
                })
                .collect()
        });
        VideoSequence::new(self.video_id.clone(), frames, masks, self.fps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dir: String,
    pub frames: usize,
    pub has_masks: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub canonical_size: [usize; 2],
    pub videos: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.videos
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownVideo(id.to_string()))
    }

    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|e| e.frames).sum()
    }

    pub fn video_dir(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.dir)
    }

    fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::MalformedManifest("no videos listed".into()));
        }
        if self.canonical_size.iter().any(|d| *d == 0) {
            return Err(Error::MalformedManifest("canonical_size must be positive".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.videos {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::MalformedManifest(format!("duplicate video id {}", e.id)));
            }
            if e.frames == 0 {
                return Err(Error::MalformedManifest(format!("video {} has zero frames", e.id)));
            }
        }
        Ok(())
    }

    /// Writes `manifest.json` under `root`.
    pub fn save(&self, root: &Path) -> Result<()> {
        self.validate()?;
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::MalformedManifest(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

fn count_files(dir: &Path, prefix: &str) -> Result<usize> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(prefix) && name.ends_with(".png") {
            n += 1;
        }
    }
    Ok(n)
}

/// Reads and verifies a manifest. `path` may be the dataset root or the
/// manifest file itself.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let (file, root) = if path.is_dir() {
        (path.join(MANIFEST_FILE), path.to_path_buf())
    } else {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), root)
    };
    if !file.is_file() {
        return Err(Error::MissingManifest(file));
    }
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    manifest.root = root;
    manifest.validate()?;
    for e in &manifest.videos {
        let dir = manifest.video_dir(e);
        if !dir.is_dir() {
            return Err(Error::MalformedManifest(format!(
                "video {} directory {} does not exist",
                e.id,
                dir.display()
            )));
        }
        let found = count_files(&dir, "frame_")?;
        if found != e.frames {
            return Err(Error::CountMismatch {
                video: e.id.clone(),
                declared: e.frames,
                found,
            });
        }
        if e.has_masks {
            let found = count_files(&dir, "mask_")?;
            if found != e.frames {
                return Err(Error::CountMismatch {
                    video: e.id.clone(),
                    declared: e.frames,
                    found,
                });
            }
        }
    }
    Ok(manifest)
}

fn decode_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.to_luma8())
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..ow {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] as f64 * (1.0 - tx) + src[y0 * w + x1] as f64 * tx;
            let bot = src[y1 * w + x0] as f64 * (1.0 - tx) + src[y1 * w + x1] as f64 * tx;
            out.push((top * (1.0 - ty) + bot * ty) as f32);
        }
    }
    out
}

/// Nearest-neighbour resampling with pixel-centre alignment.
pub fn resize_nearest<V: Copy>(src: &[V], h: usize, w: usize, oh: usize, ow: usize) -> Vec<V> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let y = (((oy as f64 + 0.5) * h as f64 / oh as f64) as usize).min(h - 1);
        for ox in 0..ow {
            let x = (((ox as f64 + 0.5) * w as f64 / ow as f64) as usize).min(w - 1);
            out.push(src[y * w + x]);
        }
    }
    out
}

/// Nearest-neighbour resize of an intensity mask followed by
/// re-binarisation at 0.5.
pub fn binarize_resized(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    resize_nearest(src, h, w, oh, ow)
        .into_iter()
        .map(|v| u8::from(v >= 0.5))
        .collect()
}

/// Decodes, grayscales and resizes one video to the canonical size.
pub fn load_video(manifest: &DatasetManifest, video_id: &str) -> Result<VideoSequence> {
    let entry = manifest.entry(video_id)?;
    read_video(
        &manifest.video_dir(entry),
        &entry.id,
        entry.frames,
        entry.has_masks,
        manifest.canonical_size,
    )
}

/// Loads a video directory without a manifest: every `frame_*.png`, plus
/// masks when `with_masks` (their count must match).
pub fn load_video_dir(dir: &Path, video_id: &str, canonical_size: [usize; 2], with_masks: bool) -> Result<VideoSequence> {
    let n = count_files(dir, "frame_")?;
    if n == 0 {
        return Err(Error::EmptyInput(format!("no frame_*.png files in {}", dir.display())));
    }
    if with_masks {
        let found = count_files(dir, "mask_")?;
        if found != n {
            return Err(Error::CountMismatch {
                video: video_id.to_string(),
                declared: n,
                found,
            });
        }
    }
    read_video(dir, video_id, n, with_masks, canonical_size)
}

/// Reads `<prefix>000000.png …` masks from a directory, in index order.
pub fn load_masks_dir(dir: &Path, prefix: &str) -> Result<Vec<MaskFrame>> {
    let n = count_files(dir, prefix)?;
    (0..n)
        .map(|i| read_mask_png(&dir.join(format!("{prefix}{i:06}.png")), i))
        .collect()
}

/// Number of `<prefix>*.png` files in `dir`.
pub fn count_pngs(dir: &Path, prefix: &str) -> Result<usize> {
    count_files(dir, prefix)
}

fn read_video(dir: &Path, video_id: &str, n: usize, has_masks: bool, canonical_size: [usize; 2]) -> Result<VideoSequence> {
    let [oh, ow] = canonical_size;
    let mut frames = Vec::with_capacity(n);
    let mut masks = has_masks.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let img = decode_gray(&dir.join(frame_file_name(i)))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let px: Vec<f32> = img.as_raw().iter().map(|v| *v as f32 / 255.0).collect();
        let px = resize_bilinear(&px, h, w, oh, ow);
        frames.push(ImageFrame::new(video_id, i, oh, ow, px)?);
        if let Some(masks) = masks.as_mut() {
            let path = dir.join(mask_file_name(i));
            let m = decode_gray(&path)?;
            let (mw, mh) = (m.width() as usize, m.height() as usize);
            if (mh, mw) != (h, w) {
                return Err(Error::shape(format!(
                    "{}: mask is {mw}x{mh}, frame is {w}x{h}",
                    path.display()
                )));
            }
            let mv: Vec<f32> = m.as_raw().iter().map(|v| *v as f32 / 255.0).collect();
            masks.push(MaskFrame::new(i, oh, ow, binarize_resized(&mv, h, w, oh, ow))?);
        }
    }
    VideoSequence::new(video_id, frames, masks, DEFAULT_FPS)
}

pub fn frame_to_png(frame: &ImageFrame) -> GrayImage {
    GrayImage::from_fn(frame.width as u32, frame.height as u32, |x, y| {
        Luma([(frame.at(x as usize, y as usize) * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn mask_to_png(mask: &MaskFrame) -> GrayImage {
    GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.at(x as usize, y as usize) { 255 } else { 0 }])
    })
}

pub(crate) fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Reads a binary mask PNG (threshold at half intensity).
pub fn read_mask_png(path: &Path, frame_index: usize) -> Result<MaskFrame> {
    let m = decode_gray(path)?;
    let px = m.as_raw().iter().map(|v| u8::from(*v >= 128)).collect();
    MaskFrame::new(frame_index, m.height() as usize, m.width() as usize, px)
}

/// Reads a grayscale frame PNG without resizing.
pub fn read_frame_png(path: &Path, video_id: &str, frame_index: usize) -> Result<ImageFrame> {
    let img = decode_gray(path)?;
    let px = img.as_raw().iter().map(|v| *v as f32 / 255.0).collect();
    ImageFrame::new(video_id, frame_index, img.height() as usize, img.width() as usize, px)
}

/// Writes a video in the on-disk layout (frames, and masks when present).
pub fn save_video(seq: &VideoSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in &seq.frames {
        save_png(&frame_to_png(f), &dir.join(frame_file_name(f.frame_index)))?;
    }
    if let Some(masks) = &seq.masks {
        for m in masks {
            save_png(&mask_to_png(m), &dir.join(mask_file_name(m.frame_index)))?;
        }
    }
    Ok(())
}

/// Augmentation magnitudes; draws are symmetric about the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Rotation angle drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    /// Intensity factor drawn uniformly from `[1 - intensity_jitter, 1 + intensity_jitter]`.
    pub intensity_jitter: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_degrees: 10.0,
            intensity_jitter: 0.1,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            rotation_degrees: 0.0,
            intensity_jitter: 0.0,
            seed: 0,
        }
    }
}

/// One transform applied to a whole sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    pub jitter: f64,
}

pub fn sample_draw(spec: &AugmentationSpec, rng: &mut impl Rng) -> AugmentDraw {
    let r = spec.rotation_degrees.abs();
    let j = spec.intensity_jitter.abs();
    AugmentDraw {
        angle_deg: if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 },
        jitter: if j > 0.0 {
            rng.random_range(1.0 - j..=1.0 + j)
        } else {
            1.0
        },
    }
}

/// Inverse-mapped rotation about the image centre. `sample` reads the
/// source at fractional coordinates (returning `None` outside).
fn rotate_with<V: Copy + Default>(
    h: usize,
    w: usize,
    angle_deg: f64,
    sample: impl Fn(f64, f64) -> Option<V>,
) -> Vec<V> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            out.push(sample(sx, sy).unwrap_or_default());
        }
    }
    out
}

/// Rotates an image by `angle_deg` (bilinear, zero fill).
pub fn rotate_image(frame: &ImageFrame, angle_deg: f64) -> ImageFrame {
    if angle_deg == 0.0 {
        return frame.clone();
    }
    let (h, w) = (frame.height, frame.width);
    let px = &frame.pixels;
    let pixels = rotate_with(h, w, angle_deg, |sx, sy| {
        if sx < -0.5 || sy < -0.5 || sx > w as f64 - 0.5 || sy > h as f64 - 0.5 {
            return None;
        }
        let fx = sx.clamp(0.0, (w - 1) as f64);
        let fy = sy.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let v = |x: usize, y: usize| px[y * w + x] as f64;
        let top = v(x0, y0) * (1.0 - tx) + v(x1, y0) * tx;
        let bot = v(x0, y1) * (1.0 - tx) + v(x1, y1) * tx;
        Some(((top * (1.0 - ty) + bot * ty) as f32).clamp(0.0, 1.0))
    });
    ImageFrame { pixels, ..frame.clone() }
}

/// Rotates a mask by `angle_deg` (nearest neighbour, stays binary).
pub fn rotate_mask(mask: &MaskFrame, angle_deg: f64) -> MaskFrame {
    if angle_deg == 0.0 {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    let pixels = rotate_with(h, w, angle_deg, |sx, sy| {
        let (x, y) = (sx.round(), sy.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return None;
        }
        Some(u8::from(mask.pixels[y as usize * w + x as usize] != 0))
    });
    MaskFrame { pixels, ..mask.clone() }
}

fn jitter_frame(frame: ImageFrame, factor: f64) -> ImageFrame {
    if factor == 1.0 {
        return frame;
    }
    let f = factor as f32;
    let pixels = frame.pixels.iter().map(|v| (v * f).clamp(0.0, 1.0)).collect();
    ImageFrame { pixels, ..frame }
}

/// Applies one draw identically to every frame (and the rotation to every
/// mask).
pub fn apply_draw(seq: &VideoSequence, draw: AugmentDraw) -> VideoSequence {
    let frames = seq
        .frames
        .iter()
        .map(|f| jitter_frame(rotate_image(f, draw.angle_deg), draw.jitter))
        .collect();
    let masks = seq
        .masks
        .as_ref()
        .map(|ms| ms.iter().map(|m| rotate_mask(m, draw.angle_deg)).collect());
    VideoSequence {
        video_id: seq.video_id.clone(),
        frames,
        masks,
        fps: seq.fps,
    }
}

/// Samples a single rotation/jitter draw and applies it to the whole
/// sequence so inter-frame motion is preserved.
pub fn augment_sequence(
    seq: &VideoSequence,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> VideoSequence {
    let draw = sample_draw(spec, rng);
    apply_draw(seq, draw)
}
