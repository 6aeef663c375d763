//! Deterministic synthetic ultrasound needle videos.
//!
//! A needle enters from the left edge at a random angle, advances along a
//! smooth insertion profile with occasional forward jerks, and may bow as a
//! quadratic Bezier. Frames combine a low-frequency tissue texture with
//! Rayleigh speckle and dark vessels (all moving with a random-walk probe
//! offset), static needle-like distractor lines, occlusion bands that dim the
//! needle, out-of-plane episodes that hide the distal shaft for a few frames,
//! and a fading tip. Ground-truth masks cover the full needle,
//! including occluded parts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::datamodel::{save_video, DatasetManifest, ImageFrame, ManifestEntry, MaskFrame, VideoSequence, DEFAULT_FPS};
use crate::error::{Error, Result};

pub const SYNTH_CONFIG_FILE: &str = "synthgen.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeedleConfig {
    /// Insertion angle below the horizontal, sampled per video.
    pub angle_deg: [f64; 2],
    /// Entry height as a fraction of the image height, sampled per video.
    pub entry_y_frac: [f64; 2],
    /// Depth at the first and last frame as fractions of the in-frame
    /// length available along the insertion direction.
    pub start_depth_frac: f64,
    pub end_depth_frac: f64,
    /// Expected number of forward jerks per frame.
    pub jerk_rate: f64,
    /// Maximum jerk advance in px (each jerk is uniform in `[0.5, 1] ×` this).
    pub jerk_px: f64,
    /// Bow of the fully inserted needle in px (sign sampled per video).
    pub bend_amplitude: f64,
    pub width_px: f64,
    /// Peak brightness added by the needle shaft.
    pub intensity: f64,
    /// Fraction of the shaft (ending at the tip) over which brightness
    /// fades down to `tip_intensity`.
    pub tip_fade: f64,
    /// Relative brightness left at the very tip.
    pub tip_intensity: f64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        NeedleConfig {
            angle_deg: [15.0, 45.0],
            entry_y_frac: [0.1, 0.4],
            start_depth_frac: 0.15,
            end_depth_frac: 0.75,
            jerk_rate: 0.05,
            jerk_px: 12.0,
            bend_amplitude: 6.0,
            width_px: 2.0,
            intensity: 0.8,
            tip_fade: 0.3,
            tip_intensity: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeckleConfig {
    /// Mean tissue brightness.
    pub level: f64,
    /// Rayleigh scale of the multiplicative speckle (normalised to mean 1
    /// when equal to the default).
    pub rayleigh_scale: f64,
    pub lowfreq_texture_octaves: usize,
    /// Relative amplitude of the low-frequency texture.
    pub texture_contrast: f64,
    pub vessels: usize,
}

impl Default for SpeckleConfig {
    fn default() -> Self {
        SpeckleConfig {
            level: 0.25,
            rayleigh_scale: (2.0 / std::f64::consts::PI).sqrt(),
            lowfreq_texture_octaves: 3,
            texture_contrast: 0.5,
            vessels: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub band_count: usize,
    pub band_width_px: f64,
    /// Needle brightness multiplier inside a band (1 = no occlusion).
    pub attenuation: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            band_count: 1,
            band_width_px: 16.0,
            attenuation: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactConfig {
    pub n_distractor_lines: usize,
    /// Brightness relative to the needle intensity.
    pub brightness: f64,
    /// Length range as fractions of the image size.
    pub length_frac: [f64; 2],
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        ArtifactConfig {
            n_distractor_lines: 2,
            brightness: 0.6,
            length_frac: [0.2, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeMotionConfig {
    /// Per-axis integer step bound per frame.
    pub step_px: usize,
    /// Offsets are clamped to `±max_offset_px`.
    pub max_offset_px: usize,
}

impl Default for ProbeMotionConfig {
    fn default() -> Self {
        ProbeMotionConfig {
            step_px: 1,
            max_offset_px: 12,
        }
    }
}

/// Out-of-plane episodes: for a few frames the distal part of the shaft
/// leaves the imaging plane and nearly vanishes (the mask keeps it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutConfig {
    /// Expected episode onsets per frame.
    pub rate: f64,
    /// Inclusive episode length range in frames.
    pub duration_frames: [usize; 2],
    /// Arc fraction where the invisible part begins, sampled per episode.
    pub from_frac: [f64; 2],
    /// Needle brightness multiplier on the invisible part.
    pub visibility: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            rate: 0.04,
            duration_frames: [3, 8],
            from_frac: [0.3, 0.7],
            visibility: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub image_size: usize,
    pub needle: NeedleConfig,
    pub speckle: SpeckleConfig,
    pub occlusion: OcclusionConfig,
    pub artifacts: ArtifactConfig,
    pub probe_motion: ProbeMotionConfig,
    pub dropout: DropoutConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_frames: 80,
            image_size: 256,
            needle: NeedleConfig::default(),
            speckle: SpeckleConfig::default(),
            occlusion: OcclusionConfig::default(),
            artifacts: ArtifactConfig::default(),
            probe_motion: ProbeMotionConfig::default(),
            dropout: DropoutConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let n = &self.needle;
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.n_frames == 0 || self.image_size < 16 {
            return bad("need at least one frame and an image of at least 16 px");
        }
        if !(n.angle_deg[0] <= n.angle_deg[1] && n.angle_deg[0] >= 0.0 && n.angle_deg[1] < 90.0) {
            return bad("needle angle range must lie in [0, 90)");
        }
        if !(0.0 <= n.entry_y_frac[0] && n.entry_y_frac[0] <= n.entry_y_frac[1] && n.entry_y_frac[1] < 1.0) {
            return bad("entry_y_frac must be an ordered range inside [0, 1)");
        }
        if !(0.0 < n.start_depth_frac && n.start_depth_frac <= n.end_depth_frac && n.end_depth_frac <= 1.0) {
            return bad("depth fractions must satisfy 0 < start <= end <= 1");
        }
        let nonneg = [
            n.jerk_rate,
            n.jerk_px,
            n.bend_amplitude,
            n.width_px,
            n.intensity,
            n.tip_fade,
            n.tip_intensity,
            self.speckle.level,
            self.speckle.rayleigh_scale,
            self.speckle.texture_contrast,
            self.occlusion.band_width_px,
            self.artifacts.brightness,
            self.dropout.rate,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("magnitudes must be finite and non-negative");
        }
        if n.width_px <= 0.0 {
            return bad("needle width must be positive");
        }
        if !(0.0..=1.0).contains(&self.occlusion.attenuation) {
            return bad("attenuation must lie in [0, 1]");
        }
        if n.tip_fade > 1.0 {
            return bad("tip_fade is a fraction of the shaft");
        }
        let d = &self.dropout;
        if !(d.duration_frames[0] >= 1 && d.duration_frames[0] <= d.duration_frames[1]) {
            return bad("dropout durations must be an ordered range of positive lengths");
        }
        if !(0.0 <= d.from_frac[0] && d.from_frac[0] <= d.from_frac[1] && d.from_frac[1] <= 1.0) {
            return bad("dropout from_frac must be an ordered range inside [0, 1]");
        }
        if !(0.0..=1.0).contains(&d.visibility) {
            return bad("dropout visibility must lie in [0, 1]");
        }
        if self.probe_motion.step_px > 2 {
            return bad("probe steps are at most 2 px per frame");
        }
        let a = &self.artifacts.length_frac;
        if !(0.0 <= a[0] && a[0] <= a[1]) {
            return bad("artifact length range must be ordered and non-negative");
        }
        Ok(())
    }
}

/// Needle geometry at one frame: a quadratic Bezier from `entry` through
/// `control` to `tip`, whose arc length equals `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedlePose {
    pub entry: (f64, f64),
    pub control: (f64, f64),
    pub tip: (f64, f64),
    pub depth: f64,
}

impl NeedlePose {
    pub fn point(&self, s: f64) -> (f64, f64) {
        let u = 1.0 - s;
        (
            u * u * self.entry.0 + 2.0 * u * s * self.control.0 + s * s * self.tip.0,
            u * u * self.entry.1 + 2.0 * u * s * self.control.1 + s * s * self.tip.1,
        )
    }

    /// `segments + 1` points along the curve.
    pub fn polyline(&self, segments: usize) -> Vec<(f64, f64)> {
        (0..=segments).map(|i| self.point(i as f64 / segments as f64)).collect()
    }

    /// Polyline with roughly half-pixel segments.
    pub fn dense_polyline(&self) -> Vec<(f64, f64)> {
        self.polyline(((2.0 * self.depth).ceil() as usize).max(8))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleTrajectory {
    pub poses: Vec<NeedlePose>,
}

impl NeedleTrajectory {
    pub fn depths(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.depth).collect()
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Arc length of a polyline.
pub fn polyline_length(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .sum()
}

/// Arc length of the unit-chord quadratic Bezier whose control point sits
/// `kappa` (in chord units) off the chord midpoint.
fn unit_bezier_length(kappa: f64) -> f64 {
    let pose = NeedlePose {
        entry: (0.0, 0.0),
        control: (0.5, kappa),
        tip: (1.0, 0.0),
        depth: 1.0,
    };
    polyline_length(&pose.polyline(4096))
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Length from `p` along direction `d` to the image border (pixel centres
/// `0..size-1`).
fn ray_to_border(p: (f64, f64), d: (f64, f64), size: f64) -> f64 {
    let hi = size - 1.0;
    let mut t = f64::INFINITY;
    for (pc, dc) in [(p.0, d.0), (p.1, d.1)] {
        if dc > 1e-12 {
            t = t.min((hi - pc) / dc);
        } else if dc < -1e-12 {
            t = t.min(-pc / dc);
        }
    }
    t
}

/// Geometry shared by all frames of one video.
struct NeedleLayout {
    entry: (f64, f64),
    dir: (f64, f64),
    normal: (f64, f64),
    kappa: f64,
    arc_per_chord: f64,
    max_depth: f64,
}

fn needle_layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<NeedleLayout> {
    let size = cfg.image_size as f64;
    let n = &cfg.needle;
    let angle = uniform(rng, n.angle_deg).to_radians();
    let entry = (0.0, (uniform(rng, n.entry_y_frac) * size).round());
    let dir = (angle.cos(), angle.sin());
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let normal = (-dir.1 * sign, dir.0 * sign);
    let margin = n.width_px + 2.0;
    let avail = ray_to_border(entry, dir, size) - margin - n.bend_amplitude;
    if avail < 8.0 {
        return Err(Error::config("needle does not fit inside the image at this angle"));
    }
    let chord_full = n.end_depth_frac * avail;
    let kappa = n.bend_amplitude / chord_full;
    let arc_per_chord = unit_bezier_length(kappa);
    // the final depth must keep the bowed tip inside the margin
    let max_depth = avail * arc_per_chord;
    Ok(NeedleLayout {
        entry,
        dir,
        normal,
        kappa,
        arc_per_chord,
        max_depth,
    })
}

fn pose_for_depth(l: &NeedleLayout, depth: f64) -> NeedlePose {
    let chord = depth / l.arc_per_chord;
    let tip = (l.entry.0 + l.dir.0 * chord, l.entry.1 + l.dir.1 * chord);
    let off = l.kappa * chord;
    let control = (
        0.5 * (l.entry.0 + tip.0) + l.normal.0 * off,
        0.5 * (l.entry.1 + tip.1) + l.normal.1 * off,
    );
    NeedlePose {
        entry: l.entry,
        control,
        tip,
        depth,
    }
}

/// Draws the per-video needle path. Uses its own stream derived from the
/// seed so trajectories do not depend on rendering choices.
pub fn generate_trajectory(cfg: &SynthConfig) -> Result<NeedleTrajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = needle_layout(cfg, &mut rng)?;
    let n = &cfg.needle;
    let d1 = n.end_depth_frac * layout.max_depth;
    let d0 = (n.start_depth_frac * layout.max_depth).min(d1).max(n.width_px + 1.0);
    let poisson = (n.jerk_rate > 0.0).then(|| Poisson::new(n.jerk_rate).expect("positive rate"));
    let frames = cfg.n_frames;
    let mut jerk_total = 0.0;
    let mut poses = Vec::with_capacity(frames);
    for t in 0..frames {
        if let Some(p) = &poisson {
            if t > 0 {
                let events = p.sample(&mut rng) as usize;
                for _ in 0..events {
                    jerk_total += n.jerk_px * rng.random_range(0.5..=1.0);
                }
            }
        }
        let u = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
        let depth = (d0 + (d1 - d0) * smoothstep(u) + jerk_total).min(layout.max_depth);
        poses.push(pose_for_depth(&layout, depth));
    }
    Ok(NeedleTrajectory { poses })
}

/// Squared distance from `p` to segment `ab`, and the segment parameter.
fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let s = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p.0 - a.0 - s * vx, p.1 - a.1 - s * vy);
    (dx * dx + dy * dy, s)
}

/// For every pixel within `radius` of the polyline, calls
/// `f(index, distance, arc_fraction)` with the nearest point's position
/// along the curve (0 at the entry, 1 at the tip).
fn for_pixels_near(pts: &[(f64, f64)], size: usize, radius: f64, mut f: impl FnMut(usize, f64, f64)) {
    let total = polyline_length(pts).max(1e-12);
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let l = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + l);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    let clampi = |v: f64| (v.max(0.0) as usize).min(size - 1);
    let (xa, xb) = (clampi((x0 - radius).floor()), clampi((x1 + radius).ceil()));
    let (ya, yb) = (clampi((y0 - radius).floor()), clampi((y1 + radius).ceil()));
    if x1 + radius < 0.0 || y1 + radius < 0.0 {
        return;
    }
    let r2 = radius * radius;
    let bw = xb - xa + 1;
    let mut best = vec![(f64::INFINITY, 0.0); bw * (yb - ya + 1)];
    // each segment only visits its own neighbourhood; segments are taken in
    // order so the first nearest one wins ties
    for (i, w) in pts.windows(2).enumerate() {
        let sx = (clampi((w[0].0.min(w[1].0) - radius).floor()), clampi((w[0].0.max(w[1].0) + radius).ceil()));
        let sy = (clampi((w[0].1.min(w[1].1) - radius).floor()), clampi((w[0].1.max(w[1].1) + radius).ceil()));
        for y in sy.0.max(ya)..=sy.1.min(yb) {
            for x in sx.0.max(xa)..=sx.1.min(xb) {
                let (d2, s) = seg_dist2((x as f64, y as f64), w[0], w[1]);
                let b = &mut best[(y - ya) * bw + x - xa];
                if d2 < b.0 {
                    *b = (d2, (cum[i] + s * (cum[i + 1] - cum[i])) / total);
                }
            }
        }
    }
    for y in ya..=yb {
        for x in xa..=xb {
            let (d2, s) = best[(y - ya) * bw + x - xa];
            if d2 <= r2 + 1e-9 {
                f(y * size + x, d2.sqrt(), s);
            }
        }
    }
}

/// Mask of all pixel centres within `width / 2` of the polyline.
pub fn rasterize_polyline(pts: &[(f64, f64)], size: usize, width: f64) -> Vec<u8> {
    let mut m = vec![0u8; size * size];
    for_pixels_near(pts, size, width / 2.0, |i, _, _| m[i] = 1);
    m
}

/// Smooth random field in `[0, 1]`, sum of bilinearly interpolated value
/// noise octaves, defined on an `n × n` grid.
fn value_noise(rng: &mut ChaCha8Rng, n: usize, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    let mut amp_total = 0.0;
    for o in 0..octaves.max(1) {
        let cell = ((n as f64) / (4.0 * 2f64.powi(o as i32))).max(2.0);
        let g = (n as f64 / cell).ceil() as usize + 2;
        let grid: Vec<f64> = (0..g * g).map(|_| rng.random::<f64>()).collect();
        let amp = 0.5f64.powi(o as i32);
        amp_total += amp;
        for y in 0..n {
            for x in 0..n {
                let (gx, gy) = (x as f64 / cell, y as f64 / cell);
                let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                let (fx, fy) = (smoothstep(gx - ix as f64), smoothstep(gy - iy as f64));
                let v = |a: usize, b: usize| grid[(iy + b) * g + ix + a];
                let top = v(0, 0) * (1.0 - fx) + v(1, 0) * fx;
                let bot = v(0, 1) * (1.0 - fx) + v(1, 1) * fx;
                out[y * n + x] += amp * (top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= amp_total);
    out
}

struct Ellipse {
    c: (f64, f64),
    r: (f64, f64),
    angle: f64,
    darkness: f64,
}

impl Ellipse {
    /// 1 well inside, 0 outside, soft edge.
    fn weight(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.c.0, y - self.c.1);
        let u = (c * dx + s * dy) / self.r.0;
        let v = (-s * dx + c * dy) / self.r.1;
        let q = (u * u + v * v).sqrt();
        (1.0 - smoothstep((q - 0.8) / 0.4)).clamp(0.0, 1.0)
    }
}

fn rayleigh(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Renders frames and full-extent masks for a trajectory.
pub fn render_video(cfg: &SynthConfig, traj: &NeedleTrajectory, video_id: &str) -> Result<VideoSequence> {
    cfg.validate()?;
    let size = cfg.image_size;
    let sz = size as f64;
    for (t, p) in traj.poses.iter().enumerate() {
        for q in [p.entry, p.point(0.5), p.tip] {
            if !(q.0 >= -0.5 && q.1 >= -0.5 && q.0 <= sz - 0.5 && q.1 <= sz - 0.5) {
                return Err(Error::OutOfBounds(format!("frame {t}: needle point {q:?} outside the image")));
            }
        }
    }
    // rendering stream independent of the trajectory stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_1A6E);
    let margin = cfg.probe_motion.max_offset_px;
    let world = size + 2 * margin;
    let texture = value_noise(&mut rng, world, cfg.speckle.lowfreq_texture_octaves);
    let vessels: Vec<Ellipse> = (0..cfg.speckle.vessels)
        .map(|_| Ellipse {
            c: (rng.random_range(0.0..world as f64), rng.random_range(0.0..world as f64)),
            r: (rng.random_range(0.06..0.14) * sz, rng.random_range(0.03..0.07) * sz),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            darkness: rng.random_range(0.6..0.9),
        })
        .collect();
    let mut tissue = vec![0.0; world * world];
    let tc = cfg.speckle.texture_contrast;
    for y in 0..world {
        for x in 0..world {
            let mut v = cfg.speckle.level * (1.0 - tc + 2.0 * tc * texture[y * world + x]);
            for e in &vessels {
                v *= 1.0 - e.darkness * e.weight(x as f64, y as f64);
            }
            tissue[y * world + x] = v;
        }
    }
    // static distractor lines, drawn with the needle's profile
    let art = &cfg.artifacts;
    let width = cfg.needle.width_px;
    let sigma = (width / 2.0).max(0.5);
    let mut artifacts = vec![0.0; size * size];
    for _ in 0..art.n_distractor_lines {
        let len = uniform(&mut rng, art.length_frac) * sz;
        let ang = rng.random_range(0.0..std::f64::consts::PI);
        let c = (rng.random_range(0.2..0.8) * sz, rng.random_range(0.2..0.8) * sz);
        let (dx, dy) = (ang.cos() * len / 2.0, ang.sin() * len / 2.0);
        let pts = [(c.0 - dx, c.1 - dy), (c.0 + dx, c.1 + dy)];
        let peak = art.brightness * cfg.needle.intensity;
        for_pixels_near(&pts, size, 3.0 * sigma, |i, d, _| {
            let v = peak * (-(d * d) / (2.0 * sigma * sigma)).exp();
            artifacts[i] = f64::max(artifacts[i], v);
        });
    }
    // occlusion bands: vertical strips over the middle of the final shaft
    let occ = &cfg.occlusion;
    let last = traj.poses.last().map(|p| p.tip.0).unwrap_or(sz / 2.0);
    let bands: Vec<(f64, f64)> = (0..occ.band_count)
        .map(|_| {
            let cx = rng.random_range(0.3..0.7) * last;
            (cx - occ.band_width_px / 2.0, cx + occ.band_width_px / 2.0)
        })
        .collect();
    let in_band = |x: f64| bands.iter().any(|(a, b)| x >= *a && x <= *b);

    let step = cfg.probe_motion.step_px as i64;
    let maxo = margin as i64;
    let (mut ox, mut oy) = (0i64, 0i64);
    let mut speckle: Vec<f64> = Vec::new();
    let mut last_offset = None;
    let norm = (std::f64::consts::PI / 2.0).sqrt() * SpeckleConfig::default().rayleigh_scale;
    // own stream so that episodes do not perturb the other draws
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0D12_0F0F);
    let drop = &cfg.dropout;
    let (mut drop_left, mut drop_from) = (0usize, 1.0f64);
    let mut frames = Vec::with_capacity(traj.poses.len());
    let mut masks = Vec::with_capacity(traj.poses.len());
    for (t, pose) in traj.poses.iter().enumerate() {
        if drop_left == 0 && drop.rate > 0.0 && drop_rng.random::<f64>() < 1.0 - (-drop.rate).exp() {
            drop_left = drop_rng.random_range(drop.duration_frames[0]..=drop.duration_frames[1]);
            drop_from = uniform(&mut drop_rng, drop.from_frac);
        }
        let dropped_from = if drop_left > 0 {
            drop_left -= 1;
            Some(drop_from)
        } else {
            None
        };
        if t > 0 && step > 0 {
            ox = (ox + rng.random_range(-step..=step)).clamp(-maxo, maxo);
            oy = (oy + rng.random_range(-step..=step)).clamp(-maxo, maxo);
        }
        // fresh speckle whenever the probe moves
        if last_offset != Some((ox, oy)) {
            speckle = (0..size * size)
                .map(|_| rayleigh(&mut rng, cfg.speckle.rayleigh_scale) / norm)
                .collect();
            last_offset = Some((ox, oy));
        }
        let mut img = vec![0.0f64; size * size];
        for y in 0..size {
            let wy = (y as i64 + maxo + oy) as usize;
            for x in 0..size {
                let wx = (x as i64 + maxo + ox) as usize;
                let i = y * size + x;
                img[i] = tissue[wy * world + wx] * speckle[i] + artifacts[i];
            }
        }
        let pts = pose.dense_polyline();
        let fade = cfg.needle.tip_fade;
        let tip_i = cfg.needle.tip_intensity;
        for_pixels_near(&pts, size, 3.0 * sigma, |i, d, s| {
            let mut v = cfg.needle.intensity * (-(d * d) / (2.0 * sigma * sigma)).exp();
            if fade > 0.0 && s > 1.0 - fade {
                let u = (s - (1.0 - fade)) / fade;
                v *= 1.0 - u * (1.0 - tip_i);
            }
            if in_band((i % size) as f64) {
                v *= occ.attenuation;
            }
            if dropped_from.is_some_and(|f| s >= f) {
                v *= drop.visibility;
            }
            img[i] += v;
        });
        let px: Vec<f32> = img.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
        frames.push(ImageFrame::new(video_id, t, size, size, px)?);
        masks.push(MaskFrame::new(t, size, size, rasterize_polyline(&pts, size, width))?);
    }
    VideoSequence::new(video_id, frames, Some(masks), DEFAULT_FPS)
}

pub fn video_id(index: usize) -> String {
    format!("v{index:03}")
}

/// Per-video config: seed `cfg.seed + index`, and a frame count drawn from
/// `frames` (inclusive) when given.
pub fn video_config(cfg: &SynthConfig, index: usize, frames: Option<(usize, usize)>) -> SynthConfig {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(index as u64);
    if let Some((lo, hi)) = frames {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0xF4A3_E5);
        c.n_frames = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    }
    c
}

/// One video in memory.
pub fn generate_video(cfg: &SynthConfig, index: usize, frames: Option<(usize, usize)>) -> Result<VideoSequence> {
    let c = video_config(cfg, index, frames);
    let traj = generate_trajectory(&c)?;
    render_video(&c, &traj, &video_id(index))
}

/// Writes `n_videos` videos plus `manifest.json` and `synthgen.json` under
/// `out_dir`.
pub fn generate_dataset(
    cfg: &SynthConfig,
    n_videos: usize,
    frames: Option<(usize, usize)>,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_videos == 0 {
        return Err(Error::MalformedManifest("cannot generate a dataset with zero videos".into()));
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut videos = Vec::with_capacity(n_videos);
    for i in 0..n_videos {
        let seq = generate_video(cfg, i, frames)?;
        let id = video_id(i);
        save_video(&seq, &out_dir.join(&id))?;
        videos.push(ManifestEntry {
            dir: id.clone(),
            id,
            frames: seq.len(),
            has_masks: true,
        });
    }
    let manifest = DatasetManifest {
        canonical_size: [cfg.image_size, cfg.image_size],
        videos,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir)?;
    let path = out_dir.join(SYNTH_CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg).expect("config serialises");
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_needle_without_jerks() {
        let mut cfg = SynthConfig {
            n_frames: 20,
            ..Default::default()
        };
        cfg.needle.jerk_rate = 0.0;
        cfg.needle.bend_amplitude = 0.0;
        let tr = generate_trajectory(&cfg).unwrap();
        let d = tr.depths();
        assert!(d.windows(2).all(|w| w[1] > w[0]));
        for p in &tr.poses {
            // control on the chord
            let mid = (0.5 * (p.entry.0 + p.tip.0), 0.5 * (p.entry.1 + p.tip.1));
            assert!((mid.0 - p.control.0).abs() < 1e-9 && (mid.1 - p.control.1).abs() < 1e-9);
        }
    }

    #[test]
    fn arc_length_matches_depth() {
        let cfg = SynthConfig {
            n_frames: 30,
            seed: 9,
            ..Default::default()
        };
        let tr = generate_trajectory(&cfg).unwrap();
        for p in &tr.poses {
            assert!((polyline_length(&p.polyline(2000)) - p.depth).abs() < 0.5);
        }
    }

    #[test]
    fn invalid_attenuation_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.occlusion.attenuation = 1.5;
        assert!(matches!(generate_trajectory(&cfg), Err(Error::InvalidConfig(_))));
    }
}
