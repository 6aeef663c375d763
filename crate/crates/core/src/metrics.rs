//! Overlap metrics, needle endpoint extraction, tip/length errors and their
//! aggregation into fold reports and comparison tables.

use serde::{Deserialize, Serialize};

use crate::datamodel::MaskFrame;
use crate::error::{Error, Result};

fn check_dims(a: &MaskFrame, b: &MaskFrame) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(format!(
            "mask dims {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// (TP, FP, FN) pixel counts.
fn confusion(pred: &MaskFrame, gt: &MaskFrame) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for (p, g) in pred.pixels.iter().zip(&gt.pixels) {
        match (*p != 0, *g != 0) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    c
}

/// `2|P∩G| / (|P|+|G|)`, 1 when both masks are empty.
pub fn dice(pred: &MaskFrame, gt: &MaskFrame) -> Result<f64> {
    check_dims(pred, gt)?;
    let (tp, fp, fn_) = confusion(pred, gt);
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Precision and recall, each 1 when its denominator is 0.
pub fn precision_recall(pred: &MaskFrame, gt: &MaskFrame) -> Result<(f64, f64)> {
    check_dims(pred, gt)?;
    let (tp, fp, fn_) = confusion(pred, gt);
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((ratio(tp, tp + fp), ratio(tp, tp + fn_)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleEndpoints {
    /// `(x, y)` pixel coordinates.
    pub entry: (usize, usize),
    pub tip: (usize, usize),
    pub length: f64,
}

/// Unit leading eigenvector of the coordinate covariance. Sums are taken in
/// integers so the result does not depend on pixel order.
pub fn principal_axis(points: &[(usize, usize)]) -> (f64, f64) {
    let n = points.len() as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for &(x, y) in points {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    // n² · covariance, exact
    let a = n * sxx - sx * sx;
    let c = n * syy - sy * sy;
    let b = n * sxy - sx * sy;
    if b == 0 {
        return if a >= c { (1.0, 0.0) } else { (0.0, 1.0) };
    }
    let (a, b, c) = (a as f64, b as f64, c as f64);
    let l1 = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    // pick the better-conditioned of the two eigenvector forms
    let (vx, vy) = if (l1 - a).abs() > (l1 - c).abs() { (b, l1 - a) } else { (l1 - c, b) };
    let norm = (vx * vx + vy * vy).sqrt();
    (vx / norm, vy / norm)
}

/// Endpoints of the foreground along its principal axis. Ties at an extreme
/// go to the pixel closest to the axis, then the lexicographically smallest
/// `(x, y)`. The entry is the endpoint with smaller x (then smaller y).
pub fn endpoints_of(points: &[(usize, usize)]) -> Result<NeedleEndpoints> {
    if points.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    let (vx, vy) = principal_axis(&pts);
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let proj = |p: &(usize, usize)| (p.0 as f64 - cx) * vx + (p.1 as f64 - cy) * vy;
    let perp = |p: &(usize, usize)| ((p.0 as f64 - cx) * vy - (p.1 as f64 - cy) * vx).abs();
    let scale = pts.iter().map(|p| proj(p).abs()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let lo = pts.iter().map(|p| proj(p)).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| proj(p)).fold(f64::NEG_INFINITY, f64::max);
    let pick = |target: f64| -> (usize, usize) {
        *pts.iter()
            .filter(|p| (proj(p) - target).abs() <= tol)
            .min_by(|a, b| perp(a).total_cmp(&perp(b)).then(a.cmp(b)))
            .expect("an extreme exists")
    };
    let (p, q) = (pick(lo), pick(hi));
    let (entry, tip) = if p <= q { (p, q) } else { (q, p) };
    let length = ((tip.0 as f64 - entry.0 as f64).powi(2) + (tip.1 as f64 - entry.1 as f64).powi(2)).sqrt();
    Ok(NeedleEndpoints { entry, tip, length })
}

pub fn extract_endpoints(mask: &MaskFrame) -> Result<NeedleEndpoints> {
    endpoints_of(&mask.foreground())
}

/// `(Δx, Δy, ΔL)` between predicted and ground-truth tips/lengths, or
/// `None` if either mask is empty.
pub fn needle_errors(pred: &MaskFrame, gt: &MaskFrame) -> Result<Option<(f64, f64, f64)>> {
    check_dims(pred, gt)?;
    if pred.count() == 0 || gt.count() == 0 {
        return Ok(None);
    }
    let p = extract_endpoints(pred)?;
    let g = extract_endpoints(gt)?;
    Ok(Some((
        (p.tip.0 as f64 - g.tip.0 as f64).abs(),
        (p.tip.1 as f64 - g.tip.1 as f64).abs(),
        (p.length - g.length).abs(),
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub dl: Option<f64>,
    pub pred_empty: bool,
    pub gt_empty: bool,
}

impl FrameMetrics {
    pub fn failed_detection(&self) -> bool {
        self.pred_empty || self.gt_empty
    }
}

pub fn frame_metrics(pred: &MaskFrame, gt: &MaskFrame) -> Result<FrameMetrics> {
    let dsc = dice(pred, gt)?;
    let (precision, recall) = precision_recall(pred, gt)?;
    let errs = needle_errors(pred, gt)?;
    Ok(FrameMetrics {
        dsc,
        precision,
        recall,
        dx: errs.map(|e| e.0),
        dy: errs.map(|e| e.1),
        dl: errs.map(|e| e.2),
        pred_empty: pred.count() == 0,
        gt_empty: gt.count() == 0,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    /// `"0.39 ± 0.16"` with the given number of decimals.
    pub fn format(&self, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: Option<usize>,
    pub frames: usize,
    pub dsc: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub dx: Option<Stat>,
    pub dy: Option<Stat>,
    pub dl: Option<Stat>,
    pub detection_failure_rate: f64,
}

impl FoldReport {
    /// Mean `Δx + Δy`, if defined.
    pub fn tip_error(&self) -> Option<f64> {
        Some(self.dx?.mean + self.dy?.mean)
    }
}

/// Means/stds over the frames where each metric is defined. Frames are
/// sorted internally so the result does not depend on their order.
pub fn aggregate(frames: &[FrameMetrics], fold: Option<usize>) -> Result<FoldReport> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to aggregate".into()));
    }
    let col = |f: &dyn Fn(&FrameMetrics) -> Option<f64>| {
        let mut v: Vec<f64> = frames.iter().filter_map(f).collect();
        v.sort_by(f64::total_cmp);
        Stat::of(&v)
    };
    let failures = frames.iter().filter(|f| f.failed_detection()).count();
    Ok(FoldReport {
        fold,
        frames: frames.len(),
        dsc: col(&|f| Some(f.dsc)).expect("non-empty"),
        precision: col(&|f| Some(f.precision)).expect("non-empty"),
        recall: col(&|f| Some(f.recall)).expect("non-empty"),
        dx: col(&|f| f.dx),
        dy: col(&|f| f.dy),
        dl: col(&|f| f.dl),
        detection_failure_rate: failures as f64 / frames.len() as f64,
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub report: FoldReport,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: usize,
    #[serde(flatten)]
    pub metrics: FrameMetrics,
}

/// Table columns: label, decimals, higher-is-better.
pub const COLUMNS: [(&str, usize, bool); 6] = [
    ("DSC (D) ↑", 2, true),
    ("Precision (P) ↑", 2, true),
    ("Recall (R) ↑", 2, true),
    ("Δx ↓", 0, false),
    ("Δy ↓", 0, false),
    ("ΔL ↓", 0, false),
];

/// One table row: a configuration's per-fold reports collapsed to
/// mean ± std across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    /// Rows sharing a group (the encoder) compete for best-cell marking.
    pub group: String,
    pub folds: usize,
    pub cells: [Option<Stat>; 6],
    #[serde(default)]
    pub failed: Option<String>,
}

impl SummaryRow {
    pub fn from_reports(label: &str, group: &str, reports: &[FoldReport]) -> SummaryRow {
        let across = |f: &dyn Fn(&FoldReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            Stat::of(&v)
        };
        SummaryRow {
            label: label.to_string(),
            group: group.to_string(),
            folds: reports.len(),
            cells: [
                across(&|r| Some(r.dsc.mean)),
                across(&|r| Some(r.precision.mean)),
                across(&|r| Some(r.recall.mean)),
                across(&|r| r.dx.map(|s| s.mean)),
                across(&|r| r.dy.map(|s| s.mean)),
                across(&|r| r.dl.map(|s| s.mean)),
            ],
            failed: None,
        }
    }

    pub fn failed(label: &str, group: &str, reason: &str) -> SummaryRow {
        SummaryRow {
            label: label.to_string(),
            group: group.to_string(),
            folds: 0,
            cells: [None; 6],
            failed: Some(reason.to_string()),
        }
    }
}

/// Markdown comparison table; per group and column the best mean (after
/// rounding to the displayed precision) is set in bold.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from("| Model |");
    for (name, _, _) in COLUMNS {
        out.push_str(&format!(" {name} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(COLUMNS.len()));
    out.push('\n');
    let rounded = |s: &Stat, d: usize| {
        let f = 10f64.powi(d as i32);
        (s.mean * f).round() / f
    };
    for row in rows {
        out.push_str(&format!("| {} |", row.label));
        if let Some(reason) = &row.failed {
            out.push_str(&format!(" failed: {} |", reason.replace('|', "/")));
            out.push_str(&" |".repeat(COLUMNS.len() - 1));
            out.push('\n');
            continue;
        }
        for (j, (_, dec, higher)) in COLUMNS.iter().enumerate() {
            match &row.cells[j] {
                None => out.push_str(" n/a |"),
                Some(s) => {
                    let best = rows
                        .iter()
                        .filter(|r| r.group == row.group && r.failed.is_none())
                        .filter_map(|r| r.cells[j].as_ref().map(|c| rounded(c, *dec)))
                        .fold(None, |acc: Option<f64>, v| {
                            Some(match acc {
                                None => v,
                                Some(a) if *higher => a.max(v),
                                Some(a) => a.min(v),
                            })
                        });
                    let cell = s.format(*dec);
                    if best == Some(rounded(s, *dec)) {
                        out.push_str(&format!(" **{cell}** |"));
                    } else {
                        out.push_str(&format!(" {cell} |"));
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> MaskFrame {
        let mut px = vec![0u8; w * h];
        for &(x, y) in on {
            px[y * w + x] = 1;
        }
        MaskFrame::new(0, h, w, px).unwrap()
    }

    #[test]
    fn dice_conventions() {
        let e = MaskFrame::empty(0, 4, 4);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let a = mask(4, 4, &[(0, 0), (1, 0)]);
        let b = mask(4, 4, &[(1, 0), (2, 0)]);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(precision_recall(&e, &a).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn horizontal_segment_endpoints() {
        let pts: Vec<_> = (5..=50).map(|x| (x, 10)).collect();
        let m = mask(64, 64, &pts);
        let e = extract_endpoints(&m).unwrap();
        assert_eq!((e.entry, e.tip, e.length), ((5, 10), (50, 10), 45.0));
        assert!(matches!(extract_endpoints(&MaskFrame::empty(0, 3, 3)), Err(Error::EmptyMask)));
    }

    #[test]
    fn hand_geometry_errors() {
        let g = mask(64, 64, &(5..=50).map(|x| (x, 10)).collect::<Vec<_>>());
        let p = mask(64, 64, &(5..=45).map(|x| (x, 12)).collect::<Vec<_>>());
        assert_eq!(needle_errors(&p, &g).unwrap(), Some((5.0, 2.0, 5.0)));
        assert_eq!(needle_errors(&MaskFrame::empty(0, 64, 64), &g).unwrap(), None);
    }

    #[test]
    fn stat_and_format() {
        let s = Stat::of(&[0.3, 0.5]).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15 && (s.std - 0.1).abs() < 1e-15);
        assert_eq!(Stat { mean: 0.391, std: 0.164, n: 2 }.format(2), "0.39 ± 0.16");
        assert_eq!(Stat { mean: 54.2, std: 18.4, n: 2 }.format(0), "54 ± 18");
    }

    #[test]
    fn aggregate_requires_frames() {
        assert!(matches!(aggregate(&[], None), Err(Error::EmptyInput(_))));
    }
}
