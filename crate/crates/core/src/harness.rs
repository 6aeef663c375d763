//! Video-level cross-validation, truncation-free BPTT training over short
//! windows, streaming evaluation, and experiment bookkeeping.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{no_grad, ops, AdamW, AdamWConfig, ReduceLrOnPlateau, Real, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{stack_frames, BlockKind};
use crate::datamodel::{
    augment_sequence, load_manifest, load_video, AugmentationSpec, DatasetManifest, MaskFrame, VideoSequence,
};
use crate::decoder::binarize;
use crate::encoder::EncoderVariant;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, frame_metrics, render_table, FoldReport, FrameMetrics, FrameRecord, MetricsFile, SummaryRow};
use crate::model::{frame_tensor, load_checkpoint, read_meta, save_checkpoint, CheckpointMeta, ModelConfig, SegModel, SequenceModelState};

pub const METRICS_FILE: &str = "metrics.json";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SUMMARY_FILE: &str = "summary.md";

fn d_lr() -> f64 {
    1e-3
}
fn d_wd() -> f64 {
    1e-2
}
fn d_factor() -> f64 {
    0.7
}
fn d_patience() -> usize {
    20
}
fn d_epochs() -> usize {
    10
}
fn d_bs_stateless() -> usize {
    8
}
fn d_bs_recurrent() -> usize {
    4
}
fn d_seq_len() -> [usize; 2] {
    [7, 10]
}
fn d_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_factor")]
    pub plateau_factor: f64,
    #[serde(default = "d_patience")]
    pub plateau_patience: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_bs_stateless")]
    pub batch_size_stateless: usize,
    #[serde(default = "d_bs_recurrent")]
    pub batch_size_recurrent: usize,
    /// Inclusive window length range, sampled uniformly per batch.
    #[serde(default = "d_seq_len")]
    pub seq_len: [usize; 2],
    /// Optimiser steps per epoch; by default enough windows to cover the
    /// training frames once.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: d_lr(),
            weight_decay: d_wd(),
            plateau_factor: d_factor(),
            plateau_patience: d_patience(),
            epochs: d_epochs(),
            batch_size_stateless: d_bs_stateless(),
            batch_size_recurrent: d_bs_recurrent(),
            seq_len: d_seq_len(),
            steps_per_epoch: None,
            grad_clip: None,
            augmentation: AugmentationSpec::default(),
            threshold: d_threshold(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self, kind: BlockKind) -> usize {
        if kind.is_recurrent() {
            self.batch_size_recurrent
        } else {
            self.batch_size_stateless
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.seq_len[0] == 0 || self.seq_len[0] > self.seq_len[1] {
            return Err(Error::config("seq_len must be an ordered range of positive lengths"));
        }
        if self.batch_size_stateless == 0 || self.batch_size_recurrent == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("plateau factor must lie in (0, 1)"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("grad_clip must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub train_frames: usize,
    pub test_frames: usize,
}

/// Greedy largest-first packing of whole videos into `k` folds (ties in
/// length broken by a seeded shuffle), each video going to the fold with
/// the fewest frames so far.
pub fn cross_val_split(videos: &[(String, usize)], k: usize, seed: u64) -> Result<Vec<FoldSpec>> {
    if k == 0 || videos.len() < k {
        return Err(Error::TooFewVideos {
            needed: k.max(1),
            got: videos.len(),
        });
    }
    let mut order: Vec<&(String, usize)> = videos.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.cmp(&a.1));
    let mut bins: Vec<Vec<&(String, usize)>> = vec![Vec::new(); k];
    let mut load = vec![0usize; k];
    for v in order {
        let i = (0..k).min_by_key(|&i| (load[i], i)).expect("k > 0");
        load[i] += v.1;
        bins[i].push(v);
    }
    let total: usize = videos.iter().map(|v| v.1).sum();
    let folds: Vec<FoldSpec> = (0..k)
        .map(|f| {
            let test: Vec<String> = bins[f].iter().map(|v| v.0.clone()).collect();
            let train: Vec<String> = (0..k)
                .filter(|g| *g != f)
                .flat_map(|g| bins[g].iter().map(|v| v.0.clone()))
                .collect();
            FoldSpec {
                fold_id: f,
                train,
                test,
                train_frames: total - load[f],
                test_frames: load[f],
            }
        })
        .collect();
    for f in &folds {
        assert_no_leakage(f)?;
    }
    Ok(folds)
}

pub fn split_manifest(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<FoldSpec>> {
    let v: Vec<(String, usize)> = manifest.videos.iter().map(|e| (e.id.clone(), e.frames)).collect();
    cross_val_split(&v, k, seed)
}

fn assert_no_leakage(f: &FoldSpec) -> Result<()> {
    let test: HashSet<&String> = f.test.iter().collect();
    if let Some(v) = f.train.iter().find(|v| test.contains(v)) {
        return Err(Error::config(format!("video {v} is in both train and test of fold {}", f.fold_id)));
    }
    Ok(())
}

/// Videos held in memory, addressed by id.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub videos: BTreeMap<String, VideoSequence>,
}

impl Dataset {
    pub fn from_videos(videos: impl IntoIterator<Item = VideoSequence>) -> Self {
        Dataset {
            videos: videos.into_iter().map(|v| (v.video_id.clone(), v)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&VideoSequence> {
        self.videos.get(id).ok_or_else(|| Error::UnknownVideo(id.to_string()))
    }

    pub fn ids_and_lengths(&self) -> Vec<(String, usize)> {
        self.videos.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }
}

/// Loader parallelism cap from `KFSEG_NUM_WORKERS` (default 1).
pub fn num_workers() -> usize {
    std::env::var("KFSEG_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(1)
}

/// Loads every video of a manifest, `workers` at a time.
pub fn load_dataset(manifest: &DatasetManifest, workers: usize) -> Result<Dataset> {
    let ids: Vec<&str> = manifest.videos.iter().map(|e| e.id.as_str()).collect();
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(workers.max(1)) {
        let loaded: Vec<Result<VideoSequence>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|id| s.spawn(|| load_video(manifest, id))).collect();
            handles.into_iter().map(|h| h.join().expect("loader thread panicked")).collect()
        });
        for v in loaded {
            out.push(v?);
        }
    }
    Ok(Dataset::from_videos(out))
}

/// Model input `(1, C, H, W)` for frame `t` of `seq`.
pub fn model_input<T: Real>(cfg: &ModelConfig, seq: &VideoSequence, t: usize) -> Result<Tensor<T>> {
    if t >= seq.len() {
        return Err(Error::Index {
            index: t,
            len: seq.len(),
        });
    }
    if cfg.block.kind == BlockKind::Stack {
        stack_frames(seq, t, cfg.block.stack_depth)
    } else {
        Ok(frame_tensor(&seq.frames[t]))
    }
}

fn mask_target<T: Real>(m: &MaskFrame) -> Vec<T> {
    m.pixels.iter().map(|p| if *p != 0 { T::one() } else { T::zero() }).collect()
}

/// Per-frame mean BCE on logits, averaged over the sequence, differentiable
/// through the recurrent state across every frame. `inputs[t]` is a batch
/// `(B, C, H, W)`; `targets[t]` holds the matching `B·H·W` labels.
pub fn sequence_loss<T: Real>(
    model: &SegModel<T>,
    state: SequenceModelState<T>,
    inputs: &[Tensor<T>],
    targets: &[Vec<T>],
) -> Result<Tensor<T>> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut state = state;
    let mut losses = Vec::with_capacity(inputs.len());
    for (t, (x, y)) in inputs.iter().zip(targets).enumerate() {
        let (logits, next) = model.forward_frame(&state, t, x)?;
        if logits.numel() != y.len() {
            return Err(Error::shape(format!(
                "frame {t}: {} logits vs {} labels",
                logits.numel(),
                y.len()
            )));
        }
        losses.push(ops::reshape(&ops::bce_with_logits(&logits, y), &[1]));
        state = next;
    }
    Ok(ops::mean(&ops::cat(&losses, 0)))
}

/// One training window: an augmented copy of frames
/// `[start - context, start + len)`, where `context` supplies the earlier
/// frames a stacked input needs.
struct Window {
    seq: VideoSequence,
    offset: usize,
}

fn sample_window(
    videos: &[&VideoSequence],
    weights: &[usize],
    len: usize,
    context: usize,
    aug: &AugmentationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Window> {
    let total: usize = weights.iter().sum();
    let mut r = rng.random_range(0..total);
    let vi = weights
        .iter()
        .position(|w| {
            if r < *w {
                true
            } else {
                r -= w;
                false
            }
        })
        .expect("weights cover the draw");
    let v = videos[vi];
    let start = rng.random_range(0..=v.len() - len);
    let from = start.saturating_sub(context);
    let raw = v.window(from, start + len - from)?;
    Ok(Window {
        seq: augment_sequence(&raw, aug, rng),
        offset: start - from,
    })
}

fn batch_step_inputs<T: Real>(cfg: &ModelConfig, windows: &[Window], t: usize) -> Result<(Tensor<T>, Vec<T>)> {
    let mut xs = Vec::with_capacity(windows.len());
    let mut ys = Vec::new();
    for w in windows {
        let i = w.offset + t;
        xs.push(model_input::<T>(cfg, &w.seq, i)?);
        let masks = w.seq.masks.as_ref().ok_or_else(|| Error::config("training video without masks"))?;
        ys.extend(mask_target::<T>(&masks[i]));
    }
    Ok((ops::cat(&xs, 0), ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub seq_len: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome<T: Real> {
    pub model: SegModel<T>,
    pub optimizer: AdamW<T>,
    pub trace: Vec<LossRecord>,
    pub epoch_losses: Vec<f64>,
}

/// Default steps per epoch: one window per training frame, i.e. every
/// frame is a window start once per epoch on average.
pub fn default_steps_per_epoch(cfg: &TrainConfig, kind: BlockKind, train_frames: usize) -> usize {
    train_frames.div_ceil(cfg.batch_size(kind)).max(1)
}

/// Trains a fresh model on the fold's training videos.
pub fn train_fold<T: Real>(
    cfg: &TrainConfig,
    fold: &FoldSpec,
    model_cfg: &ModelConfig,
    data: &Dataset,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    assert_no_leakage(fold)?;
    let model = SegModel::<T>::new(model_cfg)?;
    let videos: Vec<&VideoSequence> = fold.train.iter().map(|id| data.get(id)).collect::<Result<_>>()?;
    if videos.is_empty() {
        return Err(Error::EmptyInput(format!("fold {} has no training videos", fold.fold_id)));
    }
    let test: HashSet<&String> = fold.test.iter().collect();
    let size = model_cfg.encoder.input_size;
    for v in &videos {
        if test.contains(&v.video_id) {
            return Err(Error::config(format!("training sampled test video {}", v.video_id)));
        }
        if v.len() < cfg.seq_len[1] {
            return Err(Error::config(format!(
                "video {} has {} frames, shorter than the maximum window {}",
                v.video_id,
                v.len(),
                cfg.seq_len[1]
            )));
        }
        if [v.size().0, v.size().1] != size {
            return Err(Error::shape(format!(
                "video {} is {:?}, model expects {:?}",
                v.video_id,
                v.size(),
                size
            )));
        }
    }
    let kind = model_cfg.block.kind;
    let batch = cfg.batch_size(kind);
    let train_frames: usize = videos.iter().map(|v| v.len()).sum();
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| default_steps_per_epoch(cfg, kind, train_frames));
    let context = if kind == BlockKind::Stack {
        model_cfg.block.stack_depth - 1
    } else {
        0
    };

    let mut opt = AdamW::new(
        model.trainable_params(),
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let mut sched = ReduceLrOnPlateau::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (fold.fold_id as u64).wrapping_mul(0x9E37_79B9));
    let mut trace = Vec::new();
    let mut epoch_losses = Vec::new();
    model.set_training(true);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for step in 0..steps {
            let len = rng.random_range(cfg.seq_len[0]..=cfg.seq_len[1]);
            let weights: Vec<usize> = videos.iter().map(|v| v.len() - len + 1).collect();
            let windows: Vec<Window> = (0..batch)
                .map(|_| sample_window(&videos, &weights, len, context, &cfg.augmentation, &mut rng))
                .collect::<Result<_>>()?;
            let mut inputs = Vec::with_capacity(len);
            let mut targets = Vec::with_capacity(len);
            for t in 0..len {
                let (x, y) = batch_step_inputs::<T>(model_cfg, &windows, t)?;
                inputs.push(x);
                targets.push(y);
            }
            opt.zero_grad();
            let loss = sequence_loss(&model, model.reset_sequence(None)?, &inputs, &targets)?;
            let value = loss.item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss.backward();
            let scale = match cfg.grad_clip {
                Some(max) => {
                    let n = opt.grad_norm();
                    if n > max {
                        max / n
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };
            opt.step_scaled(scale);
            sum += value;
            trace.push(LossRecord {
                epoch,
                step,
                seq_len: len,
                loss: value,
                lr: opt.lr(),
            });
        }
        let mean = sum / steps as f64;
        epoch_losses.push(mean);
        let lr = sched.step(mean, opt.lr());
        opt.set_lr(lr);
    }
    model.set_training(false);
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        trace,
        epoch_losses,
    })
}

pub fn write_loss_trace(trace: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in trace {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Streams a video through the model with state carried across frames
/// (`streaming`), or with a fresh state at every frame.
pub fn predict_video<T: Real>(
    model: &SegModel<T>,
    seq: &VideoSequence,
    threshold: f64,
    streaming: bool,
) -> Result<Vec<MaskFrame>> {
    model.set_training(false);
    no_grad(|| {
        let mut state = model.reset_sequence(None)?;
        let mut out = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            if !streaming {
                state = model.reset_sequence(None)?;
            }
            let x = model_input::<T>(model.config(), seq, t)?;
            let (logits, next) = model.forward_frame(&state, t, &x)?;
            let mut m = binarize(&logits, threshold)?.remove(0);
            m.frame_index = t;
            out.push(m);
            state = next;
        }
        Ok(out)
    })
}

/// Scores aligned predicted/ground-truth masks of one video.
pub fn score_video(video_id: &str, preds: &[MaskFrame], gts: &[MaskFrame]) -> Result<Vec<FrameRecord>> {
    if preds.len() != gts.len() {
        return Err(Error::CountMismatch {
            video: video_id.to_string(),
            declared: gts.len(),
            found: preds.len(),
        });
    }
    preds
        .iter()
        .zip(gts)
        .enumerate()
        .map(|(t, (p, g))| {
            Ok(FrameRecord {
                video_id: video_id.to_string(),
                frame_index: t,
                metrics: frame_metrics(p, g)?,
            })
        })
        .collect()
}

/// Streams every test video from a reset state and aggregates all frames.
pub fn evaluate_fold<T: Real>(
    model: &SegModel<T>,
    fold: &FoldSpec,
    data: &Dataset,
    threshold: f64,
) -> Result<MetricsFile> {
    let mut frames = Vec::new();
    for id in &fold.test {
        let seq = data.get(id)?;
        let gts = seq
            .masks
            .as_ref()
            .ok_or_else(|| Error::config(format!("test video {id} has no masks")))?;
        let preds = predict_video(model, seq, threshold, true)?;
        frames.extend(score_video(id, &preds, gts)?);
    }
    let metrics: Vec<FrameMetrics> = frames.iter().map(|f| f.metrics).collect();
    Ok(MetricsFile {
        report: aggregate(&metrics, Some(fold.fold_id))?,
        frames,
    })
}

pub fn write_metrics(m: &MetricsFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("metrics serialise");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Evaluates a stored checkpoint on a fold and writes `metrics.json` next
/// to it (or to `out`).
pub fn evaluate_checkpoint(ckpt: &Path, fold: &FoldSpec, data: &Dataset, threshold: f64, out: Option<&Path>) -> Result<MetricsFile> {
    let (model, _, _) = load_checkpoint::<f32>(ckpt, None)?;
    let m = evaluate_fold(&model, fold, data, threshold)?;
    let dest = match out {
        Some(p) => p.to_path_buf(),
        None => ckpt.with_file_name(METRICS_FILE),
    };
    write_metrics(&m, &dest)?;
    Ok(m)
}

/// One grid point in an experiment file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridEntry {
    pub encoder: EncoderVariant,
    pub block: BlockKind,
}

fn d_k() -> usize {
    5
}
fn d_base() -> usize {
    64
}
fn d_size() -> usize {
    256
}
fn d_runs() -> PathBuf {
    PathBuf::from("runs")
}

/// Contents of `experiment.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    #[serde(default = "d_runs")]
    pub out: PathBuf,
    #[serde(default = "d_k")]
    pub k_folds: usize,
    /// Subset of folds to run (all by default).
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
    /// Empty means the full 3 × 6 grid.
    #[serde(default)]
    pub grid: Vec<GridEntry>,
    #[serde(default = "d_base")]
    pub base_channels: usize,
    #[serde(default = "d_size")]
    pub input_size: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn model_configs(&self) -> Vec<ModelConfig> {
        let grid: Vec<GridEntry> = if self.grid.is_empty() {
            full_grid()
        } else {
            self.grid.clone()
        };
        grid.iter()
            .map(|g| ModelConfig::new(g.encoder, g.block, self.base_channels, self.input_size, self.train.seed))
            .collect()
    }
}

/// All 18 encoder × block pairings.
pub fn full_grid() -> Vec<GridEntry> {
    EncoderVariant::ALL
        .iter()
        .flat_map(|e| BlockKind::ALL.iter().map(move |b| GridEntry { encoder: *e, block: *b }))
        .collect()
}

pub fn fold_dir(root: &Path, cfg: &ModelConfig, fold: usize) -> PathBuf {
    root.join(cfg.slug()).join(format!("fold{fold}"))
}

/// Trains, checkpoints and evaluates one (config, fold) pair under `dir`.
pub fn run_fold(
    train: &TrainConfig,
    fold: &FoldSpec,
    model_cfg: &ModelConfig,
    data: &Dataset,
    dir: &Path,
) -> Result<MetricsFile> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = train_fold::<f32>(train, fold, model_cfg, data)?;
    write_loss_trace(&out.trace, &dir.join(LOSS_TRACE_FILE))?;
    let metrics = evaluate_fold(&out.model, fold, data, train.threshold)?;
    write_metrics(&metrics, &dir.join(METRICS_FILE))?;
    let mut meta = CheckpointMeta::new(model_cfg);
    meta.epoch = train.epochs;
    meta.fold = Some(fold.fold_id);
    meta.lr = Some(out.optimizer.lr());
    meta.metrics = serde_json::to_value(metrics.report.clone())
        .ok()
        .and_then(|v| v.as_object().cloned())
        .unwrap_or_default();
    save_checkpoint(&out.model, Some(&out.optimizer), &meta, &dir.join(CHECKPOINT_FILE))?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub slug: String,
    pub reports: Vec<FoldReport>,
    pub error: Option<String>,
}

/// Runs every grid configuration on the selected folds. A failing
/// configuration is recorded and the grid continues. Writes `summary.md`.
pub fn run_experiment(
    grid: &[ModelConfig],
    cfg: &TrainConfig,
    data: &Dataset,
    folds: &[FoldSpec],
    out_root: &Path,
) -> Result<Vec<ConfigOutcome>> {
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let mut outcomes = Vec::new();
    for mc in grid {
        let mut reports = Vec::new();
        let mut error = None;
        for fold in folds {
            match run_fold(cfg, fold, mc, data, &fold_dir(out_root, mc, fold.fold_id)) {
                Ok(m) => reports.push(m.report),
                Err(e) => {
                    let dir = out_root.join(mc.slug());
                    let _ = fs::create_dir_all(&dir);
                    let _ = fs::write(dir.join("FAILED"), format!("fold {}: {e}\n", fold.fold_id));
                    error = Some(format!("fold {}: {e}", fold.fold_id));
                    break;
                }
            }
        }
        outcomes.push(ConfigOutcome {
            slug: mc.slug(),
            reports,
            error,
        });
    }
    let summary = summarize_runs(out_root)?;
    let path = out_root.join(SUMMARY_FILE);
    fs::write(&path, summary).map_err(|e| Error::io(path, e))?;
    Ok(outcomes)
}

/// Builds the comparison table from `runs/<config>/fold*/metrics.json`
/// (labels from the checkpoint sidecars). Rows are sorted by encoder, then
/// block, so the output depends only on directory contents.
pub fn summarize_runs(root: &Path) -> Result<String> {
    let mut rows: Vec<(usize, usize, SummaryRow)> = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for dir in entries {
        let mut fold_dirs: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("fold")))
            .collect();
        fold_dirs.sort();
        let mut reports = Vec::new();
        let mut cfg = None;
        for fd in &fold_dirs {
            let mpath = fd.join(METRICS_FILE);
            if !mpath.exists() {
                continue;
            }
            reports.push(read_metrics(&mpath)?.report);
            if cfg.is_none() {
                cfg = read_meta(&fd.join(CHECKPOINT_FILE)).ok().map(|m| m.config);
            }
        }
        let failed = fs::read_to_string(dir.join("FAILED")).ok();
        let name = dir.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        let (label, group, ei, bi) = match &cfg {
            Some(c) => (
                c.label(),
                c.encoder.variant.letter().to_string(),
                EncoderVariant::ALL.iter().position(|v| *v == c.encoder.variant).unwrap_or(9),
                BlockKind::ALL.iter().position(|b| *b == c.block.kind).unwrap_or(9),
            ),
            None => (name.clone(), name.clone(), 9, 9),
        };
        if let Some(reason) = failed {
            rows.push((ei, bi, SummaryRow::failed(&label, &group, reason.trim())));
        } else if !reports.is_empty() {
            rows.push((ei, bi, SummaryRow::from_reports(&label, &group, &reports)));
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("no completed runs under {}", root.display())));
    }
    rows.sort_by(|a, b| (a.0, a.1, &a.2.label).cmp(&(b.0, b.1, &b.2.label)));
    let rows: Vec<SummaryRow> = rows.into_iter().map(|r| r.2).collect();
    let folds = rows.iter().map(|r| r.folds).max().unwrap_or(0);
    Ok(format!(
        "# Cross-validation summary\n\nMean ± std across folds ({folds} max per model). Best per encoder in bold.\n\n{}",
        render_table(&rows)
    ))
}

/// Loads data and folds for an experiment file.
pub fn prepare_experiment(cfg: &ExperimentConfig) -> Result<(Dataset, Vec<FoldSpec>)> {
    let manifest = load_manifest(&cfg.data)?;
    let data = load_dataset(&manifest, num_workers())?;
    let folds = split_manifest(&manifest, cfg.k_folds, cfg.train.seed)?;
    let folds = match &cfg.folds {
        Some(sel) => {
            for f in sel {
                if *f >= folds.len() {
                    return Err(Error::config(format!("fold {f} out of range (k = {})", folds.len())));
                }
            }
            folds.into_iter().filter(|f| sel.contains(&f.fold_id)).collect()
        }
        None => folds,
    };
    Ok((data, folds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_videos_one_per_fold() {
        let v: Vec<(String, usize)> = (0..5).map(|i| (format!("v{i}"), 100)).collect();
        let folds = cross_val_split(&v, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 4));
    }

    #[test]
    fn too_few_videos() {
        let v: Vec<(String, usize)> = (0..3).map(|i| (format!("v{i}"), 100)).collect();
        assert!(matches!(cross_val_split(&v, 5, 0), Err(Error::TooFewVideos { needed: 5, got: 3 })));
    }

    #[test]
    fn one_window_per_training_frame() {
        let cfg = TrainConfig::default();
        assert_eq!(default_steps_per_epoch(&cfg, BlockKind::Kf, 960), 240);
        assert_eq!(default_steps_per_epoch(&cfg, BlockKind::None, 960), 120);
        assert_eq!(default_steps_per_epoch(&cfg, BlockKind::None, 961), 121);
    }
}
