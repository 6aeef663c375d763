//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p kfseg --test acceptance`. Individual criteria
//! can be selected with `KFSEG_ACCEPTANCE=1,3,8`.

mod common;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use autograd::{no_grad, ops, ParamStore, Tensor};
use common::*;
use kfseg::baselines::BlockKind;
use kfseg::encoder::EncoderVariant;
use kfseg::harness::*;
use kfseg::kfblock::{KfBlock, KfConfig};
use kfseg::metrics::*;
use kfseg::model::{ModelConfig, SegModel};
use kfseg::synthgen::{generate_video, video_id, SynthConfig};
use rand::Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(t0: Instant, limit: Duration) -> Result<(), String> {
    let e = t0.elapsed();
    if e > limit {
        return Err(format!("took {:.1}s, limit {:.0}s", e.as_secs_f64(), limit.as_secs_f64()));
    }
    Ok(())
}

fn metric_oracle() -> Check {
    let t0 = Instant::now();
    let mut r = rng(101);
    let mut f1_checked = 0;
    for _ in 0..500 {
        let density = r.random_range(0.0..0.6);
        let (p, g) = (random_mask(&mut r, 16, 16, density), random_mask(&mut r, 16, 16, density));
        let (tp, fp, fn_) = brute_counts(&p, &g);
        let d = dice(&p, &g).map_err(|e| e.to_string())?;
        let (pr, rc) = precision_recall(&p, &g).map_err(|e| e.to_string())?;
        let want_d = if tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let want_p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let want_r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        ensure!((d - want_d).abs() <= 1e-12, "dice {d} vs {want_d}");
        ensure!((pr - want_p).abs() <= 1e-12, "precision {pr} vs {want_p}");
        ensure!((rc - want_r).abs() <= 1e-12, "recall {rc} vs {want_r}");
        if pr + rc > 0.0 && tp > 0 {
            ensure!((d - 2.0 * pr * rc / (pr + rc)).abs() <= 1e-12, "F1 identity");
            f1_checked += 1;
        }
    }
    within(t0, Duration::from_secs(5))?;
    Ok(format!("500 pairs exact, F1 identity on {f1_checked}"))
}

fn endpoint_extraction() -> Check {
    let t0 = Instant::now();
    let mut r = rng(102);
    let (mut n, mut worst_tip, mut worst_len) = (0, 0.0f64, 0.0f64);
    while n < 200 {
        let len = r.random_range(10.0..60.0);
        let ang: f64 = r.random_range(-80.0f64..80.0).to_radians();
        let a = (r.random_range(0..8) as i64, r.random_range(4..60) as i64);
        let b = (
            (a.0 as f64 + len * ang.cos()).round() as i64,
            (a.1 as f64 + len * ang.sin()).round() as i64,
        );
        if !(0..64).contains(&b.0) || !(0..64).contains(&b.1) || b.0 <= a.0 {
            continue;
        }
        n += 1;
        let mask = draw_segment(64, 64, a, b);
        let e = extract_endpoints(&mask).map_err(|e| e.to_string())?;
        let truth = (((b.0 - a.0) as f64).powi(2) + ((b.1 - a.1) as f64).powi(2)).sqrt();
        worst_tip = worst_tip.max(((e.tip.0 as f64 - b.0 as f64).powi(2) + (e.tip.1 as f64 - b.1 as f64).powi(2)).sqrt());
        worst_len = worst_len.max((e.length - truth).abs());
        let pts = mask.foreground();
        let (vx, vy) = principal_axis(&pts);
        let proj = |p: (usize, usize)| p.0 as f64 * vx + p.1 as f64 * vy;
        let (pe, pt) = (proj(e.entry), proj(e.tip));
        let (lo, hi) = (pe.min(pt), pe.max(pt));
        ensure!(pts.iter().all(|p| proj(*p) >= lo - 1e-9 && proj(*p) <= hi + 1e-9), "extremality violated");
    }
    ensure!(worst_tip <= 2.0, "tip error {worst_tip:.2} px");
    ensure!(worst_len <= 2.0, "length error {worst_len:.2} px");
    within(t0, Duration::from_secs(10))?;
    Ok(format!("200 segments, worst tip {worst_tip:.2} px, worst length {worst_len:.2} px"))
}

fn kf_block(c: usize, seed: u64) -> (KfBlock<f64>, ParamStore<f64>) {
    let vs = ParamStore::new(seed);
    let b = KfBlock::new(&vs.pp("kf"), KfConfig::new(c)).expect("tiny block");
    let mut r = rng(seed ^ 0xABCD);
    for p in vs.trainable() {
        p.set_value(random_tensor(&mut r, p.dims(), 0.4).data());
    }
    (b, vs)
}

fn kf_algebra() -> Check {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let (b, _) = kf_block(2, k);
        let mut r = rng(k);
        let mut s = b.reset_state(&random_tensor(&mut r, &[2, 2, 4, 4], 1.0)).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let z = random_tensor(&mut r, &[2, 2, 4, 4], 1.0);
            let (_, next, trace) = b.step(&s, &z).map_err(|e| e.to_string())?;
            worst = worst.max(trace.reconstruction_error());
            ensure!(trace.gain.data().iter().all(|g| *g > 0.0 && *g < 1.0), "gain outside (0, 1)");
            s = next;
        }
    }
    ensure!(worst <= 1e-6, "reconstruction error {worst:e}");
    // Δz → 0: the update returns the prediction exactly
    let (b, _) = kf_block(3, 200);
    let s = b.reset_state(&random_tensor(&mut rng(201), &[1, 3, 4, 4], 1.0)).map_err(|e| e.to_string())?;
    let (x_hat, z_hat) = b.predict_step(&s).map_err(|e| e.to_string())?;
    let (x, _, _) = b.update_step(&s, &z_hat, &x_hat, &z_hat).map_err(|e| e.to_string())?;
    ensure!(x.data() == x_hat.data(), "zero innovation changed the prediction");
    // K → 0: saturate the gain head
    b.f3.head.weight.update(|w| w.fill(0.0));
    b.f3.head.bias.as_ref().unwrap().update(|v| v.fill(-1e3));
    let z = random_tensor(&mut rng(202), &[1, 3, 4, 4], 1.0);
    let (x, _, trace) = b.step(&s, &z).map_err(|e| e.to_string())?;
    ensure!(x.data() == trace.x_hat.data(), "zero gain changed the prediction");
    within(t0, Duration::from_secs(10))?;
    Ok(format!("100 rollouts, worst reconstruction {worst:.1e}; both limits exact"))
}

fn gradient_check() -> Check {
    let t0 = Instant::now();
    let (b, vs) = kf_block(2, 300);
    let mut r = rng(301);
    let z0 = random_tensor(&mut r, &[1, 2, 4, 4], 1.0);
    let zs: Vec<_> = (0..3).map(|_| random_tensor(&mut r, &[1, 2, 4, 4], 1.0)).collect();
    let w = random_tensor(&mut r, &[1, 2, 4, 4], 1.0);
    let loss = || {
        let mut s = b.reset_state(&z0).unwrap();
        let mut total = Vec::new();
        for z in &zs {
            let (x, next) = b.forward(&s, z).unwrap();
            total.push(ops::reshape(&ops::sum(&ops::mul(&x, &w)), &[1]));
            s = next;
        }
        ops::sum(&ops::cat(&total, 0))
    };
    let n_block = catch(|| check_gradients(&vs.trainable(), loss, 1e-4, 1e-3))?;

    let mut cfg = ModelConfig::new(EncoderVariant::Vanilla, BlockKind::Kf, 1, 16, 302);
    cfg.block.lstm_hidden = 8;
    let model = SegModel::<f64>::new(&cfg).map_err(|e| e.to_string())?;
    let mut r = rng(303);
    for p in model.trainable_params() {
        if p.value().iter().all(|v| *v == 0.0) {
            p.set_value(random_tensor(&mut r, p.dims(), 0.2).data());
        }
    }
    let xs: Vec<Tensor<f64>> = (0..3)
        .map(|_| {
            let t = random_tensor(&mut r, &[1, 1, 16, 16], 0.5);
            Tensor::from_vec(t.data().iter().map(|v| v + 0.5).collect(), t.dims())
        })
        .collect();
    let ys: Vec<Vec<f64>> = (0..3).map(|t| (0..256).map(|i| f64::from((i + t) % 7 == 0)).collect()).collect();
    let params = model.trainable_params();
    let n_model = catch(|| {
        check_gradients(
            &params,
            || sequence_loss(&model, model.reset_sequence(None).unwrap(), &xs, &ys).unwrap(),
            1e-6,
            1e-3,
        )
    })?;
    within(t0, Duration::from_secs(120))?;
    Ok(format!("{n_block} block and {n_model} full-model entries within 1e-3"))
}

fn catch<R>(f: impl FnOnce() -> R) -> Result<R, String> {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn tiny_model(kind: BlockKind, seed: u64) -> SegModel<f64> {
    let mut c = ModelConfig::new(EncoderVariant::Vanilla, kind, 2, 16, seed);
    c.block.lstm_hidden = 8;
    SegModel::new(&c).expect("tiny model")
}

fn tiny_frames(seed: u64, n: usize) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| random_tensor(&mut r, &[1, 1, 16, 16], 1.0)).collect()
}

fn stream(model: &SegModel<f64>, xs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, String> {
    let mut s = model.reset_sequence(None).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (t, x) in xs.iter().enumerate() {
        let (y, next) = no_grad(|| model.forward_frame(&s, t, x)).map_err(|e| e.to_string())?;
        out.push(y.to_vec());
        s = next;
    }
    Ok(out)
}

fn state_hygiene() -> Check {
    for kind in [BlockKind::Kf, BlockKind::Lstm, BlockKind::Convlstm] {
        let model = tiny_model(kind, 400);
        let (a, b) = (tiny_frames(401, 4), tiny_frames(402, 4));
        let alone = stream(&model, &b)?;
        stream(&model, &a)?;
        ensure!(stream(&model, &b)? == alone, "{kind:?}: reset is not complete");
        let pair: Vec<Tensor<f64>> = a.iter().zip(&b).map(|(x, y)| ops::cat(&[x.clone(), y.clone()], 0)).collect();
        let (ya, yp) = (stream(&model, &a)?, stream(&model, &pair)?);
        for t in 0..4 {
            let n = ya[t].len();
            ensure!(max_rel_diff(&yp[t][..n], &ya[t]) <= 1e-5, "{kind:?}: batch member 0 differs");
            ensure!(max_rel_diff(&yp[t][n..], &alone[t]) <= 1e-5, "{kind:?}: batch member 1 differs");
        }
    }
    Ok("KF, LSTM, ConvLSTM: bit-identical resets, batch members independent".into())
}

fn splitter() -> Check {
    let t0 = Instant::now();
    let mut r = rng(500);
    let videos: Vec<(String, usize)> = (0..17).map(|i| (video_id(i), r.random_range(250..=600))).collect();
    let total: usize = videos.iter().map(|v| v.1).sum();
    let folds = cross_val_split(&videos, 5, 0).map_err(|e| e.to_string())?;
    let mut seen = std::collections::HashSet::new();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for f in &folds {
        let share = f.test_frames as f64 / (total as f64 / 5.0);
        lo = lo.min(share);
        hi = hi.max(share);
        ensure!(f.test.iter().all(|v| !f.train.contains(v)), "fold {} leaks", f.fold_id);
        ensure!(f.test.iter().all(|v| seen.insert(v.clone())), "video tested twice");
    }
    ensure!(seen.len() == 17, "only {} videos tested", seen.len());
    ensure!(lo >= 0.85 && hi <= 1.15, "fold shares {lo:.3}..{hi:.3}");
    within(t0, Duration::from_secs(1))?;
    let sizes: Vec<String> = folds.iter().map(|f| f.test_frames.to_string()).collect();
    Ok(format!("fold frames {} (mean {:.0})", sizes.join("/"), total as f64 / 5.0))
}

const FROZEN_COUNTS: [usize; 18] = [
    7_696_193, 7_854_340, 7_698_497, 13_998_917, 26_572_609, 38_633_281, //
    14_182_209, 14_340_356, 14_194_753, 20_484_933, 33_058_625, 45_119_297, //
    6_724_673, 6_882_820, 6_726_977, 13_027_397, 25_601_089, 37_661_761,
];

fn shape_grid() -> Check {
    let t0 = Instant::now();
    for (i, g) in full_grid().iter().enumerate() {
        let cfg = ModelConfig::canonical(g.encoder, g.block, 0);
        let model = SegModel::<f32>::new(&cfg).map_err(|e| e.to_string())?;
        let c = model.in_channels();
        let x: Tensor<f32> = Tensor::from_vec(vec![0.5; c * 256 * 256], &[1, c, 256, 256]);
        let s = model.reset_sequence(None).map_err(|e| e.to_string())?;
        let (y, _) = no_grad(|| model.forward_frame(&s, 0, &x)).map_err(|e| e.to_string())?;
        ensure!(y.dims() == [1, 1, 256, 256], "{}: output {:?}", cfg.label(), y.dims());
        ensure!(model.num_params() == FROZEN_COUNTS[i], "{}: {} parameters", cfg.label(), model.num_params());
    }
    within(t0, Duration::from_secs(120))?;
    Ok("18 configurations, shapes and parameter counts match".into())
}

/// The desk-scale synthetic dataset: 16 videos of 80 frames at 64 px.
fn desk_data() -> Dataset {
    let sc = desk_synth();
    Dataset::from_videos((0..16).map(|i| generate_video(&sc, i, None).expect("synthetic video")))
}

// Distractors dimmed relative to the generator default: at 64 px and 5 epochs
// the bright default lines dominate every model's errors and the comparison
// degenerates into which run happens to latch onto them.
fn desk_synth() -> SynthConfig {
    let mut cfg = SynthConfig {
        image_size: 64,
        n_frames: 80,
        ..SynthConfig::default()
    };
    cfg.artifacts.brightness = 0.25;
    cfg
}

fn desk_fold() -> FoldSpec {
    let ids: Vec<String> = (0..16).map(video_id).collect();
    FoldSpec {
        fold_id: 0,
        train: ids[..12].to_vec(),
        test: ids[12..].to_vec(),
        train_frames: 12 * 80,
        test_frames: 4 * 80,
    }
}

struct DeskRun {
    trace: Vec<LossRecord>,
    metrics: MetricsFile,
}

fn desk_run(data: &Dataset, kind: BlockKind, seed: u64) -> Result<DeskRun, String> {
    let mc = ModelConfig::new(EncoderVariant::Vanilla, kind, 4, 64, seed);
    let tc = TrainConfig {
        epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let fold = desk_fold();
    let out = train_fold::<f32>(&tc, &fold, &mc, data).map_err(|e| e.to_string())?;
    let metrics = evaluate_fold(&out.model, &fold, data, tc.threshold).map_err(|e| e.to_string())?;
    Ok(DeskRun { trace: out.trace, metrics })
}

fn tip_error(m: &MetricsFile) -> f64 {
    let r = &m.report;
    r.dx.map_or(f64::INFINITY, |s| s.mean) + r.dy.map_or(f64::INFINITY, |s| s.mean)
}

static FIRST_KF_RUN: Mutex<Option<DeskRun>> = Mutex::new(None);

fn desk_ab() -> Check {
    let data = desk_data();
    let mut wins = 0;
    let (mut tip_v, mut tip_kf, mut dsc_v, mut dsc_kf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for seed in 0..3 {
        let v = desk_run(&data, BlockKind::None, seed)?;
        let kf = desk_run(&data, BlockKind::Kf, seed)?;
        let (tv, tk) = (tip_error(&v.metrics), tip_error(&kf.metrics));
        if tk < tv {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: V tip {tv:.2} DSC {:.3} | V+KF tip {tk:.2} DSC {:.3}",
            v.metrics.report.dsc.mean, kf.metrics.report.dsc.mean
        ));
        tip_v.push(tv);
        tip_kf.push(tk);
        dsc_v.extend(v.metrics.frames.iter().map(|f| f.metrics.dsc));
        dsc_kf.extend(kf.metrics.frames.iter().map(|f| f.metrics.dsc));
        if seed == 0 {
            *FIRST_KF_RUN.lock().unwrap() = Some(kf);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pv, pk) = (mean(&tip_v), mean(&tip_kf));
    let (dv, dk) = (mean(&dsc_v), mean(&dsc_kf));
    for l in &lines {
        println!("    {l}");
    }
    let detail = format!("V+KF better in {wins}/3 seeds; pooled tip {pk:.2} vs {pv:.2}; pooled DSC {dk:.3} vs {dv:.3}");
    ensure!(wins >= 2 && pk < pv && dk >= dv - 0.01, "{detail}");
    Ok(detail)
}

fn determinism() -> Check {
    let data = desk_data();
    let first = match FIRST_KF_RUN.lock().unwrap().take() {
        Some(r) => r,
        None => desk_run(&data, BlockKind::Kf, 0)?,
    };
    let again = desk_run(&data, BlockKind::Kf, 0)?;
    ensure!(first.trace == again.trace, "loss traces differ");
    let (a, b) = (
        serde_json::to_string(&first.metrics).unwrap(),
        serde_json::to_string(&again.metrics).unwrap(),
    );
    ensure!(a == b, "metrics differ");
    Ok(format!("{} loss records and all metrics identical", first.trace.len()))
}

fn bce_anchor() -> Check {
    let mut worst = 0.0f64;
    for (k, kind) in [BlockKind::None, BlockKind::Kf, BlockKind::Convlstm].into_iter().enumerate() {
        let model = tiny_model(kind, 1000 + k as u64);
        model.decoder.head.weight.update(|w| w.fill(0.0));
        model.decoder.head.bias.as_ref().unwrap().update(|b| b.fill(0.0));
        let mut r = rng(k as u64);
        let batch = k + 1;
        let xs: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[batch, 1, 16, 16], 1.0)).collect();
        let ys: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..batch * 256).map(|_| f64::from(r.random_bool(0.2))).collect())
            .collect();
        let l = sequence_loss(&model, model.reset_sequence(None).map_err(|e| e.to_string())?, &xs, &ys)
            .map_err(|e| e.to_string())?
            .item();
        worst = worst.max((l - std::f64::consts::LN_2).abs());
    }
    ensure!(worst <= 1e-9, "loss deviates from ln 2 by {worst:e}");
    Ok(format!("zero logits give ln 2 (worst deviation {worst:.1e})"))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Check); 10] = [
        (1, "metric oracle equivalence", metric_oracle),
        (2, "endpoint extraction", endpoint_extraction),
        (3, "KF algebra", kf_algebra),
        (4, "gradient check", gradient_check),
        (5, "state hygiene", state_hygiene),
        (6, "splitter", splitter),
        (7, "shape grid", shape_grid),
        (8, "desk-scale A/B", desk_ab),
        (9, "determinism", determinism),
        (10, "BCE anchor", bce_anchor),
    ];
    let selected: Option<Vec<usize>> = std::env::var("KFSEG_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, check) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch(check).and_then(|r| r);
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
