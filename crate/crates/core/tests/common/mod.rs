//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use autograd::{Param, Tensor};
use kfseg::datamodel::{ImageFrame, MaskFrame, VideoSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> MaskFrame {
    let px = (0..h * w).map(|_| u8::from(rng.random::<f64>() < density)).collect();
    MaskFrame::new(0, h, w, px).unwrap()
}

/// (TP, FP, FN) by explicit pixel enumeration over coordinates.
pub fn brute_counts(pred: &MaskFrame, gt: &MaskFrame) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for y in 0..gt.height {
        for x in 0..gt.width {
            match (pred.at(x, y), gt.at(x, y)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    (tp, fp, fn_)
}

/// One-pixel-wide digital segment between integer endpoints, both included.
pub fn draw_segment(h: usize, w: usize, a: (i64, i64), b: (i64, i64)) -> MaskFrame {
    let mut px = vec![0u8; h * w];
    let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for k in 0..=n {
        let x = a.0 as f64 + (b.0 - a.0) as f64 * k as f64 / n as f64;
        let y = a.1 as f64 + (b.1 - a.1) as f64 * k as f64 / n as f64;
        px[y.round() as usize * w + x.round() as usize] = 1;
    }
    MaskFrame::new(0, h, w, px).unwrap()
}

pub fn mask_from_points(h: usize, w: usize, pts: &[(usize, usize)]) -> MaskFrame {
    let mut px = vec![0u8; h * w];
    for &(x, y) in pts {
        px[y * w + x] = 1;
    }
    MaskFrame::new(0, h, w, px).unwrap()
}

/// Smooth moving blob video with masks, `n` frames of `size × size`.
pub fn toy_video(id: &str, n: usize, size: usize, seed: u64) -> VideoSequence {
    let mut r = rng(seed);
    let frames = (0..n)
        .map(|t| {
            let px = (0..size * size)
                .map(|i| {
                    let (x, y) = ((i % size) as f32, (i / size) as f32);
                    let c = (t as f32 + 2.0) % size as f32;
                    0.2 + 0.6 * (-((x - c).powi(2) + (y - c).powi(2)) / 8.0).exp() + 0.1 * r.random::<f32>()
                })
                .collect();
            ImageFrame::new(id, t, size, size, px).unwrap()
        })
        .collect();
    let masks = (0..n)
        .map(|t| {
            let c = (t + 2) % size;
            let px = (0..size * size)
                .map(|i| u8::from((i % size).abs_diff(c) <= 1 && (i / size).abs_diff(c) <= 1))
                .collect();
            MaskFrame::new(t, size, size, px).unwrap()
        })
        .collect();
    VideoSequence::new(id, frames, Some(masks), 20.0).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec((0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect(), dims)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs().max(y.abs())))
        .fold(0.0, f64::max)
}

/// Central differences of `loss` w.r.t. every element of `params`,
/// compared with the analytic gradient accumulated by one backward pass.
pub fn check_gradients(params: &[Param<f64>], loss: impl Fn() -> Tensor<f64>, eps: f64, tol: f64) -> usize {
    params.iter().for_each(|p| p.zero_grad());
    loss().backward();
    let mut checked = 0;
    for p in params {
        let analytic = p.grad();
        let base = p.value();
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] = base[i] + eps;
            p.set_value(&v);
            let up = autograd::no_grad(|| loss().item());
            v[i] = base[i] - eps;
            p.set_value(&v);
            let down = autograd::no_grad(|| loss().item());
            p.set_value(&base);
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err <= tol, "{}[{i}]: analytic {a} vs numeric {numeric}", p.name());
            checked += 1;
        }
    }
    checked
}
