mod common;

use autograd::{ops, ParamStore, Tensor};
use common::*;
use kfseg::kfblock::*;
use kfseg::Error;

fn block(c: usize, seed: u64) -> (KfBlock<f64>, ParamStore<f64>) {
    let vs = ParamStore::new(seed);
    let b = KfBlock::new(&vs.pp("kf"), KfConfig::new(c)).unwrap();
    (b, vs)
}

/// Gives every zero-initialised residual branch random weights so the
/// checks exercise the general case rather than the identity at init.
fn randomise(vs: &ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in vs.trainable() {
        let t = random_tensor(&mut r, p.dims(), scale);
        p.set_value(t.data());
    }
}

fn force_gain(b: &KfBlock<f64>, bias: f64) {
    let head = &b.f3.head;
    head.weight.update(|w| w.fill(0.0));
    head.bias.as_ref().unwrap().update(|v| v.fill(bias));
}

#[test]
fn reconstruction_identity_and_gain_bounds_over_random_rollouts() {
    for k in 0..100u64 {
        let (b, vs) = block(2, k);
        randomise(&vs, 1000 + k, 0.4);
        let mut r = rng(k);
        let mut s = b.reset_state(&random_tensor(&mut r, &[2, 2, 4, 4], 1.0)).unwrap();
        for _ in 0..5 {
            let z = random_tensor(&mut r, &[2, 2, 4, 4], 1.0);
            let (x, next, trace) = b.step(&s, &z).unwrap();
            assert!(trace.reconstruction_error() <= 1e-6);
            assert!(trace.gain.data().iter().all(|g| *g > 0.0 && *g < 1.0));
            assert_eq!(x.data(), trace.x_out.data());
            assert_eq!(next.x_prev().unwrap().data(), x.data());
            s = next;
        }
    }
}

#[test]
fn zero_innovation_returns_the_prediction_exactly() {
    let (b, vs) = block(3, 4);
    randomise(&vs, 5, 0.5);
    let mut r = rng(6);
    let s = b.reset_state(&random_tensor(&mut r, &[1, 3, 4, 4], 1.0)).unwrap();
    let (x_hat, z_hat) = b.predict_step(&s).unwrap();
    let (x, _, trace) = b.update_step(&s, &z_hat, &x_hat, &z_hat).unwrap();
    assert!(trace.dz.data().iter().all(|v| *v == 0.0));
    assert_eq!(x.data(), x_hat.data());
}

#[test]
fn zero_gain_returns_the_prediction() {
    let (b, vs) = block(2, 7);
    randomise(&vs, 8, 0.5);
    force_gain(&b, -1e3);
    let mut r = rng(9);
    let mut s = b.reset_state(&random_tensor(&mut r, &[2, 2, 4, 4], 1.0)).unwrap();
    for _ in 0..3 {
        let (x, next, trace) = b.step(&s, &random_tensor(&mut r, &[2, 2, 4, 4], 1.0)).unwrap();
        assert!(max_rel_diff(x.data(), trace.x_hat.data()) <= 1e-6);
        s = next;
    }
}

#[test]
fn unit_gain_at_init_passes_the_observation_through() {
    let (b, _) = block(2, 10);
    force_gain(&b, 1e3);
    let mut r = rng(11);
    let mut s = b.reset_state(&random_tensor(&mut r, &[1, 2, 4, 4], 1.0)).unwrap();
    for _ in 0..3 {
        let z = random_tensor(&mut r, &[1, 2, 4, 4], 1.0);
        let (x, next) = b.forward(&s, &z).unwrap();
        assert!(max_rel_diff(x.data(), z.data()) <= 1e-12);
        s = next;
    }
}

#[test]
fn prediction_at_init_is_the_previous_state() {
    let (b, _) = block(8, 12);
    let mut r = rng(13);
    let z0 = random_tensor(&mut r, &[2, 8, 4, 4], 1.0);
    let s = b.reset_state(&z0).unwrap();
    let (x_hat, z_hat) = b.predict_step(&s).unwrap();
    assert_eq!(x_hat.data(), z0.data());
    assert_eq!(z_hat.data(), z0.data());
    assert_eq!(z_hat.dims(), &[2, 8, 4, 4]);
}

#[test]
fn prediction_matches_hand_convolution() {
    let (b, _) = block(1, 14);
    for conv in [&b.f1.conv1, &b.f1.conv2] {
        conv.weight.update(|w| w.fill(1.0 / 9.0));
        conv.bias.as_ref().unwrap().update(|v| v.fill(0.0));
    }
    let s = b.reset_state(&Tensor::from_vec(vec![1.0; 16], &[1, 1, 4, 4])).unwrap();
    let (x_hat, _) = b.predict_step(&s).unwrap();
    // 3×3 box filter with zero padding on a 4×4 grid, applied twice
    let boxf = |g: &[f64]| -> Vec<f64> {
        (0..16)
            .map(|i| {
                let (y, x) = ((i / 4) as i64, (i % 4) as i64);
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        if (0..4).contains(&yy) && (0..4).contains(&xx) {
                            acc += g[(yy * 4 + xx) as usize] / 9.0;
                        }
                    }
                }
                acc
            })
            .collect()
    };
    let once = boxf(&[1.0; 16]);
    assert!((once[5] - 1.0).abs() < 1e-15);
    assert!((once[0] - 4.0 / 9.0).abs() < 1e-15);
    let want: Vec<f64> = boxf(&once).iter().map(|v| 1.0 + v).collect();
    assert!(max_rel_diff(x_hat.data(), &want) < 1e-14);
}

#[test]
fn state_errors() {
    let (b, _) = block(4, 15);
    let s = KfState::<f64>::uninitialized();
    assert!(matches!(b.predict_step(&s), Err(Error::UninitializedState)));
    assert!(matches!(b.forward(&s, &Tensor::zeros(&[1, 4, 2, 2])), Err(Error::UninitializedState)));
    assert!(matches!(b.reset_state(&Tensor::zeros(&[1, 256, 2, 2])), Err(Error::Shape(_))));
    let s = b.reset_state(&Tensor::zeros(&[1, 4, 2, 2])).unwrap();
    assert!(matches!(b.forward(&s, &Tensor::zeros(&[1, 4, 3, 3])), Err(Error::Shape(_))));
    let nan = Tensor::from_vec(vec![f64::NAN; 16], &[1, 4, 2, 2]);
    assert!(b.forward(&s, &nan).is_err());
}

#[test]
fn identical_resets_give_identical_states() {
    let (b, _) = block(4, 16);
    let z0 = random_tensor(&mut rng(17), &[1, 4, 3, 3], 1.0);
    let (a, c) = (b.reset_state(&z0).unwrap(), b.reset_state(&z0).unwrap());
    assert_eq!(a.x_prev().unwrap().data(), c.x_prev().unwrap().data());
    assert_eq!(a.gain_hidden().unwrap().data(), c.gain_hidden().unwrap().data());
    assert!(a.gain_hidden().unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn constant_observations_converge() {
    let (b, _) = block(2, 18);
    let z = random_tensor(&mut rng(19), &[1, 2, 4, 4], 1.0);
    let mut s = b.reset_state(&Tensor::zeros(&[1, 2, 4, 4])).unwrap();
    let mut prev: Option<Vec<f64>> = None;
    let mut steps = Vec::new();
    for _ in 0..7 {
        let (x, next) = b.forward(&s, &z).unwrap();
        if let Some(p) = &prev {
            steps.push(x.data().iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
        prev = Some(x.to_vec());
        s = next;
    }
    for w in steps[1..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{steps:?}");
    }
    let gap: f64 = prev.unwrap().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 0.1, "state did not approach the constant observation: {gap}");
}

#[test]
fn full_size_step_keeps_shape() {
    let vs = ParamStore::<f32>::new(20);
    let b = KfBlock::new(&vs.pp("kf"), KfConfig::new(512)).unwrap();
    let z: Tensor<f32> = Tensor::zeros(&[1, 512, 32, 32]);
    let s = b.reset_state(&z).unwrap();
    let (x, _) = autograd::no_grad(|| b.forward(&s, &z)).unwrap();
    assert_eq!(x.dims(), &[1, 512, 32, 32]);
}

#[test]
fn block_gradients_match_finite_differences() {
    let (b, vs) = block(2, 21);
    randomise(&vs, 22, 0.5);
    let mut r = rng(23);
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
    let params = vs.trainable();
    assert!(params.iter().any(|p| p.name().starts_with("kf.f1.")));
    assert!(params.iter().any(|p| p.name().starts_with("kf.f2.")));
    assert!(params.iter().any(|p| p.name().starts_with("kf.f3.")));
    let n = check_gradients(&params, loss, 1e-4, 1e-3);
    assert_eq!(n, vs.num_trainable());
}
