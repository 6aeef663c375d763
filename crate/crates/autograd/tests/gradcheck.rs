//! Central finite-difference checks for every operator's backward rule.

use autograd::{ops, Tensor};

/// Deterministic pseudo-random values in [-1, 1).
fn values(n: usize, salt: u64) -> Vec<f64> {
    let mut s = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Checks d/dinputs of `sum(f(inputs) ⊙ r)` against central differences.
fn check(dims: &[&[usize]], f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>) {
    let base: Vec<Vec<f64>> = dims
        .iter()
        .enumerate()
        .map(|(i, d)| values(d.iter().product(), 17 + i as u64))
        .collect();
    let leaves: Vec<Tensor<f64>> = base
        .iter()
        .zip(dims)
        .map(|(v, d)| Tensor::leaf(v.clone(), d))
        .collect();
    let y = f(&leaves);
    let r = Tensor::from_vec(values(y.numel(), 99), y.dims());
    let loss = ops::sum(&ops::mul(&y, &r));
    let grads = loss.backward();

    let eval = |vals: &[Vec<f64>]| -> f64 {
        let ts: Vec<Tensor<f64>> = vals
            .iter()
            .zip(dims)
            .map(|(v, d)| Tensor::from_vec(v.clone(), d))
            .collect();
        let y = f(&ts);
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let eps = 1e-6;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(leaf).expect("leaf gradient");
        for j in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][j] += eps;
            let mut minus = base.clone();
            minus[i][j] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let err = (fd - analytic[j]).abs() / (1.0 + fd.abs().max(analytic[j].abs()));
            assert!(
                err < 1e-6,
                "input {i} element {j}: analytic {} vs fd {fd}",
                analytic[j]
            );
        }
    }
}

#[test]
fn pointwise_ops() {
    check(&[&[2, 3], &[2, 3]], |t| ops::add(&t[0], &t[1]));
    check(&[&[2, 3], &[2, 3]], |t| ops::sub(&t[0], &t[1]));
    check(&[&[2, 3], &[2, 3]], |t| ops::mul(&t[0], &t[1]));
    check(&[&[5]], |t| ops::affine(&t[0], -1.5, 0.25));
    check(&[&[7]], |t| ops::sigmoid(&t[0]));
    check(&[&[7]], |t| ops::tanh(&t[0]));
    check(&[&[7]], |t| ops::gelu(&t[0]));
    // relu away from the kink
    check(&[&[7]], |t| ops::relu(&ops::affine(&t[0], 1.0, 0.05)));
}

#[test]
fn broadcasting_ops() {
    check(&[&[2, 3, 4], &[1, 3, 1]], |t| ops::add_bcast(&t[0], &t[1]));
    check(&[&[2, 3, 2, 2], &[2, 1, 2, 2]], |t| ops::mul_bcast(&t[0], &t[1]));
}

#[test]
fn shape_ops() {
    check(&[&[2, 3, 4]], |t| ops::permute(&t[0], &[2, 0, 1]));
    check(&[&[2, 6]], |t| ops::reshape(&t[0], &[3, 4]));
    check(&[&[2, 2, 3], &[2, 1, 3]], |t| ops::cat(&[t[0].clone(), t[1].clone()], 1));
    check(&[&[2, 5, 3]], |t| ops::narrow(&t[0], 1, 1, 3));
}

#[test]
fn convolutions() {
    check(&[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], |t| {
        ops::conv2d(&t[0], &t[1], Some(&t[2]), 1, 1)
    });
    check(&[&[1, 2, 6, 6], &[2, 2, 3, 3], &[2]], |t| {
        ops::conv2d(&t[0], &t[1], Some(&t[2]), 2, 1)
    });
    check(&[&[2, 3, 3, 3], &[2, 3, 1, 1]], |t| ops::conv2d(&t[0], &t[1], None, 1, 0));
    check(&[&[2, 3, 2, 3], &[3, 2, 2, 2], &[2]], |t| {
        ops::conv_transpose2d(&t[0], &t[1], Some(&t[2]), 2)
    });
}

#[test]
fn pooling_and_upsampling() {
    check(&[&[1, 2, 4, 4]], |t| ops::max_pool2d(&t[0], 2));
    check(&[&[1, 2, 2, 3]], |t| ops::upsample_nearest(&t[0], 2));
}

#[test]
fn matmul_all_transposes() {
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a: &[usize] = if ta { &[4, 3] } else { &[3, 4] };
        let b: &[usize] = if tb { &[2, 4] } else { &[4, 2] };
        check(&[a, b], |t| ops::matmul(&t[0], &t[1], ta, tb));
        let a3: Vec<usize> = [2].iter().chain(a).copied().collect();
        let b3: Vec<usize> = [2].iter().chain(b).copied().collect();
        check(&[&a3, &b3], |t| ops::matmul(&t[0], &t[1], ta, tb));
    }
}

#[test]
fn reductions_and_losses() {
    check(&[&[3, 4]], |t| ops::softmax(&t[0]));
    check(&[&[3, 4]], |t| ops::mean(&t[0]));
    check(&[&[2, 1, 2, 3]], |t| {
        let y: Vec<f64> = (0..12).map(|i| (i % 3) as f64 / 2.0).collect();
        ops::bce_with_logits(&t[0], &y)
    });
}

#[test]
fn normalisations() {
    check(&[&[3, 5], &[5], &[5]], |t| ops::layer_norm(&t[0], &t[1], &t[2], 1e-5));
    check(&[&[2, 3, 2, 2], &[3], &[3]], |t| {
        ops::batch_norm2d(&t[0], &t[1], &t[2], None, 1e-5).0
    });
    check(&[&[2, 3, 2, 2], &[3], &[3]], |t| {
        let m = [0.1, -0.2, 0.3];
        let v = [1.0, 0.5, 2.0];
        ops::batch_norm2d(&t[0], &t[1], &t[2], Some((&m, &v)), 1e-5).0
    });
}
