use crate::{Real, Tensor};

use super::pointwise::sigmoid_scalar;

/// Mean binary cross-entropy on logits against targets in `[0, 1]`,
/// computed in the numerically stable form
/// `max(x, 0) - x·y + ln(1 + e^{-|x|})`.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, targets: &[T]) -> Tensor<T> {
    assert_eq!(logits.numel(), targets.len(), "bce: target length mismatch");
    let n = targets.len();
    let inv = T::one() / T::of(n as f64);
    let total: T = logits
        .data()
        .iter()
        .zip(targets)
        .map(|(&x, &y)| x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p())
        .sum();
    let targets = targets.to_vec();
    Tensor::from_op(vec![], vec![total * inv], vec![logits.clone()], move |g, _, p| {
        let s = g[0] * inv;
        vec![Some(
            p[0].data()
                .iter()
                .zip(&targets)
                .map(|(&x, &y)| (sigmoid_scalar(x) - y) * s)
                .collect(),
        )]
    })
}
