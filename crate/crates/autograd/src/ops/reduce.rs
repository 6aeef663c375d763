use crate::{Real, Tensor};

/// Sum of all elements, as a rank-0 tensor.
pub fn sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().copied().sum::<T>();
    let n = x.numel();
    Tensor::from_op(vec![], vec![s], vec![x.clone()], move |g, _, _| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.numel();
    let inv = T::one() / T::of(n as f64);
    let s = x.data().iter().copied().sum::<T>() * inv;
    Tensor::from_op(vec![], vec![s], vec![x.clone()], move |g, _, _| {
        vec![Some(vec![g[0] * inv; n])]
    })
}

/// Softmax over the last axis.
pub fn softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.dims().last().expect("softmax of scalar");
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::from_op(x.dims().to_vec(), out, vec![x.clone()], move |g, y, _| {
        let mut gx = vec![T::zero(); y.len()];
        for ((gr, yr), dst) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
            let dot: T = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
            for ((o, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                *o = *yv * (*gv - dot);
            }
        }
        vec![Some(gx)]
    })
}
