use crate::{Real, Tensor};

/// Layer normalisation over the last axis with affine `gamma`, `beta`
/// (both shaped `[d]`).
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
    let d = *x.dims().last().expect("layer_norm of scalar");
    assert_eq!(gamma.dims(), &[d]);
    assert_eq!(beta.dims(), &[d]);
    let eps = T::of(eps);
    let rows = x.numel() / d;
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); rows];
    let dn = T::of(d as f64);
    for (r, (src, dst)) in x.data().chunks(d).zip(xhat.chunks_mut(d)).enumerate() {
        let mu = src.iter().copied().sum::<T>() / dn;
        let var = src.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, v) in dst.iter_mut().zip(src) {
            *o = (*v - mu) * is;
        }
    }
    let out = xhat
        .chunks(d)
        .flat_map(|row| {
            row.iter()
                .zip(gamma.data().iter().zip(beta.data()))
                .map(|(v, (g, b))| *v * *g + *b)
        })
        .collect();
    Tensor::from_op(
        x.dims().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, _, p| {
            let gamma = p[1].data();
            let mut gx = vec![T::zero(); g.len()];
            let mut gg = vec![T::zero(); d];
            let mut gbeta = vec![T::zero(); d];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for j in 0..d {
                    let gh = gr[j] * gamma[j];
                    m1 += gh;
                    m2 += gh * xr[j];
                    gg[j] += gr[j] * xr[j];
                    gbeta[j] += gr[j];
                }
                m1 /= dn;
                m2 /= dn;
                for j in 0..d {
                    let gh = gr[j] * gamma[j];
                    gx[r * d + j] = inv_std[r] * (gh - m1 - xr[j] * m2);
                }
            }
            vec![Some(gx), Some(gg), Some(gbeta)]
        },
    )
}

/// Per-channel batch normalisation of an NCHW tensor.
///
/// With `stats = None` the batch mean and (biased) variance are used and
/// returned so the caller can update running estimates; otherwise the given
/// `(mean, var)` are treated as constants.
pub fn batch_norm2d<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: Option<(&[T], &[T])>,
    eps: f64,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    assert_eq!(x.rank(), 4);
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    assert_eq!(gamma.dims(), &[c]);
    assert_eq!(beta.dims(), &[c]);
    let hw = h * w;
    let cnt = T::of((n * hw) as f64);
    let eps = T::of(eps);
    let xd = x.data();
    let (mean, var) = match stats {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += xd[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let mu = s / cnt;
                let mut q = T::zero();
                for b in 0..n {
                    q += xd[(b * c + ch) * hw..][..hw]
                        .iter()
                        .map(|v| (*v - mu) * (*v - mu))
                        .sum::<T>();
                }
                mean[ch] = mu;
                var[ch] = q / cnt;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = xhat[i] * gamma.data()[ch] + beta.data()[ch];
            }
        }
    }
    let batch_stats = stats.is_none();
    let y = Tensor::from_op(
        x.dims().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, _, p| {
            let gamma = p[1].data();
            let mut gx = vec![T::zero(); g.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for ch in 0..c {
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        gg[ch] += g[i] * xhat[i];
                        gb[ch] += g[i];
                        m1 += g[i];
                        m2 += g[i] * xhat[i];
                    }
                }
                let k = gamma[ch] * inv_std[ch];
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        gx[i] = if batch_stats {
                            k * (g[i] - m1 / cnt - xhat[i] * m2 / cnt)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            vec![Some(gx), Some(gg), Some(gb)]
        },
    );
    (y, mean, var)
}
