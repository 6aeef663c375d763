use crate::{Real, Tensor};

pub fn reshape<T: Real>(x: &Tensor<T>, dims: &[usize]) -> Tensor<T> {
    assert_eq!(
        dims.iter().product::<usize>(),
        x.numel(),
        "reshape {:?} -> {dims:?}",
        x.dims()
    );
    Tensor::from_op(dims.to_vec(), x.to_vec(), vec![x.clone()], |g, _, _| {
        vec![Some(g.to_vec())]
    })
}

fn outer_inner(dims: &[usize], axis: usize) -> (usize, usize) {
    (dims[..axis].iter().product(), dims[axis + 1..].iter().product())
}

/// Concatenation along `axis`; all other extents must agree.
pub fn cat<T: Real>(xs: &[Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!xs.is_empty(), "cat of nothing");
    let first = xs[0].dims();
    for x in xs {
        assert_eq!(x.rank(), first.len(), "cat: rank mismatch");
        for (i, (a, b)) in x.dims().iter().zip(first).enumerate() {
            assert!(i == axis || a == b, "cat: extent mismatch on axis {i}");
        }
    }
    let (outer, inner) = outer_inner(first, axis);
    let sizes: Vec<usize> = xs.iter().map(|x| x.dim(axis)).collect();
    let total: usize = sizes.iter().sum();
    let mut dims = first.to_vec();
    dims[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (x, &d) in xs.iter().zip(&sizes) {
            data.extend_from_slice(&x.data()[o * d * inner..(o + 1) * d * inner]);
        }
    }
    Tensor::from_op(dims, data, xs.to_vec(), move |g, _, parents| {
        let mut out: Vec<Option<Vec<T>>> = Vec::with_capacity(parents.len());
        let mut offset = 0;
        for (p, &d) in parents.iter().zip(&sizes) {
            if p.requires_grad() {
                let mut gp = Vec::with_capacity(outer * d * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gp.extend_from_slice(&g[start..start + d * inner]);
                }
                out.push(Some(gp));
            } else {
                out.push(None);
            }
            offset += d;
        }
        out
    })
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let d = x.dim(axis);
    assert!(start + len <= d, "narrow out of range");
    let (outer, inner) = outer_inner(x.dims(), axis);
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = (o * d + start) * inner;
        data.extend_from_slice(&x.data()[s..s + len * inner]);
    }
    Tensor::from_op(dims, data, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); outer * d * inner];
        for o in 0..outer {
            let s = (o * d + start) * inner;
            gx[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(gx)]
    })
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// For each output element, the flat index of its source element.
fn gather_map(out_dims: &[usize], src_strides_by_out_axis: &[usize]) -> Vec<usize> {
    let n: usize = out_dims.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_dims.len()];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for ax in (0..out_dims.len()).rev() {
            idx[ax] += 1;
            src += src_strides_by_out_axis[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            src -= src_strides_by_out_axis[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    assert_eq!(perm.len(), x.rank(), "permute: wrong arity");
    let in_strides = strides(x.dims());
    let out_dims: Vec<usize> = perm.iter().map(|&p| x.dim(p)).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let map = gather_map(&out_dims, &src_strides);
    let xd = x.data();
    let data = map.iter().map(|&i| xd[i]).collect();
    let n = x.numel();
    Tensor::from_op(out_dims, data, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); n];
        for (gv, &i) in g.iter().zip(&map) {
            gx[i] = *gv;
        }
        vec![Some(gx)]
    })
}

/// Broadcasts size-1 axes of `x` up to `dims` (same rank).
pub fn expand<T: Real>(x: &Tensor<T>, dims: &[usize]) -> Tensor<T> {
    assert_eq!(x.rank(), dims.len(), "expand: rank mismatch");
    let in_strides = strides(x.dims());
    let src_strides: Vec<usize> = x
        .dims()
        .iter()
        .zip(dims)
        .zip(&in_strides)
        .map(|((&a, &b), &s)| {
            assert!(a == b || a == 1, "expand: cannot broadcast {a} to {b}");
            if a == b {
                s
            } else {
                0
            }
        })
        .collect();
    let map = gather_map(dims, &src_strides);
    let xd = x.data();
    let data = map.iter().map(|&i| xd[i]).collect();
    let n = x.numel();
    Tensor::from_op(dims.to_vec(), data, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); n];
        for (gv, &i) in g.iter().zip(&map) {
            gx[i] += *gv;
        }
        vec![Some(gx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_manual_transpose() {
        let x = Tensor::<f64>::from_vec((0..6).map(f64::from).collect(), &[2, 3]);
        let y = permute(&x, &[1, 0]);
        assert_eq!(y.dims(), &[3, 2]);
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn cat_then_narrow_recovers_parts() {
        let a = Tensor::<f64>::from_vec((0..8).map(f64::from).collect(), &[2, 2, 2]);
        let b = Tensor::<f64>::from_vec((10..14).map(f64::from).collect(), &[2, 1, 2]);
        let c = cat(&[a.clone(), b.clone()], 1);
        assert_eq!(c.dims(), &[2, 3, 2]);
        assert_eq!(narrow(&c, 1, 0, 2).data(), a.data());
        assert_eq!(narrow(&c, 1, 2, 1).data(), b.data());
    }

    #[test]
    fn expand_broadcasts_middle_axis() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0], &[2, 1]);
        let y = expand(&x, &[2, 3]);
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }
}
