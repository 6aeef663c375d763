use crate::{Real, Tensor};

/// Max pooling with a `k×k` window and stride `k`; trailing rows/columns
/// that do not fill a window are dropped.
pub fn max_pool2d<T: Real>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 4);
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (ho, wo) = (h / k, w / k);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * k * w + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * k + dy) * w + ox * k + dx;
                        // first maximum wins on ties
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    let len = x.numel();
    Tensor::from_op(vec![n, c, ho, wo], out, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); len];
        for (gv, &i) in g.iter().zip(&arg) {
            gx[i] += *gv;
        }
        vec![Some(gx)]
    })
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 4);
    if factor == 1 {
        return x.clone();
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (ho, wo) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oy in 0..ho {
            let row = &xd[plane * h * w + (oy / factor) * w..][..w];
            for ox in 0..wo {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::from_op(vec![n, c, ho, wo], out, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); n * c * h * w];
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    gx[plane * h * w + (oy / factor) * w + ox / factor] +=
                        g[(plane * ho + oy) * wo + ox];
                }
            }
        }
        vec![Some(gx)]
    })
}
