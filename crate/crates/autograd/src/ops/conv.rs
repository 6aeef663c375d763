use crate::{gemm, Real, Tensor};

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn col_len(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − pad` lies
/// inside `[0, w)`.
fn valid_cols(g: &Geom, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<T: Real>(x: &[T], g: &Geom, cols: &mut [T]) {
    let hw_out = g.col_len();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo < hi {
                        let x0 = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (i, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[x0 + i * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let hw_out = g.col_len();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                let (lo, hi) = valid_cols(g, kj);
                if lo >= hi {
                    continue;
                }
                let x0 = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[x0..x0 + hi - lo].iter_mut().zip(s) {
                            *d += *v;
                        }
                    } else {
                        for (i, v) in s.iter().enumerate() {
                            dst[x0 + i * g.stride] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation. `x`: (N, Cin, H, W), `w`: (Cout, Cin, kh, kw),
/// `b`: (Cout). Zero padding on all sides.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    assert_eq!(x.rank(), 4, "conv2d: input must be NCHW");
    assert_eq!(w.rank(), 4, "conv2d: weight must be (Cout, Cin, kh, kw)");
    assert!(stride >= 1);
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, wcin, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    assert_eq!(cin, wcin, "conv2d: channel mismatch");
    assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than input");
    if let Some(b) = b {
        assert_eq!(b.dims(), &[cout], "conv2d: bias shape");
    }
    let g = Geom {
        cin,
        h,
        w: wd,
        kh,
        kw,
        stride,
        pad,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (wd + 2 * pad - kw) / stride + 1,
    };
    let (k, l) = (g.col_rows(), g.col_len());
    let in_plane = cin * h * wd;
    let mut out = vec![T::zero(); n * cout * l];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
    for bi in 0..n {
        let xb = &x.data()[bi * in_plane..(bi + 1) * in_plane];
        let colsref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        let yb = &mut out[bi * cout * l..(bi + 1) * cout * l];
        gemm(false, false, cout, l, k, T::one(), w.data(), colsref, T::zero(), yb);
        if let Some(b) = b {
            for (co, bv) in b.data().iter().enumerate() {
                yb[co * l..(co + 1) * l].iter_mut().for_each(|v| *v += *bv);
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Tensor::from_op(vec![n, cout, g.ho, g.wo], out, parents, move |gy, _, p| {
        let (x, w) = (&p[0], &p[1]);
        let mut gx = x.requires_grad().then(|| vec![T::zero(); n * in_plane]);
        let mut gw = w.requires_grad().then(|| vec![T::zero(); cout * k]);
        let gb = p.get(2).filter(|b| b.requires_grad()).map(|_| {
            let mut gb = vec![T::zero(); cout];
            for bi in 0..n {
                for (co, acc) in gb.iter_mut().enumerate() {
                    let s = (bi * cout + co) * l;
                    *acc += gy[s..s + l].iter().copied().sum::<T>();
                }
            }
            gb
        });
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * l }];
        let mut dcols = vec![T::zero(); k * l];
        for bi in 0..n {
            let gyb = &gy[bi * cout * l..(bi + 1) * cout * l];
            if let Some(gw) = gw.as_mut() {
                let xb = &x.data()[bi * in_plane..(bi + 1) * in_plane];
                let colsref: &[T] = if g.is_pointwise() {
                    xb
                } else {
                    im2col(xb, &g, &mut cols);
                    &cols
                };
                gemm(false, true, cout, k, l, T::one(), gyb, colsref, T::one(), gw);
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[bi * in_plane..(bi + 1) * in_plane];
                if g.is_pointwise() {
                    gemm(true, false, k, l, cout, T::one(), w.data(), gyb, T::zero(), gxb);
                } else {
                    gemm(true, false, k, l, cout, T::one(), w.data(), gyb, T::zero(), &mut dcols);
                    col2im(&dcols, &g, gxb);
                }
            }
        }
        let mut res = vec![gx, gw];
        if p.len() == 3 {
            res.push(gb);
        }
        res
    })
}

/// Transposed convolution with `kernel == stride` (non-overlapping
/// upsampling). `x`: (N, Cin, H, W), `w`: (Cin, Cout, k, k), `b`: (Cout).
/// Output is (N, Cout, H·k, W·k).
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
) -> Tensor<T> {
    assert_eq!(x.rank(), 4);
    assert_eq!(w.rank(), 4);
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (wcin, cout, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    assert_eq!(cin, wcin, "conv_transpose2d: channel mismatch");
    assert!(kh == stride && kw == stride, "conv_transpose2d: kernel must equal stride");
    if let Some(b) = b {
        assert_eq!(b.dims(), &[cout]);
    }
    let s = stride;
    let (ho, wo) = (h * s, wd * s);
    let l = h * wd;
    let m = cout * s * s;
    let in_plane = cin * l;
    let out_plane = cout * ho * wo;
    let mut out = vec![T::zero(); n * out_plane];
    let mut ycols = vec![T::zero(); m * l];
    for bi in 0..n {
        let xb = &x.data()[bi * in_plane..(bi + 1) * in_plane];
        gemm(true, false, m, l, cin, T::one(), w.data(), xb, T::zero(), &mut ycols);
        let ob = &mut out[bi * out_plane..(bi + 1) * out_plane];
        for co in 0..cout {
            let bias = b.map(|b| b.data()[co]).unwrap_or_else(T::zero);
            for ki in 0..s {
                for kj in 0..s {
                    let row = &ycols[((co * s + ki) * s + kj) * l..][..l];
                    for iy in 0..h {
                        let oy = iy * s + ki;
                        for ix in 0..wd {
                            ob[(co * ho + oy) * wo + ix * s + kj] = row[iy * wd + ix] + bias;
                        }
                    }
                }
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Tensor::from_op(vec![n, cout, ho, wo], out, parents, move |gy, _, p| {
        let (x, w) = (&p[0], &p[1]);
        let mut gx = x.requires_grad().then(|| vec![T::zero(); n * in_plane]);
        let mut gw = w.requires_grad().then(|| vec![T::zero(); cin * m]);
        let mut gb = p
            .get(2)
            .filter(|b| b.requires_grad())
            .map(|_| vec![T::zero(); cout]);
        let mut gcols = vec![T::zero(); m * l];
        for bi in 0..n {
            let gyb = &gy[bi * out_plane..(bi + 1) * out_plane];
            for co in 0..cout {
                for ki in 0..s {
                    for kj in 0..s {
                        let row = &mut gcols[((co * s + ki) * s + kj) * l..][..l];
                        for iy in 0..h {
                            let oy = iy * s + ki;
                            for ix in 0..wd {
                                row[iy * wd + ix] = gyb[(co * ho + oy) * wo + ix * s + kj];
                            }
                        }
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    gb[co] += gyb[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum::<T>();
                }
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[bi * in_plane..(bi + 1) * in_plane];
                gemm(false, false, cin, l, m, T::one(), w.data(), &gcols, T::zero(), gxb);
            }
            if let Some(gw) = gw.as_mut() {
                let xb = &x.data()[bi * in_plane..(bi + 1) * in_plane];
                gemm(false, true, cin, m, l, T::one(), xb, &gcols, T::one(), gw);
            }
        }
        let mut res = vec![gx, gw];
        if p.len() == 3 {
            res.push(gb);
        }
        res
    })
}
