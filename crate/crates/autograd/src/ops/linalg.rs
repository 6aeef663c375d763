use crate::{gemm, Real, Tensor};

/// Matrix product `op(a) · op(b)` for rank-2 operands, or batched over the
/// leading axis for rank-3 operands.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, trans_a: bool, trans_b: bool) -> Tensor<T> {
    assert_eq!(a.rank(), b.rank(), "matmul: rank mismatch");
    let batched = match a.rank() {
        2 => false,
        3 => true,
        r => panic!("matmul: unsupported rank {r}"),
    };
    let off = usize::from(batched);
    let batch = if batched { a.dim(0) } else { 1 };
    if batched {
        assert_eq!(b.dim(0), batch, "matmul: batch mismatch");
    }
    let (ar, ac) = (a.dim(off), a.dim(off + 1));
    let (br, bc) = (b.dim(off), b.dim(off + 1));
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
    assert_eq!(k, kb, "matmul: inner dimension mismatch");
    let (sa, sb, sc) = (m * k, k * n, m * n);
    let mut out = vec![T::zero(); batch * sc];
    for i in 0..batch {
        gemm(
            trans_a,
            trans_b,
            m,
            n,
            k,
            T::one(),
            &a.data()[i * sa..(i + 1) * sa],
            &b.data()[i * sb..(i + 1) * sb],
            T::zero(),
            &mut out[i * sc..(i + 1) * sc],
        );
    }
    let dims = if batched { vec![batch, m, n] } else { vec![m, n] };
    Tensor::from_op(dims, out, vec![a.clone(), b.clone()], move |g, _, p| {
        let (a, b) = (&p[0], &p[1]);
        let ga = a.requires_grad().then(|| {
            let mut ga = vec![T::zero(); batch * sa];
            for i in 0..batch {
                let gi = &g[i * sc..(i + 1) * sc];
                let bi = &b.data()[i * sb..(i + 1) * sb];
                let dst = &mut ga[i * sa..(i + 1) * sa];
                if trans_a {
                    // dA (k×m) = op(B) · dCᵀ
                    gemm(trans_b, true, k, m, n, T::one(), bi, gi, T::zero(), dst);
                } else {
                    // dA (m×k) = dC · op(B)ᵀ
                    gemm(false, !trans_b, m, k, n, T::one(), gi, bi, T::zero(), dst);
                }
            }
            ga
        });
        let gb = b.requires_grad().then(|| {
            let mut gb = vec![T::zero(); batch * sb];
            for i in 0..batch {
                let gi = &g[i * sc..(i + 1) * sc];
                let ai = &a.data()[i * sa..(i + 1) * sa];
                let dst = &mut gb[i * sb..(i + 1) * sb];
                if trans_b {
                    // dB (n×k) = dCᵀ · op(A)
                    gemm(true, trans_a, n, k, m, T::one(), gi, ai, T::zero(), dst);
                } else {
                    // dB (k×n) = op(A)ᵀ · dC
                    gemm(!trans_a, false, k, n, m, T::one(), ai, gi, T::zero(), dst);
                }
            }
            gb
        });
        vec![ga, gb]
    })
}
