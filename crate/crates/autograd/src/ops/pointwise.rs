use crate::{Real, Tensor};

use super::expand;

fn same_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(a.dims(), b.dims(), "{op}: shape mismatch");
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    same_dims(a, b, "add");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone(), b.clone()], |g, _, _| {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    })
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    same_dims(a, b, "sub");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone(), b.clone()], |g, _, _| {
        vec![Some(g.to_vec()), Some(g.iter().map(|v| -*v).collect())]
    })
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    same_dims(a, b, "mul");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone(), b.clone()], |g, _, p| {
        let ga = p[0]
            .requires_grad()
            .then(|| g.iter().zip(p[1].data()).map(|(g, y)| *g * *y).collect());
        let gb = p[1]
            .requires_grad()
            .then(|| g.iter().zip(p[0].data()).map(|(g, x)| *g * *x).collect());
        vec![ga, gb]
    })
}

/// `a + b` with `b` broadcast to `a`'s shape (size-1 axes).
pub fn add_bcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    if a.dims() == b.dims() {
        return add(a, b);
    }
    add(a, &expand(b, a.dims()))
}

/// `a * b` with `b` broadcast to `a`'s shape (size-1 axes).
pub fn mul_bcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    if a.dims() == b.dims() {
        return mul(a, b);
    }
    mul(a, &expand(b, a.dims()))
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Tensor<T> {
    affine(a, s, T::zero())
}

/// `s * a + shift`.
pub fn affine<T: Real>(a: &Tensor<T>, s: T, shift: T) -> Tensor<T> {
    let data = a.data().iter().map(|x| *x * s + shift).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone()], move |g, _, _| {
        vec![Some(g.iter().map(|v| *v * s).collect())]
    })
}

pub fn relu<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|x| x.max(T::zero())).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone()], |g, _, p| {
        let gx = g
            .iter()
            .zip(p[0].data())
            .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
            .collect();
        vec![Some(gx)]
    })
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|x| sigmoid_scalar(*x)).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone()], |g, y, _| {
        vec![Some(
            g.iter()
                .zip(y)
                .map(|(g, y)| *g * *y * (T::one() - *y))
                .collect(),
        )]
    })
}

pub fn tanh<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|x| x.tanh()).collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone()], |g, y, _| {
        vec![Some(
            g.iter()
                .zip(y)
                .map(|(g, y)| *g * (T::one() - *y * *y))
                .collect(),
        )]
    })
}

/// GELU, tanh approximation.
pub fn gelu<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let data = a
        .data()
        .iter()
        .map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()))
        .collect();
    Tensor::from_op(a.dims().to_vec(), data, vec![a.clone()], move |g, _, p| {
        let gx = g
            .iter()
            .zip(p[0].data())
            .map(|(&g, &x)| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let du = c * (T::one() + three * k * x * x);
                g * (half * (T::one() + t) + half * x * (T::one() - t * t) * du)
            })
            .collect();
        vec![Some(gx)]
    })
}
