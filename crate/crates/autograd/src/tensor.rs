use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::{Param, Real};

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operators on this thread currently record a graph.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording any graph (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Backward rule: `(grad_out, out_data, parents) -> grad per parent`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>>>;

struct GradFn<T: Real> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: usize,
    dims: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
    param: Option<Param<T>>,
}

/// Dense row-major tensor participating in an eager autodiff graph.
pub struct Tensor<T: Real> {
    node: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.node.dims)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn build(
        dims: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
        param: Option<Param<T>>,
    ) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match dims {dims:?}"
        );
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                dims,
                data,
                requires_grad,
                grad_fn,
                param,
            }),
        }
    }

    /// Constant tensor (never receives a gradient).
    pub fn from_vec(data: Vec<T>, dims: &[usize]) -> Self {
        Self::build(dims.to_vec(), data, false, None, None)
    }

    /// Leaf tensor whose gradient is reported in [`Gradients`].
    pub fn leaf(data: Vec<T>, dims: &[usize]) -> Self {
        Self::build(dims.to_vec(), data, grad_enabled(), None, None)
    }

    pub(crate) fn param_leaf(param: &Param<T>, data: Vec<T>) -> Self {
        let rg = grad_enabled() && param.trainable();
        Self::build(param.dims().to_vec(), data, rg, None, Some(param.clone()))
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        Self::from_vec(vec![v; dims.iter().product()], dims)
    }

    /// Result of an operator. Records the backward rule only when a parent
    /// requires a gradient and grad mode is on.
    pub(crate) fn from_op(
        dims: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let rg = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = rg.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Self::build(dims, data, rg, grad_fn, None)
    }

    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn dims(&self) -> &[usize] {
        &self.node.dims
    }

    pub fn rank(&self) -> usize {
        self.node.dims.len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.node.dims[i]
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor with dims {:?}", self.dims());
        self.node.data[0]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_vec(self.to_vec(), self.dims())
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    /// Back-propagates from this tensor, seeding with ones.
    ///
    /// Parameter leaves accumulate into their [`Param`] gradient buffers;
    /// every other leaf that requires a gradient is returned.
    pub fn backward(&self) -> Gradients<T> {
        self.backward_with(vec![T::one(); self.numel()])
    }

    pub fn backward_with(&self, seed: Vec<T>) -> Gradients<T> {
        assert_eq!(seed.len(), self.numel());
        let mut out = Gradients {
            grads: HashMap::new(),
        };
        if !self.requires_grad() {
            return out;
        }

        // Iterative post-order DFS; deep BPTT graphs would overflow a
        // recursive walk.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.node.grad_fn {
                Some(gf) => {
                    let pgrads = (gf.backward)(&g, &t.node.data, &gf.parents);
                    debug_assert_eq!(pgrads.len(), gf.parents.len());
                    for (p, pg) in gf.parents.iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(&pg) {
                                    *a += *v;
                                }
                            }
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
                None => match &t.node.param {
                    Some(param) => param.accumulate_grad(&g),
                    None => {
                        out.grads.insert(t.id(), g);
                    }
                },
            }
        }
        out
    }
}

/// Gradients of non-parameter leaves, keyed by tensor identity.
#[derive(Debug, Default)]
pub struct Gradients<T: Real> {
    grads: HashMap<usize, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }
}
