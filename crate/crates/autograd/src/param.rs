use std::sync::{Arc, Mutex, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Init, Real, Tensor};

struct ParamInner<T> {
    name: String,
    dims: Vec<usize>,
    trainable: bool,
    value: RwLock<Vec<T>>,
    grad: Mutex<Vec<T>>,
}

/// A named, shaped, mutable array owned by a model.
///
/// Cloning a `Param` clones the handle, not the storage.
pub struct Param<T: Real>(Arc<ParamInner<T>>);

impl<T: Real> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Arc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("name", &self.0.name)
            .field("dims", &self.0.dims)
            .finish()
    }
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, dims: &[usize], value: Vec<T>, trainable: bool) -> Self {
        assert_eq!(dims.iter().product::<usize>(), value.len());
        let n = value.len();
        Param(Arc::new(ParamInner {
            name: name.into(),
            dims: dims.to_vec(),
            trainable,
            value: RwLock::new(value),
            grad: Mutex::new(vec![T::zero(); n]),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.0.dims
    }

    pub fn numel(&self) -> usize {
        self.0.dims.iter().product()
    }

    /// Buffers (e.g. running statistics) are stored but never optimised.
    pub fn trainable(&self) -> bool {
        self.0.trainable
    }

    /// Graph leaf holding the current value.
    pub fn tensor(&self) -> Tensor<T> {
        Tensor::param_leaf(self, self.value())
    }

    pub fn value(&self) -> Vec<T> {
        self.0.value.read().expect("param lock").clone()
    }

    pub fn set_value(&self, v: &[T]) {
        let mut w = self.0.value.write().expect("param lock");
        assert_eq!(w.len(), v.len(), "set_value length mismatch for {}", self.0.name);
        w.copy_from_slice(v);
    }

    pub fn update(&self, f: impl FnOnce(&mut [T])) {
        let mut w = self.0.value.write().expect("param lock");
        f(&mut w);
    }

    pub fn grad(&self) -> Vec<T> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        let mut g = self.0.grad.lock().expect("grad lock");
        g.iter_mut().for_each(|v| *v = T::zero());
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut acc = self.0.grad.lock().expect("grad lock");
        for (a, v) in acc.iter_mut().zip(g) {
            *a += *v;
        }
    }

    pub fn same_storage(&self, other: &Param<T>) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

struct StoreInner<T: Real> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

/// Ordered registry of named parameters with a seeded initialiser.
///
/// Sub-stores created with [`ParamStore::pp`] share the registry and the
/// random stream, prefixing names with `prefix.`; creation order therefore
/// fixes the initial values for a given seed.
pub struct ParamStore<T: Real> {
    inner: Arc<Mutex<StoreInner<T>>>,
    prefix: String,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            inner: Arc::clone(&self.inner),
            prefix: self.prefix.clone(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            inner: Arc::new(Mutex::new(StoreInner {
                params: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: &str) -> Self {
        ParamStore {
            inner: Arc::clone(&self.inner),
            prefix: self.full_name(name),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn create(&self, name: &str, dims: &[usize], init: Init, trainable: bool) -> Param<T> {
        let full = self.full_name(name);
        let mut inner = self.inner.lock().expect("store lock");
        assert!(
            inner.params.iter().all(|p| p.name() != full),
            "duplicate parameter name {full}"
        );
        let n = dims.iter().product();
        let values = init.sample(n, &mut inner.rng).into_iter().map(T::of).collect();
        let p = Param::new(full, dims, values, trainable);
        inner.params.push(p.clone());
        p
    }

    pub fn param(&self, name: &str, dims: &[usize], init: Init) -> Param<T> {
        self.create(name, dims, init, true)
    }

    pub fn buffer(&self, name: &str, dims: &[usize], init: Init) -> Param<T> {
        self.create(name, dims, init, false)
    }

    /// All registered parameters and buffers, in creation order.
    pub fn all(&self) -> Vec<Param<T>> {
        self.inner.lock().expect("store lock").params.clone()
    }

    pub fn trainable(&self) -> Vec<Param<T>> {
        self.all().into_iter().filter(|p| p.trainable()).collect()
    }

    pub fn get(&self, name: &str) -> Option<Param<T>> {
        self.all().into_iter().find(|p| p.name() == name)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for p in self.all() {
            p.zero_grad();
        }
    }
}
