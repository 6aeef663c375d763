use std::collections::HashMap;

use crate::{Param, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    /// PyTorch defaults.
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// AdamW with decoupled weight decay.
pub struct AdamW<T: Real> {
    pub config: AdamWConfig,
    params: Vec<Param<T>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: Vec<Param<T>>, config: AdamWConfig) -> Self {
        let params: Vec<Param<T>> = params.into_iter().filter(|p| p.trainable()).collect();
        let m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        AdamW {
            config,
            params,
            m,
            v,
            step: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.zero_grad());
    }

    /// Global L2 norm of all parameter gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn step(&mut self) {
        self.step_scaled(1.0)
    }

    /// One update with every gradient multiplied by `grad_scale` (used for
    /// norm clipping).
    pub fn step_scaled(&mut self, grad_scale: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, b1, b2, eps) = (T::of(c.lr), T::of(c.beta1), T::of(c.beta2), T::of(c.eps));
        let decay = T::one() - T::of(c.lr * c.weight_decay);
        let gs = T::of(grad_scale);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad();
            p.update(|w| {
                for i in 0..w.len() {
                    let g = grad[i] * gs;
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    w[i] = w[i] * decay - lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
    }

    /// Moment buffers keyed by `m.<param>` / `v.<param>`, plus the step
    /// counter under `step`.
    pub fn state(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = vec![("step".to_string(), vec![], vec![T::of(self.step as f64)])];
        for ((p, m), v) in self.params.iter().zip(&self.m).zip(&self.v) {
            out.push((format!("m.{}", p.name()), p.dims().to_vec(), m.clone()));
            out.push((format!("v.{}", p.name()), p.dims().to_vec(), v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, entries: &HashMap<String, Vec<T>>) -> Result<(), String> {
        let step = entries.get("step").ok_or("optimizer state lacks step")?;
        self.step = step.first().map(|s| s.as_f64() as u64).unwrap_or(0);
        for (i, p) in self.params.iter().enumerate() {
            for (prefix, buf) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("{prefix}.{}", p.name());
                let src = entries.get(&key).ok_or(format!("optimizer state lacks {key}"))?;
                if src.len() != buf.len() {
                    return Err(format!("optimizer state {key} has wrong length"));
                }
                buf.copy_from_slice(src);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule in `min` mode with PyTorch's
/// relative threshold semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReduceLrOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        ReduceLrOnPlateau {
            factor,
            patience,
            threshold: 1e-4,
            min_lr: 0.0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one observation of the monitored quantity; returns the new
    /// learning rate.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }
}
