//! Learnable Kalman-filter-inspired recurrent block over bottleneck
//! feature maps.
//!
//! One step, with `x_{t-1}` the previous output state and `z_t` the current
//! observation (encoder bottleneck):
//!
//! ```text
//! x̂_t = f1(x_{t-1})            dynamics model (residual conv stack)
//! ẑ_t = f2(x̂_t)                observation model (conv stack)
//! Δx_t = x_{t-1} − x̂_t          dynamics error
//! Δz_t = z_t − ẑ_t              observation error
//! K_t  = f3(Δx_t, Δz_t; memory) gain (ConvGRU + 1×1 conv + sigmoid)
//! x_t  = x̂_t + K_t ⊙ Δz_t
//! ```
//!
//! Every map keeps the `(B, C, h, w)` layout so the block works in the
//! spatial feature space rather than on flattened embeddings.

use autograd::{ops, Init, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvGruCell, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KfConfig {
    pub channels: usize,
    /// Squash the gain into (0, 1) with a sigmoid; otherwise the gain head
    /// output is used as is.
    pub bounded_gain: bool,
}

impl KfConfig {
    pub fn new(channels: usize) -> Self {
        KfConfig {
            channels,
            bounded_gain: true,
        }
    }
}

/// Dynamics model: `x + conv(relu(conv(x)))`, final conv zero-initialised
/// so the block starts as a constant-position predictor.
#[derive(Debug, Clone)]
pub struct DynamicsModel<T: Real> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Real> DynamicsModel<T> {
    fn new(vs: &ParamStore<T>, c: usize) -> Self {
        DynamicsModel {
            conv1: Conv2d::new(&vs.pp("conv1"), c, c, 3, 1, true),
            conv2: Conv2d::with_init(&vs.pp("conv2"), c, c, 3, 1, true, Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let r = self.conv2.forward(&ops::relu(&self.conv1.forward(x)));
        ops::add(x, &r)
    }
}

/// Observation model: `x + conv(relu(conv(x)))`, final conv
/// zero-initialised so it starts as the identity map and the update starts
/// as the convex blend `x̂ + K ⊙ (z − x̂)`.
#[derive(Debug, Clone)]
pub struct ObservationModel<T: Real> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Real> ObservationModel<T> {
    fn new(vs: &ParamStore<T>, c: usize) -> Self {
        ObservationModel {
            conv1: Conv2d::new(&vs.pp("conv1"), c, c, 3, 1, true),
            conv2: Conv2d::with_init(&vs.pp("conv2"), c, c, 3, 1, true, Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let r = self.conv2.forward(&ops::relu(&self.conv1.forward(x)));
        ops::add(x, &r)
    }
}

/// Gain network: ConvGRU over `[Δx, Δz]` whose hidden state carries the
/// error history, followed by a 1×1 conv head.
#[derive(Debug, Clone)]
pub struct GainNetwork<T: Real> {
    pub cell: ConvGruCell<T>,
    pub head: Conv2d<T>,
    pub bounded: bool,
}

impl<T: Real> GainNetwork<T> {
    fn new(vs: &ParamStore<T>, c: usize, bounded: bool) -> Self {
        GainNetwork {
            cell: ConvGruCell::new(&vs.pp("gru"), 2 * c, c),
            head: Conv2d::new(&vs.pp("head"), c, c, 1, 1, true),
            bounded,
        }
    }

    /// Returns `(K_t, hidden')`.
    pub fn forward(&self, dx: &Tensor<T>, dz: &Tensor<T>, hidden: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let h = self.cell.forward(&ops::cat(&[dx.clone(), dz.clone()], 1), hidden);
        let pre = self.head.forward(&h);
        let gain = if self.bounded { ops::sigmoid(&pre) } else { pre };
        (gain, h)
    }
}

/// Per-sequence recurrent state.
#[derive(Debug, Clone)]
pub struct KfState<T: Real> {
    pub x_prev: Option<FeatureMap<T>>,
    pub gain_hidden: Option<FeatureMap<T>>,
    pub initialized: bool,
}

impl<T: Real> KfState<T> {
    pub fn uninitialized() -> Self {
        KfState {
            x_prev: None,
            gain_hidden: None,
            initialized: false,
        }
    }

    fn parts(&self) -> Result<(&FeatureMap<T>, &FeatureMap<T>)> {
        match (self.initialized, &self.x_prev, &self.gain_hidden) {
            (true, Some(x), Some(h)) => Ok((x, h)),
            _ => Err(Error::UninitializedState),
        }
    }

    pub fn x_prev(&self) -> Result<&FeatureMap<T>> {
        self.parts().map(|p| p.0)
    }

    pub fn gain_hidden(&self) -> Result<&FeatureMap<T>> {
        self.parts().map(|p| p.1)
    }
}

/// All intermediate quantities of one step.
#[derive(Debug, Clone)]
pub struct KfStepTrace<T: Real> {
    pub z_t: FeatureMap<T>,
    pub x_hat: FeatureMap<T>,
    pub z_hat: FeatureMap<T>,
    pub dx: FeatureMap<T>,
    pub dz: FeatureMap<T>,
    pub gain: FeatureMap<T>,
    pub x_out: FeatureMap<T>,
}

impl<T: Real> KfStepTrace<T> {
    /// Max over elements of `|x_out − (x_hat + gain ⊙ dz)| / (1 + |x_out|)`.
    pub fn reconstruction_error(&self) -> f64 {
        let (xo, xh, k, dz) = (self.x_out.data(), self.x_hat.data(), self.gain.data(), self.dz.data());
        (0..xo.len())
            .map(|i| {
                let want = xh[i].as_f64() + k[i].as_f64() * dz[i].as_f64();
                (xo[i].as_f64() - want).abs() / (1.0 + xo[i].as_f64().abs())
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct KfBlock<T: Real> {
    pub cfg: KfConfig,
    pub f1: DynamicsModel<T>,
    pub f2: ObservationModel<T>,
    pub f3: GainNetwork<T>,
}

impl<T: Real> KfBlock<T> {
    /// Parameters are registered as `f1.*`, `f2.*`, `f3.*` under `vs`.
    pub fn new(vs: &ParamStore<T>, cfg: KfConfig) -> Result<Self> {
        if cfg.channels == 0 {
            return Err(Error::config("KF block needs at least one channel"));
        }
        let c = cfg.channels;
        Ok(KfBlock {
            cfg,
            f1: DynamicsModel::new(&vs.pp("f1"), c),
            f2: ObservationModel::new(&vs.pp("f2"), c),
            f3: GainNetwork::new(&vs.pp("f3"), c, cfg.bounded_gain),
        })
    }

    fn check(&self, t: &Tensor<T>, what: &str) -> Result<()> {
        if t.rank() != 4 || t.dim(1) != self.cfg.channels {
            return Err(Error::shape(format!(
                "{what} must be (B, {}, h, w), got {:?}",
                self.cfg.channels,
                t.dims()
            )));
        }
        Ok(())
    }

    /// `x_prev := z0`, zero gain memory.
    pub fn reset_state(&self, z0: &FeatureMap<T>) -> Result<KfState<T>> {
        self.check(z0, "initial observation")?;
        if !z0.all_finite() {
            return Err(Error::shape("initial observation is not finite"));
        }
        Ok(KfState {
            x_prev: Some(z0.clone()),
            gain_hidden: Some(Tensor::zeros(z0.dims())),
            initialized: true,
        })
    }

    /// Returns `(x̂_t, ẑ_t)`.
    pub fn predict_step(&self, state: &KfState<T>) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        let (x_prev, _) = state.parts()?;
        let x_hat = self.f1.forward(x_prev);
        let z_hat = self.f2.forward(&x_hat);
        Ok((x_hat, z_hat))
    }

    pub fn update_step(
        &self,
        state: &KfState<T>,
        z_t: &FeatureMap<T>,
        x_hat: &FeatureMap<T>,
        z_hat: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, KfState<T>, KfStepTrace<T>)> {
        let (x_prev, hidden) = state.parts()?;
        for (t, what) in [(z_t, "observation"), (x_hat, "state estimate"), (z_hat, "observation estimate")] {
            self.check(t, what)?;
            if t.dims() != x_prev.dims() {
                return Err(Error::shape(format!(
                    "{what} {:?} does not match state {:?}",
                    t.dims(),
                    x_prev.dims()
                )));
            }
        }
        let dx = ops::sub(x_prev, x_hat);
        let dz = ops::sub(z_t, z_hat);
        let (gain, hidden) = self.f3.forward(&dx, &dz, hidden);
        let x_t = ops::add(x_hat, &ops::mul(&gain, &dz));
        let trace = KfStepTrace {
            z_t: z_t.clone(),
            x_hat: x_hat.clone(),
            z_hat: z_hat.clone(),
            dx,
            dz,
            gain,
            x_out: x_t.clone(),
        };
        debug_assert!(trace.reconstruction_error() <= 1e-5, "x_t != x̂_t + K_t ⊙ Δz_t");
        let next = KfState {
            x_prev: Some(x_t.clone()),
            gain_hidden: Some(hidden),
            initialized: true,
        };
        Ok((x_t, next, trace))
    }

    /// Prediction then update; also returns the step trace.
    pub fn step(&self, state: &KfState<T>, z_t: &FeatureMap<T>) -> Result<(FeatureMap<T>, KfState<T>, KfStepTrace<T>)> {
        if !z_t.all_finite() {
            return Err(Error::shape("observation is not finite"));
        }
        let (x_hat, z_hat) = self.predict_step(state)?;
        self.update_step(state, z_t, &x_hat, &z_hat)
    }

    pub fn forward(&self, state: &KfState<T>, z_t: &FeatureMap<T>) -> Result<(FeatureMap<T>, KfState<T>)> {
        let (x, s, _) = self.step(state, z_t)?;
        Ok((x, s))
    }
}
