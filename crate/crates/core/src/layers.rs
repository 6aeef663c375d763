//! Parameterised building blocks shared by encoders, blocks and decoder.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use autograd::{ops, Init, Param, ParamStore, Real, Tensor};

pub type FeatureMap<T> = Tensor<T>;

/// Shared train/eval switch for layers whose forward pass depends on mode.
#[derive(Debug, Clone, Default)]
pub struct ModeFlag(Arc<AtomicBool>);

impl ModeFlag {
    pub fn set_training(&self, on: bool) {
        self.0.store(on, Ordering::Relaxed);
    }

    pub fn training(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-normal weights, zero bias, "same" padding for odd kernels.
    pub fn new(vs: &ParamStore<T>, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Self {
        Self::with_init(vs, cin, cout, k, stride, bias, Init::KaimingNormal { fan_in: cin * k * k })
    }

    pub fn with_init(
        vs: &ParamStore<T>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let weight = vs.param("w", &[cout, cin, k, k], init);
        let bias = bias.then(|| vs.param("b", &[cout], Init::Zeros));
        Conv2d {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let b = self.bias.as_ref().map(|b| b.tensor());
        ops::conv2d(x, &self.weight.tensor(), b.as_ref(), self.stride, self.pad)
    }
}

/// Transposed convolution with kernel = stride (learned upsampling).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(vs: &ParamStore<T>, cin: usize, cout: usize, stride: usize) -> Self {
        ConvTranspose2d {
            weight: vs.param("w", &[cin, cout, stride, stride], Init::KaimingNormal { fan_in: cin }),
            bias: vs.param("b", &[cout], Init::Zeros),
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        ops::conv_transpose2d(x, &self.weight.tensor(), Some(&self.bias.tensor()), self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(vs: &ParamStore<T>, din: usize, dout: usize, bias: bool, init: Init) -> Self {
        Linear {
            weight: vs.param("w", &[dout, din], init),
            bias: bias.then(|| vs.param("b", &[dout], Init::Zeros)),
        }
    }

    /// `x`: (rows, din) → (rows, dout).
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = ops::matmul(x, &self.weight.tensor(), false, true);
        match &self.bias {
            Some(b) => {
                let dout = b.numel();
                ops::add_bcast(&y, &ops::reshape(&b.tensor(), &[1, dout]))
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    mode: ModeFlag,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(vs: &ParamStore<T>, c: usize, mode: &ModeFlag) -> Self {
        BatchNorm2d {
            gamma: vs.param("gamma", &[c], Init::Constant(1.0)),
            beta: vs.param("beta", &[c], Init::Zeros),
            running_mean: vs.buffer("running_mean", &[c], Init::Zeros),
            running_var: vs.buffer("running_var", &[c], Init::Constant(1.0)),
            momentum: 0.1,
            eps: 1e-5,
            mode: mode.clone(),
        }
    }

    /// Batch statistics in training mode (updating the running estimates),
    /// running statistics otherwise.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (g, b) = (self.gamma.tensor(), self.beta.tensor());
        if self.mode.training() {
            let (y, mean, var) = ops::batch_norm2d(x, &g, &b, None, self.eps);
            let n = (x.numel() / x.dim(1)) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = T::of(self.momentum);
            self.running_mean.update(|rm| {
                for (r, v) in rm.iter_mut().zip(&mean) {
                    *r = (T::one() - m) * *r + m * *v;
                }
            });
            self.running_var.update(|rv| {
                for (r, v) in rv.iter_mut().zip(&var) {
                    *r = (T::one() - m) * *r + m * *v * T::of(unbias);
                }
            });
            y
        } else {
            let (rm, rv) = (self.running_mean.value(), self.running_var.value());
            ops::batch_norm2d(x, &g, &b, Some((&rm, &rv)), self.eps).0
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(vs: &ParamStore<T>, d: usize) -> Self {
        LayerNorm {
            gamma: vs.param("gamma", &[d], Init::Constant(1.0)),
            beta: vs.param("beta", &[d], Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        ops::layer_norm(x, &self.gamma.tensor(), &self.beta.tensor(), 1e-6)
    }
}

/// conv3×3 → ReLU → conv3×3 → ReLU, the U-Net double convolution.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Real> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(vs: &ParamStore<T>, cin: usize, cout: usize) -> Self {
        ConvBlock {
            conv1: Conv2d::new(&vs.pp("conv1"), cin, cout, 3, 1, true),
            conv2: Conv2d::new(&vs.pp("conv2"), cout, cout, 3, 1, true),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = ops::relu(&self.conv1.forward(x));
        ops::relu(&self.conv2.forward(&h))
    }
}

/// Convolutional GRU cell with 3×3 kernels.
#[derive(Debug, Clone)]
pub struct ConvGruCell<T: Real> {
    pub gates: Conv2d<T>,
    pub candidate: Conv2d<T>,
    pub hidden: usize,
}

impl<T: Real> ConvGruCell<T> {
    pub fn new(vs: &ParamStore<T>, cin: usize, hidden: usize) -> Self {
        ConvGruCell {
            gates: Conv2d::new(&vs.pp("gates"), cin + hidden, 2 * hidden, 3, 1, true),
            candidate: Conv2d::new(&vs.pp("candidate"), cin + hidden, hidden, 3, 1, true),
            hidden,
        }
    }

    /// `h' = (1 − u) ⊙ h + u ⊙ tanh(W_n [x, r ⊙ h])` with update gate `u`
    /// and reset gate `r`.
    pub fn forward(&self, x: &Tensor<T>, h: &Tensor<T>) -> Tensor<T> {
        let c = self.hidden;
        let g = ops::sigmoid(&self.gates.forward(&ops::cat(&[x.clone(), h.clone()], 1)));
        let update = ops::narrow(&g, 1, 0, c);
        let reset = ops::narrow(&g, 1, c, c);
        let rh = ops::mul(&reset, h);
        let n = ops::tanh(&self.candidate.forward(&ops::cat(&[x.clone(), rh], 1)));
        let keep = ops::mul(&ops::affine(&update, -T::one(), T::one()), h);
        ops::add(&keep, &ops::mul(&update, &n))
    }
}

/// Convolutional LSTM cell with 3×3 kernels.
#[derive(Debug, Clone)]
pub struct ConvLstmCell<T: Real> {
    pub conv: Conv2d<T>,
    pub hidden: usize,
}

impl<T: Real> ConvLstmCell<T> {
    pub fn new(vs: &ParamStore<T>, cin: usize, hidden: usize) -> Self {
        ConvLstmCell {
            conv: Conv2d::new(&vs.pp("conv"), cin + hidden, 4 * hidden, 3, 1, true),
            hidden,
        }
    }

    /// Returns `(h', c')`.
    pub fn forward(&self, x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let pre = self.conv.forward(&ops::cat(&[x.clone(), h.clone()], 1));
        lstm_update(&pre, c, self.hidden, 1)
    }
}

/// Shared LSTM gate arithmetic on stacked pre-activations `[i, f, g, o]`
/// along `axis`.
fn lstm_update<T: Real>(pre: &Tensor<T>, c: &Tensor<T>, hidden: usize, axis: usize) -> (Tensor<T>, Tensor<T>) {
    let i = ops::sigmoid(&ops::narrow(pre, axis, 0, hidden));
    let f = ops::sigmoid(&ops::narrow(pre, axis, hidden, hidden));
    let g = ops::tanh(&ops::narrow(pre, axis, 2 * hidden, hidden));
    let o = ops::sigmoid(&ops::narrow(pre, axis, 3 * hidden, hidden));
    let c_next = ops::add(&ops::mul(&f, c), &ops::mul(&i, &g));
    let h_next = ops::mul(&o, &ops::tanh(&c_next));
    (h_next, c_next)
}

/// Fully connected LSTM cell over `(B, din)` vectors.
#[derive(Debug, Clone)]
pub struct LstmCell<T: Real> {
    pub input: Linear<T>,
    pub recurrent: Linear<T>,
    pub hidden: usize,
}

impl<T: Real> LstmCell<T> {
    pub fn new(vs: &ParamStore<T>, din: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            input: Linear::new(&vs.pp("ih"), din, 4 * hidden, true, Init::Uniform { bound }),
            recurrent: Linear::new(&vs.pp("hh"), hidden, 4 * hidden, false, Init::Uniform { bound }),
            hidden,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let pre = ops::add(&self.input.forward(x), &self.recurrent.forward(h));
        lstm_update(&pre, c, self.hidden, 1)
    }
}

/// Number of trainable scalars behind a set of parameters.
pub fn count_params<T: Real>(params: &[Param<T>]) -> usize {
    params.iter().filter(|p| p.trainable()).map(|p| p.numel()).sum()
}
