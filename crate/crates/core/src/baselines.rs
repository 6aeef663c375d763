//! Comparison blocks sharing the encoder/decoder: no block, attention-gated
//! skips, stacked input frames, a fully connected LSTM, a ConvLSTM, and the
//! KF block itself.

use autograd::{ops, Init, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::VideoSequence;
use crate::error::{Error, Result};
use crate::kfblock::{KfBlock, KfConfig, KfState};
use crate::layers::{Conv2d, ConvLstmCell, FeatureMap, Linear, LstmCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    None,
    Attn,
    Stack,
    Lstm,
    Convlstm,
    Kf,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::None,
        BlockKind::Attn,
        BlockKind::Stack,
        BlockKind::Lstm,
        BlockKind::Convlstm,
        BlockKind::Kf,
    ];

    pub fn is_recurrent(self) -> bool {
        matches!(self, BlockKind::Lstm | BlockKind::Convlstm | BlockKind::Kf)
    }

    /// Config key, e.g. `"convlstm"`.
    pub fn key(self) -> &'static str {
        match self {
            BlockKind::None => "none",
            BlockKind::Attn => "attn",
            BlockKind::Stack => "stack",
            BlockKind::Lstm => "lstm",
            BlockKind::Convlstm => "convlstm",
            BlockKind::Kf => "kf",
        }
    }

    /// Row suffix in result tables: `(b)`…`(e)`, `Ours`, or nothing.
    pub fn table_suffix(self) -> &'static str {
        match self {
            BlockKind::None => "",
            BlockKind::Attn => "+(b)",
            BlockKind::Stack => "+(c)",
            BlockKind::Lstm => "+(d)",
            BlockKind::Convlstm => "+(e)",
            BlockKind::Kf => "+Ours",
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::config(format!("unknown block kind {s:?}")))
    }
}

fn default_stack_depth() -> usize {
    5
}
fn default_lstm_reduce() -> usize {
    4
}
fn default_lstm_hidden() -> usize {
    512
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kind: BlockKind,
    #[serde(default = "default_stack_depth")]
    pub stack_depth: usize,
    /// Channels kept by the 1×1 reduction before the LSTM flattens the map.
    #[serde(default = "default_lstm_reduce")]
    pub lstm_reduce: usize,
    #[serde(default = "default_lstm_hidden")]
    pub lstm_hidden: usize,
    #[serde(default = "default_true")]
    pub bounded_gain: bool,
}

impl BlockConfig {
    pub fn new(kind: BlockKind) -> Self {
        BlockConfig {
            kind,
            stack_depth: default_stack_depth(),
            lstm_reduce: default_lstm_reduce(),
            lstm_hidden: default_lstm_hidden(),
            bounded_gain: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack_depth == 0 || self.lstm_reduce == 0 || self.lstm_hidden == 0 {
            return Err(Error::config("block sizes must be positive"));
        }
        Ok(())
    }
}

/// Additive attention gate for one skip connection.
#[derive(Debug, Clone)]
pub struct AttentionGate<T: Real> {
    pub theta: Conv2d<T>,
    pub phi: Conv2d<T>,
    pub psi: Conv2d<T>,
}

impl<T: Real> AttentionGate<T> {
    fn new(vs: &ParamStore<T>, skip_c: usize, gate_c: usize) -> Self {
        let inter = (skip_c / 2).max(1);
        AttentionGate {
            theta: Conv2d::new(&vs.pp("theta"), skip_c, inter, 1, 1, false),
            phi: Conv2d::new(&vs.pp("phi"), gate_c, inter, 1, 1, true),
            psi: Conv2d::new(&vs.pp("psi"), inter, 1, 1, 1, true),
        }
    }

    /// Coefficient map `(B, 1, H, W)` in (0, 1). The gating projection runs
    /// at the coarse resolution before nearest upsampling (equivalent for
    /// 1×1 convolutions, and far cheaper).
    pub fn coefficients(&self, skip: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, gh) = (skip.dim(2), gate.dim(2));
        if gh == 0 || h % gh != 0 || skip.dim(3) != gate.dim(3) * (h / gh) || skip.dim(0) != gate.dim(0) {
            return Err(Error::shape(format!(
                "skip {:?} is not an integer upsampling of gate {:?}",
                skip.dims(),
                gate.dims()
            )));
        }
        let mut g = self.phi.forward(gate);
        if h / gh > 1 {
            g = ops::upsample_nearest(&g, h / gh);
        }
        let a = ops::relu(&ops::add(&self.theta.forward(skip), &g));
        Ok(ops::sigmoid(&self.psi.forward(&a)))
    }

    pub fn forward(&self, skip: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
        let alpha = self.coefficients(skip, gate)?;
        Ok(ops::mul_bcast(skip, &alpha))
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGates<T: Real> {
    pub gates: Vec<AttentionGate<T>>,
}

impl<T: Real> AttentionGates<T> {
    pub fn new(vs: &ParamStore<T>, skip_channels: &[usize], bottleneck_channels: usize) -> Self {
        AttentionGates {
            gates: skip_channels
                .iter()
                .enumerate()
                .map(|(i, c)| AttentionGate::new(&vs.pp(&format!("gate{i}")), *c, bottleneck_channels))
                .collect(),
        }
    }
}

/// Multiplies every skip by its attention coefficients, gated by the
/// bottleneck.
pub fn gate_skips<T: Real>(
    gates: &AttentionGates<T>,
    skips: &[FeatureMap<T>],
    bottleneck: &FeatureMap<T>,
) -> Result<Vec<FeatureMap<T>>> {
    if skips.len() != gates.gates.len() {
        return Err(Error::shape(format!(
            "{} skips for {} attention gates",
            skips.len(),
            gates.gates.len()
        )));
    }
    gates.gates.iter().zip(skips).map(|(g, s)| g.forward(s, bottleneck)).collect()
}

/// Fully connected LSTM over a flattened, channel-reduced bottleneck.
#[derive(Debug, Clone)]
pub struct LstmBlock<T: Real> {
    pub reduce: Conv2d<T>,
    pub down: Linear<T>,
    pub cell: LstmCell<T>,
    pub up: Linear<T>,
    pub expand: Conv2d<T>,
    reduce_c: usize,
    spatial: [usize; 2],
}

impl<T: Real> LstmBlock<T> {
    fn new(vs: &ParamStore<T>, c: usize, spatial: [usize; 2], cfg: &BlockConfig) -> Self {
        let r = cfg.lstm_reduce;
        let flat = r * spatial[0] * spatial[1];
        let hdim = cfg.lstm_hidden;
        LstmBlock {
            reduce: Conv2d::new(&vs.pp("reduce"), c, r, 1, 1, true),
            down: Linear::new(&vs.pp("down"), flat, hdim, true, Init::KaimingNormal { fan_in: flat }),
            cell: LstmCell::new(&vs.pp("cell"), hdim, hdim),
            up: Linear::new(&vs.pp("up"), hdim, flat, true, Init::KaimingNormal { fan_in: hdim }),
            expand: Conv2d::new(&vs.pp("expand"), r, c, 1, 1, true),
            reduce_c: r,
            spatial,
        }
    }

    fn forward(&self, z: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let b = z.dim(0);
        let [sh, sw] = self.spatial;
        let v = ops::reshape(&self.reduce.forward(z), &[b, self.reduce_c * sh * sw]);
        let (h2, c2) = self.cell.forward(&self.down.forward(&v), h, c);
        let back = ops::reshape(&self.up.forward(&h2), &[b, self.reduce_c, sh, sw]);
        (self.expand.forward(&back), h2, c2)
    }
}

#[derive(Debug, Clone)]
pub enum Block<T: Real> {
    /// No block, or stacked input (stacking happens before the encoder).
    Identity,
    Attn(AttentionGates<T>),
    Lstm(Box<LstmBlock<T>>),
    ConvLstm(ConvLstmCell<T>),
    Kf(KfBlock<T>),
}

/// Recurrent state of one in-flight sequence. `Fresh` means "reset, but the
/// first observation has not been seen yet": it is materialised from the
/// first `z_t` (KF: `x_prev = z_0`; LSTMs: zero maps).
#[derive(Debug, Clone)]
pub enum BlockState<T: Real> {
    Fresh,
    Lstm { h: Tensor<T>, c: Tensor<T> },
    ConvLstm { h: Tensor<T>, c: Tensor<T> },
    Kf(KfState<T>),
}

impl<T: Real> Block<T> {
    /// `channels`/`spatial` describe the bottleneck map; `skip_channels` is
    /// only used by attention gates.
    pub fn new(
        vs: &ParamStore<T>,
        cfg: &BlockConfig,
        channels: usize,
        spatial: [usize; 2],
        skip_channels: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BlockKind::None | BlockKind::Stack => Block::Identity,
            BlockKind::Attn => Block::Attn(AttentionGates::new(&vs.pp("attn"), skip_channels, channels)),
            BlockKind::Lstm => Block::Lstm(Box::new(LstmBlock::new(&vs.pp("lstm"), channels, spatial, cfg))),
            BlockKind::Convlstm => Block::ConvLstm(ConvLstmCell::new(&vs.pp("convlstm"), channels, channels)),
            BlockKind::Kf => Block::Kf(KfBlock::new(
                &vs.pp("kf"),
                KfConfig {
                    channels,
                    bounded_gain: cfg.bounded_gain,
                },
            )?),
        })
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self, Block::Lstm(_) | Block::ConvLstm(_) | Block::Kf(_))
    }

    pub fn attention(&self) -> Option<&AttentionGates<T>> {
        match self {
            Block::Attn(g) => Some(g),
            _ => None,
        }
    }

    /// Initial state for a new sequence (`None` for stateless blocks).
    pub fn initial_state(&self) -> Option<BlockState<T>> {
        self.is_recurrent().then_some(BlockState::Fresh)
    }

    /// Concrete initial state from the first observation `z0`.
    pub fn reset_with(&self, z0: &FeatureMap<T>) -> Result<Option<BlockState<T>>> {
        Ok(match self {
            Block::Identity | Block::Attn(_) => None,
            Block::Kf(kf) => Some(BlockState::Kf(kf.reset_state(z0)?)),
            Block::Lstm(l) => {
                let z = Tensor::zeros(&[z0.dim(0), l.cell.hidden]);
                Some(BlockState::Lstm { h: z.clone(), c: z })
            }
            Block::ConvLstm(cell) => {
                let z = Tensor::zeros(&[z0.dim(0), cell.hidden, z0.dim(2), z0.dim(3)]);
                Some(BlockState::ConvLstm { h: z.clone(), c: z })
            }
        })
    }
}

fn kind_name<T: Real>(b: &Block<T>) -> &'static str {
    match b {
        Block::Identity => "identity",
        Block::Attn(_) => "attention",
        Block::Lstm(_) => "lstm",
        Block::ConvLstm(_) => "convlstm",
        Block::Kf(_) => "kf",
    }
}

/// One block step on the bottleneck observation `z_t`.
pub fn block_forward<T: Real>(
    block: &Block<T>,
    state: Option<&BlockState<T>>,
    z_t: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, Option<BlockState<T>>)> {
    let state = match (block.is_recurrent(), state) {
        (false, None) => return Ok((z_t.clone(), None)),
        (false, Some(_)) => {
            return Err(Error::StateMismatch(format!(
                "{} block is stateless but a state was supplied",
                kind_name(block)
            )))
        }
        (true, None) => {
            return Err(Error::StateMismatch(format!(
                "{} block requires a recurrent state",
                kind_name(block)
            )))
        }
        (true, Some(BlockState::Fresh)) => block.reset_with(z_t)?.expect("recurrent block"),
        (true, Some(s)) => s.clone(),
    };
    let mismatch = || Error::StateMismatch(format!("state does not belong to a {} block", kind_name(block)));
    match (block, state) {
        (Block::Kf(kf), BlockState::Kf(s)) => {
            let (x, s) = kf.forward(&s, z_t)?;
            Ok((x, Some(BlockState::Kf(s))))
        }
        (Block::ConvLstm(cell), BlockState::ConvLstm { h, c }) => {
            if h.dims() != [z_t.dim(0), cell.hidden, z_t.dim(2), z_t.dim(3)] {
                return Err(Error::shape(format!("ConvLSTM state {:?} vs input {:?}", h.dims(), z_t.dims())));
            }
            let (h, c) = cell.forward(z_t, &h, &c);
            Ok((h.clone(), Some(BlockState::ConvLstm { h, c })))
        }
        (Block::Lstm(l), BlockState::Lstm { h, c }) => {
            if h.dim(0) != z_t.dim(0) || [z_t.dim(2), z_t.dim(3)] != l.spatial {
                return Err(Error::shape(format!("LSTM block built for {:?} maps, got {:?}", l.spatial, z_t.dims())));
            }
            let (x, h, c) = l.forward(z_t, &h, &c);
            Ok((x, Some(BlockState::Lstm { h, c })))
        }
        _ => Err(mismatch()),
    }
}

/// Frames `t-depth+1 ..= t` as channels of a `(1, depth, H, W)` tensor,
/// repeating frame 0 where the window runs off the start.
pub fn stack_frames<T: Real>(seq: &VideoSequence, t: usize, depth: usize) -> Result<Tensor<T>> {
    if depth == 0 {
        return Err(Error::config("stack depth must be at least 1"));
    }
    if t >= seq.len() {
        return Err(Error::Index {
            index: t,
            len: seq.len(),
        });
    }
    let (h, w) = seq.size();
    let mut data = Vec::with_capacity(depth * h * w);
    for k in 0..depth {
        let idx = (t + k + 1).saturating_sub(depth);
        data.extend(seq.frames[idx].pixels.iter().map(|p| T::of(*p as f64)));
    }
    Ok(Tensor::from_vec(data, &[1, depth, h, w]))
}
