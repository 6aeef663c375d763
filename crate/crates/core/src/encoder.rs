//! Interchangeable feature encoders.
//!
//! Every variant produces the same contract: three skip maps at full, half
//! and quarter resolution with `[b, 2b, 4b]` channels, and a bottleneck at
//! one eighth resolution with `8b` channels (`b` = base channels, 64 by
//! default).

use std::path::Path;

use autograd::{ops, Init, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_params_from_archive;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvBlock, FeatureMap, LayerNorm, Linear, ModeFlag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    Vanilla,
    Resnet,
    Hybrid,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 3] = [EncoderVariant::Vanilla, EncoderVariant::Resnet, EncoderVariant::Hybrid];

    /// Single-letter label used in result tables.
    pub fn letter(self) -> &'static str {
        match self {
            EncoderVariant::Vanilla => "V",
            EncoderVariant::Resnet => "R",
            EncoderVariant::Hybrid => "H",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            embed_dim: 256,
            layers: 4,
            heads: 4,
            mlp_ratio: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub in_channels: usize,
    pub base_channels: usize,
    pub bottleneck_channels: usize,
    /// Input height and width; fixes the ViT token grid.
    pub input_size: [usize; 2],
    #[serde(default)]
    pub vit: VitConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Vanilla,
            in_channels: 1,
            base_channels: 64,
            bottleneck_channels: 512,
            input_size: [256, 256],
            vit: VitConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn skip_channels(&self) -> [usize; 3] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::config("encoder channel counts must be positive"));
        }
        if self.bottleneck_channels != 8 * self.base_channels {
            return Err(Error::config(format!(
                "channel plan doubles per stage: bottleneck must be 8 x {} = {}, got {}",
                self.base_channels,
                8 * self.base_channels,
                self.bottleneck_channels
            )));
        }
        if self.input_size.iter().any(|d| *d == 0 || d % 8 != 0) {
            return Err(Error::config("input size must be a positive multiple of 8"));
        }
        if self.variant == EncoderVariant::Hybrid {
            let v = &self.vit;
            if v.heads == 0 || v.embed_dim == 0 || v.embed_dim % v.heads != 0 {
                return Err(Error::config("ViT embed_dim must be divisible by heads"));
            }
            if v.mlp_ratio == 0 {
                return Err(Error::config("ViT mlp_ratio must be positive"));
            }
        }
        Ok(())
    }
}

/// Bottleneck plus skips ordered from finest to coarsest.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T: Real> {
    pub bottleneck: FeatureMap<T>,
    pub skips: Vec<FeatureMap<T>>,
}

#[derive(Debug, Clone)]
struct VanillaStages<T: Real> {
    blocks: [ConvBlock<T>; 3],
}

impl<T: Real> VanillaStages<T> {
    fn new(vs: &ParamStore<T>, cfg: &EncoderConfig) -> Self {
        let [c1, c2, c3] = cfg.skip_channels();
        VanillaStages {
            blocks: [
                ConvBlock::new(&vs.pp("block1"), cfg.in_channels, c1),
                ConvBlock::new(&vs.pp("block2"), c1, c2),
                ConvBlock::new(&vs.pp("block3"), c2, c3),
            ],
        }
    }

    /// Skips plus the pooled output of the third block.
    fn forward(&self, x: &Tensor<T>) -> (Vec<Tensor<T>>, Tensor<T>) {
        let mut skips = Vec::with_capacity(3);
        let mut h = x.clone();
        for b in &self.blocks {
            let s = b.forward(&h);
            h = ops::max_pool2d(&s, 2);
            skips.push(s);
        }
        (skips, h)
    }
}

#[derive(Debug, Clone)]
struct BasicBlock<T: Real> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    down: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Real> BasicBlock<T> {
    fn new(vs: &ParamStore<T>, cin: usize, cout: usize, stride: usize, mode: &ModeFlag) -> Self {
        let down = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(&vs.pp("down"), cin, cout, 1, stride, false),
                BatchNorm2d::new(&vs.pp("down_bn"), cout, mode),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(&vs.pp("conv1"), cin, cout, 3, stride, false),
            bn1: BatchNorm2d::new(&vs.pp("bn1"), cout, mode),
            conv2: Conv2d::new(&vs.pp("conv2"), cout, cout, 3, 1, false),
            bn2: BatchNorm2d::new(&vs.pp("bn2"), cout, mode),
            down,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = ops::relu(&self.bn1.forward(&self.conv1.forward(x)));
        let h = self.bn2.forward(&self.conv2.forward(&h));
        let short = match &self.down {
            Some((c, bn)) => bn.forward(&c.forward(x)),
            None => x.clone(),
        };
        ops::relu(&ops::add(&h, &short))
    }
}

/// 18-layer residual network: stem plus four stages of two basic blocks.
/// The stem keeps full resolution so stages land on the `H, H/2, H/4, H/8`
/// grid shared with the other encoders.
#[derive(Debug, Clone)]
struct ResNetEncoder<T: Real> {
    stem: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stages: [[BasicBlock<T>; 2]; 4],
}

impl<T: Real> ResNetEncoder<T> {
    fn new(vs: &ParamStore<T>, cfg: &EncoderConfig, mode: &ModeFlag) -> Self {
        let b = cfg.base_channels;
        let widths = [b, 2 * b, 4 * b, 8 * b];
        let stem = Conv2d::new(&vs.pp("stem"), cfg.in_channels, b, 7, 1, false);
        let stem_bn = BatchNorm2d::new(&vs.pp("stem_bn"), b, mode);
        let stage = |i: usize| {
            let cin = if i == 0 { b } else { widths[i - 1] };
            let stride = if i == 0 { 1 } else { 2 };
            let s = vs.pp(&format!("layer{}", i + 1));
            [
                BasicBlock::new(&s.pp("0"), cin, widths[i], stride, mode),
                BasicBlock::new(&s.pp("1"), widths[i], widths[i], 1, mode),
            ]
        };
        ResNetEncoder {
            stem,
            stem_bn,
            stages: [stage(0), stage(1), stage(2), stage(3)],
        }
    }

    fn forward(&self, x: &Tensor<T>) -> EncoderOutput<T> {
        let mut h = ops::relu(&self.stem_bn.forward(&self.stem.forward(x)));
        let mut skips = Vec::with_capacity(3);
        for (i, stage) in self.stages.iter().enumerate() {
            for blk in stage {
                h = blk.forward(&h);
            }
            if i < 3 {
                skips.push(h.clone());
            }
        }
        EncoderOutput { bottleneck: h, skips }
    }
}

#[derive(Debug, Clone)]
struct TransformerLayer<T: Real> {
    ln1: LayerNorm<T>,
    qkv: Linear<T>,
    proj: Linear<T>,
    ln2: LayerNorm<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    heads: usize,
}

impl<T: Real> TransformerLayer<T> {
    fn new(vs: &ParamStore<T>, cfg: &VitConfig) -> Self {
        let e = cfg.embed_dim;
        let init = Init::Normal { std: 0.02 };
        TransformerLayer {
            ln1: LayerNorm::new(&vs.pp("ln1"), e),
            qkv: Linear::new(&vs.pp("qkv"), e, 3 * e, true, init),
            proj: Linear::new(&vs.pp("proj"), e, e, true, init),
            ln2: LayerNorm::new(&vs.pp("ln2"), e),
            fc1: Linear::new(&vs.pp("fc1"), e, cfg.mlp_ratio * e, true, init),
            fc2: Linear::new(&vs.pp("fc2"), cfg.mlp_ratio * e, e, true, init),
            heads: cfg.heads,
        }
    }

    /// `x`: (B·N, E) token rows belonging to `batch` images of `n` tokens.
    fn forward(&self, x: &Tensor<T>, batch: usize, n: usize) -> Tensor<T> {
        let e = x.dim(1);
        let (heads, dh) = (self.heads, e / self.heads);
        let qkv = self.qkv.forward(&self.ln1.forward(x));
        // (B, N, 3, heads, dh) -> (3, B, heads, N, dh)
        let qkv = ops::permute(&ops::reshape(&qkv, &[batch, n, 3, heads, dh]), &[2, 0, 3, 1, 4]);
        let part = |i: usize| ops::reshape(&ops::narrow(&qkv, 0, i, 1), &[batch * heads, n, dh]);
        let (q, k, v) = (part(0), part(1), part(2));
        let scores = ops::scale(&ops::matmul(&q, &k, false, true), T::of(1.0 / (dh as f64).sqrt()));
        let att = ops::matmul(&ops::softmax(&scores), &v, false, false);
        let att = ops::permute(&ops::reshape(&att, &[batch, heads, n, dh]), &[0, 2, 1, 3]);
        let x = ops::add(x, &self.proj.forward(&ops::reshape(&att, &[batch * n, e])));
        let mlp = self.fc2.forward(&ops::gelu(&self.fc1.forward(&self.ln2.forward(&x))));
        ops::add(&x, &mlp)
    }
}

/// Vanilla stages followed by a ViT over the eighth-resolution grid
/// (1×1 patches) and a 1×1 projection to the bottleneck width.
#[derive(Debug, Clone)]
struct HybridEncoder<T: Real> {
    stages: VanillaStages<T>,
    embed: Conv2d<T>,
    pos: autograd::Param<T>,
    layers: Vec<TransformerLayer<T>>,
    norm: LayerNorm<T>,
    out: Conv2d<T>,
    grid: (usize, usize),
}

impl<T: Real> HybridEncoder<T> {
    fn new(vs: &ParamStore<T>, cfg: &EncoderConfig) -> Self {
        let stages = VanillaStages::new(vs, cfg);
        let v = vs.pp("vit");
        let e = cfg.vit.embed_dim;
        let grid = (cfg.input_size[0] / 8, cfg.input_size[1] / 8);
        HybridEncoder {
            stages,
            embed: Conv2d::new(&v.pp("embed"), cfg.skip_channels()[2], e, 1, 1, true),
            pos: v.param("pos", &[1, grid.0 * grid.1, e], Init::Normal { std: 0.02 }),
            layers: (0..cfg.vit.layers)
                .map(|i| TransformerLayer::new(&v.pp(&format!("layer{i}")), &cfg.vit))
                .collect(),
            norm: LayerNorm::new(&v.pp("norm"), e),
            out: Conv2d::new(&v.pp("out"), e, cfg.bottleneck_channels, 1, 1, true),
            grid,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> EncoderOutput<T> {
        let (skips, pooled) = self.stages.forward(x);
        let b = x.dim(0);
        let (gh, gw) = self.grid;
        let n = gh * gw;
        let emb = self.embed.forward(&pooled);
        let e = emb.dim(1);
        let tokens = ops::permute(&ops::reshape(&emb, &[b, e, n]), &[0, 2, 1]);
        let tokens = ops::add_bcast(&tokens, &self.pos.tensor());
        let mut h = ops::reshape(&tokens, &[b * n, e]);
        for layer in &self.layers {
            h = layer.forward(&h, b, n);
        }
        let h = self.norm.forward(&h);
        let grid = ops::reshape(&ops::permute(&ops::reshape(&h, &[b, n, e]), &[0, 2, 1]), &[b, e, gh, gw]);
        EncoderOutput {
            bottleneck: ops::relu(&self.out.forward(&grid)),
            skips,
        }
    }
}

#[derive(Debug, Clone)]
enum Backbone<T: Real> {
    Vanilla {
        stages: VanillaStages<T>,
        bottleneck: ConvBlock<T>,
    },
    Resnet(ResNetEncoder<T>),
    Hybrid(Box<HybridEncoder<T>>),
}

#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    cfg: EncoderConfig,
    backbone: Backbone<T>,
}

impl<T: Real> Encoder<T> {
    /// Registers the encoder's parameters in `vs` (creation order is fixed,
    /// so a given store seed always yields the same weights).
    pub fn new(vs: &ParamStore<T>, cfg: &EncoderConfig, mode: &ModeFlag) -> Result<Self> {
        cfg.validate()?;
        let backbone = match cfg.variant {
            EncoderVariant::Vanilla => {
                let stages = VanillaStages::new(vs, cfg);
                let bottleneck = ConvBlock::new(&vs.pp("bottleneck"), cfg.skip_channels()[2], cfg.bottleneck_channels);
                Backbone::Vanilla { stages, bottleneck }
            }
            EncoderVariant::Resnet => Backbone::Resnet(ResNetEncoder::new(vs, cfg, mode)),
            EncoderVariant::Hybrid => Backbone::Hybrid(Box::new(HybridEncoder::new(vs, cfg))),
        };
        Ok(Encoder {
            cfg: cfg.clone(),
            backbone,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 {
            return Err(Error::shape(format!("encoder input must be NCHW, got {:?}", x.dims())));
        }
        if x.dim(1) != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "encoder expects {} input channels, got {}",
                self.cfg.in_channels,
                x.dim(1)
            )));
        }
        let (h, w) = (x.dim(2), x.dim(3));
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape(format!("spatial dims {h}x{w} not divisible by 8")));
        }
        if self.cfg.variant == EncoderVariant::Hybrid && [h, w] != self.cfg.input_size {
            return Err(Error::shape(format!(
                "hybrid encoder is built for {:?} inputs, got {h}x{w}",
                self.cfg.input_size
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<EncoderOutput<T>> {
        self.check_input(x)?;
        Ok(match &self.backbone {
            Backbone::Vanilla { stages, bottleneck } => {
                let (skips, pooled) = stages.forward(x);
                EncoderOutput {
                    bottleneck: bottleneck.forward(&pooled),
                    skips,
                }
            }
            Backbone::Resnet(r) => r.forward(x),
            Backbone::Hybrid(h) => h.forward(x),
        })
    }
}

/// Builds a stand-alone encoder with its own parameter store (names
/// prefixed `enc.`), optionally initialised from a weights archive.
pub fn build_encoder<T: Real>(
    cfg: &EncoderConfig,
    init_seed: u64,
    pretrained_weights: Option<&Path>,
) -> Result<(Encoder<T>, ParamStore<T>)> {
    if pretrained_weights.is_some() && cfg.variant == EncoderVariant::Vanilla {
        return Err(Error::config(
            "pretrained weights are only supported for the resnet and hybrid encoders",
        ));
    }
    let store = ParamStore::new(init_seed);
    let enc = Encoder::new(&store.pp("enc"), cfg, &ModeFlag::default())?;
    if let Some(path) = pretrained_weights {
        load_params_from_archive(&store.all(), path, "enc.")?;
    }
    Ok((enc, store))
}
