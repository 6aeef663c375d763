//! Skip-connected upsampling decoder and logit binarisation.

use autograd::{ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::MaskFrame;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvBlock, ConvTranspose2d, FeatureMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Output channels per stage, coarsest first (`[4b, 2b, b]`).
    pub channels: Vec<usize>,
}

impl DecoderConfig {
    /// Mirror of the encoder's skip plan.
    pub fn for_base(base: usize) -> Self {
        DecoderConfig {
            channels: vec![4 * base, 2 * base, base],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderStage<T: Real> {
    pub up: ConvTranspose2d<T>,
    pub conv: ConvBlock<T>,
}

#[derive(Debug, Clone)]
pub struct Decoder<T: Real> {
    pub stages: Vec<DecoderStage<T>>,
    pub head: Conv2d<T>,
    cfg: DecoderConfig,
}

/// Initial foreground probability of the output head: the bias starts at
/// the matching logit so training does not spend its first steps learning
/// that needles are rare.
pub const FOREGROUND_PRIOR: f64 = 0.01;

impl<T: Real> Decoder<T> {
    pub fn new(vs: &ParamStore<T>, cfg: &DecoderConfig, bottleneck_channels: usize) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.channels.contains(&0) {
            return Err(Error::config("decoder needs at least one stage with positive width"));
        }
        let mut cin = bottleneck_channels;
        let stages = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = vs.pp(&format!("stage{i}"));
                // upsample to c channels, concatenate a c-channel skip
                let stage = DecoderStage {
                    up: ConvTranspose2d::new(&s.pp("up"), cin, c, 2),
                    conv: ConvBlock::new(&s.pp("conv"), 2 * c, c),
                };
                cin = c;
                stage
            })
            .collect();
        let head = Conv2d::new(&vs.pp("head"), cin, 1, 1, 1, true);
        if let Some(b) = &head.bias {
            let prior = T::of((FOREGROUND_PRIOR / (1.0 - FOREGROUND_PRIOR)).ln());
            b.update(|v| v.fill(prior));
        }
        Ok(Decoder {
            stages,
            head,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }
}

/// `skips` are ordered finest first, as produced by the encoder.
pub fn decode<T: Real>(dec: &Decoder<T>, x_t: &FeatureMap<T>, skips: &[FeatureMap<T>]) -> Result<FeatureMap<T>> {
    if skips.len() != dec.stages.len() {
        return Err(Error::shape(format!(
            "decoder has {} stages but got {} skips",
            dec.stages.len(),
            skips.len()
        )));
    }
    let mut h = x_t.clone();
    for (stage, skip) in dec.stages.iter().zip(skips.iter().rev()) {
        let up = stage.up.forward(&h);
        if up.dims() != skip.dims() {
            return Err(Error::shape(format!(
                "upsampled map {:?} does not match skip {:?}",
                up.dims(),
                skip.dims()
            )));
        }
        h = stage.conv.forward(&autograd::ops::cat(&[up, skip.clone()], 1));
    }
    Ok(dec.head.forward(&h))
}

/// Foreground iff `sigmoid(logit) >= threshold`, evaluated in logit space
/// so that a logit of exactly 0 is foreground at the default 0.5.
pub fn binarize<T: Real>(logits: &Tensor<T>, threshold: f64) -> Result<Vec<MaskFrame>> {
    if logits.rank() != 4 || logits.dim(1) != 1 {
        return Err(Error::shape(format!("expected (B, 1, H, W) logits, got {:?}", logits.dims())));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold must lie in (0, 1)"));
    }
    let cut = (threshold / (1.0 - threshold)).ln();
    let (b, h, w) = (logits.dim(0), logits.dim(2), logits.dim(3));
    let data = logits.data();
    (0..b)
        .map(|i| {
            let px = data[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|v| u8::from(v.as_f64() >= cut))
                .collect();
            MaskFrame::new(i, h, w, px)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_rules() {
        let t = Tensor::<f32>::from_vec(vec![-5.0, 5.0, 0.0, -1e-7], &[1, 1, 2, 2]);
        let m = binarize(&t, 0.5).unwrap();
        assert_eq!(m[0].pixels, vec![0, 1, 1, 0]);
        let m = binarize(&t, 0.9).unwrap();
        assert_eq!(m[0].pixels, vec![0, 1, 0, 0]);
    }

    #[test]
    fn skip_count_checked() {
        let vs = ParamStore::<f32>::new(0);
        let dec = Decoder::new(&vs, &DecoderConfig::for_base(1), 8).unwrap();
        let x = Tensor::zeros(&[1, 8, 2, 2]);
        let skips = vec![Tensor::zeros(&[1, 1, 16, 16]), Tensor::zeros(&[1, 2, 8, 8])];
        assert!(matches!(decode(&dec, &x, &skips), Err(Error::Shape(_))));
    }
}
