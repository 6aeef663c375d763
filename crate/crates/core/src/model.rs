//! Encoder + temporal block + decoder as one stateful sequence model, with
//! checkpoint persistence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use autograd::{AdamW, ArchiveEntry, Param, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::baselines::{block_forward, gate_skips, Block, BlockConfig, BlockKind, BlockState};
use crate::checkpoint::{assign_params, from_array, param_entries, read_entries, to_array, write_entries};
use crate::decoder::{decode, Decoder, DecoderConfig};
use crate::encoder::{Encoder, EncoderConfig, EncoderVariant};
use crate::error::{Error, Result};
use crate::layers::{count_params, FeatureMap, ModeFlag};

/// Bumped whenever the parameter layout or sidecar schema changes.
pub const CHECKPOINT_VERSION: u32 = 1;

const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub block: BlockConfig,
    pub decoder: DecoderConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Consistent configuration for one encoder/block pairing.
    pub fn new(variant: EncoderVariant, kind: BlockKind, base_channels: usize, input_size: usize, seed: u64) -> Self {
        let block = BlockConfig::new(kind);
        let encoder = EncoderConfig {
            variant,
            in_channels: if kind == BlockKind::Stack { block.stack_depth } else { 1 },
            base_channels,
            bottleneck_channels: 8 * base_channels,
            input_size: [input_size, input_size],
            ..Default::default()
        };
        ModelConfig {
            encoder,
            block,
            decoder: DecoderConfig::for_base(base_channels),
            seed,
        }
    }

    /// Full-size configuration (256×256 input, 64 base channels).
    pub fn canonical(variant: EncoderVariant, kind: BlockKind, seed: u64) -> Self {
        Self::new(variant, kind, 64, 256, seed)
    }

    /// Short label such as `V+Ours` or `R+(d)`.
    pub fn label(&self) -> String {
        format!("{}{}", self.encoder.variant.letter(), self.block.kind.table_suffix())
    }

    /// Directory-safe name such as `vanilla-kf`.
    pub fn slug(&self) -> String {
        let v = match self.encoder.variant {
            EncoderVariant::Vanilla => "vanilla",
            EncoderVariant::Resnet => "resnet",
            EncoderVariant::Hybrid => "hybrid",
        };
        format!("{v}-{}", self.block.kind.key())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.block.validate()?;
        let want_in = if self.block.kind == BlockKind::Stack {
            self.block.stack_depth
        } else {
            1
        };
        if self.encoder.in_channels != want_in {
            return Err(Error::config(format!(
                "{} block requires {want_in} encoder input channels, got {}",
                self.block.kind.key(),
                self.encoder.in_channels
            )));
        }
        let skips = self.encoder.skip_channels();
        let mut rev: Vec<usize> = skips.to_vec();
        rev.reverse();
        if self.decoder.channels != rev {
            return Err(Error::config(format!(
                "decoder plan {:?} must mirror skip channels {:?}",
                self.decoder.channels, rev
            )));
        }
        Ok(())
    }
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

/// Per-sequence state. Only obtainable from [`SegModel::reset_sequence`] or
/// a previous [`SegModel::forward_frame`] on the same model.
#[derive(Debug, Clone)]
pub struct SequenceModelState<T: Real> {
    model_id: u64,
    pub block: Option<BlockState<T>>,
    pub last_frame: Option<usize>,
}

impl<T: Real> SequenceModelState<T> {
    /// A state that belongs to no model; every recurrent forward rejects it.
    pub fn detached() -> Self {
        SequenceModelState {
            model_id: 0,
            block: None,
            last_frame: None,
        }
    }
}

pub struct SegModel<T: Real> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    mode: ModeFlag,
    id: u64,
    pub encoder: Encoder<T>,
    pub block: Block<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> std::fmt::Debug for SegModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegModel")
            .field("config", &self.cfg)
            .field("params", &self.num_params())
            .finish()
    }
}

impl<T: Real> SegModel<T> {
    /// Parameters are created in a fixed order from a store seeded with
    /// `cfg.seed`: `enc.*`, then the block (`kf.*`, `attn.*`, …), then
    /// `dec.*`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(cfg.seed);
        let mode = ModeFlag::default();
        let encoder = Encoder::new(&store.pp("enc"), &cfg.encoder, &mode)?;
        let [h, w] = cfg.encoder.input_size;
        let block = Block::new(
            &store,
            &cfg.block,
            cfg.encoder.bottleneck_channels,
            [h / 8, w / 8],
            &cfg.encoder.skip_channels(),
        )?;
        let decoder = Decoder::new(&store.pp("dec"), &cfg.decoder, cfg.encoder.bottleneck_channels)?;
        Ok(SegModel {
            cfg: cfg.clone(),
            store,
            mode,
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            encoder,
            block,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// All parameters and buffers in creation order.
    pub fn params(&self) -> Vec<Param<T>> {
        self.store.all()
    }

    pub fn trainable_params(&self) -> Vec<Param<T>> {
        self.store.trainable()
    }

    pub fn num_params(&self) -> usize {
        count_params(&self.store.all())
    }

    /// Parameters whose name starts with `prefix` (e.g. `"kf.f3."`).
    pub fn params_with_prefix(&self, prefix: &str) -> Vec<Param<T>> {
        self.store.all().into_iter().filter(|p| p.name().starts_with(prefix)).collect()
    }

    pub fn set_training(&self, on: bool) {
        self.mode.set_training(on);
    }

    pub fn in_channels(&self) -> usize {
        self.cfg.encoder.in_channels
    }

    pub fn is_recurrent(&self) -> bool {
        self.block.is_recurrent()
    }

    /// Fresh sequence state. With `first` (the first frame input) the block
    /// state is materialised immediately (KF: `x_prev = z_0`; LSTMs: zero
    /// maps); without it, it is materialised from the first observation on
    /// the first `forward_frame`, which is equivalent.
    pub fn reset_sequence(&self, first: Option<&Tensor<T>>) -> Result<SequenceModelState<T>> {
        let block = match (self.block.is_recurrent(), first) {
            (false, _) => None,
            (true, None) => self.block.initial_state(),
            (true, Some(x)) => {
                let z0 = self.encoder.encode(x)?.bottleneck;
                self.block.reset_with(&z0)?
            }
        };
        Ok(SequenceModelState {
            model_id: self.id,
            block,
            last_frame: None,
        })
    }

    fn check_state(&self, state: &SequenceModelState<T>, frame_index: usize) -> Result<()> {
        if !self.block.is_recurrent() {
            return Ok(());
        }
        if state.model_id != self.id {
            return Err(Error::State(if state.model_id == 0 {
                "sequence state was not created by reset_sequence".into()
            } else {
                "sequence state belongs to a different model".into()
            }));
        }
        if let Some(last) = state.last_frame {
            if frame_index <= last {
                return Err(Error::State(format!(
                    "stale state: frame {frame_index} after frame {last}"
                )));
            }
        }
        Ok(())
    }

    /// encode → block → decode for one frame input `(B, in_channels, H, W)`.
    pub fn forward_frame(
        &self,
        state: &SequenceModelState<T>,
        frame_index: usize,
        input: &Tensor<T>,
    ) -> Result<(FeatureMap<T>, SequenceModelState<T>)> {
        self.check_state(state, frame_index)?;
        let enc = self.encoder.encode(input)?;
        let (x_t, block_state) = block_forward(&self.block, state.block.as_ref(), &enc.bottleneck)?;
        let skips = match self.block.attention() {
            Some(g) => gate_skips(g, &enc.skips, &enc.bottleneck)?,
            None => enc.skips,
        };
        let logits = decode(&self.decoder, &x_t, &skips)?;
        Ok((
            logits,
            SequenceModelState {
                model_id: self.id,
                block: block_state,
                last_frame: Some(frame_index),
            },
        ))
    }
}

/// Sidecar metadata written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub epoch: usize,
    pub fold: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub metrics: serde_json::Map<String, serde_json::Value>,
}

impl CheckpointMeta {
    pub fn new(config: &ModelConfig) -> Self {
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            epoch: 0,
            fold: None,
            seed: config.seed,
            lr: None,
            metrics: Default::default(),
        }
    }
}

/// `model.ckpt` → `model.json`.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

/// Optimiser moments keyed as in [`AdamW::state`].
pub type OptimizerState<T> = HashMap<String, Vec<T>>;

/// Writes the parameter archive (with optimiser state under `optim.*`) and
/// its JSON sidecar.
pub fn save_checkpoint<T: Real>(
    model: &SegModel<T>,
    optimizer: Option<&AdamW<T>>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    if meta.config != model.cfg {
        return Err(Error::config("checkpoint metadata describes a different model"));
    }
    let mut entries = param_entries(&model.params());
    if let Some(opt) = optimizer {
        entries.extend(opt.state().into_iter().map(|(name, dims, data)| ArchiveEntry {
            name: format!("{OPTIM_PREFIX}{name}"),
            dims,
            data: to_array(&data),
        }));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_entries(path, &entries)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("metadata serialises");
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::VersionMismatch(format!("{}: {e}", side.display())))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    Ok(meta)
}

/// Restores a model (and optimiser state, if stored). With `expected`, the
/// stored configuration must match it exactly.
pub fn load_checkpoint<T: Real>(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(SegModel<T>, OptimizerState<T>, CheckpointMeta)> {
    let meta = read_meta(path)?;
    if let Some(want) = expected {
        if *want != meta.config {
            return Err(Error::VersionMismatch("stored model configuration differs from the requested one".into()));
        }
    }
    let model = SegModel::new(&meta.config)?;
    let entries = read_entries(path)?;
    let params = model.params();
    let n_model = entries.iter().filter(|e| !e.name.starts_with(OPTIM_PREFIX)).count();
    if n_model != params.len() {
        return Err(Error::VersionMismatch(format!(
            "archive holds {n_model} model arrays, configuration defines {}",
            params.len()
        )));
    }
    assign_params(&params, &entries, "").map_err(|e| Error::VersionMismatch(e.to_string()))?;
    let optim = entries
        .iter()
        .filter_map(|e| {
            e.name
                .strip_prefix(OPTIM_PREFIX)
                .map(|n| (n.to_string(), from_array::<T>(&e.data)))
        })
        .collect();
    Ok((model, optim, meta))
}

/// `(B, C, H, W)` input tensor from a single grayscale frame.
pub fn frame_tensor<T: Real>(frame: &crate::datamodel::ImageFrame) -> Tensor<T> {
    Tensor::from_vec(
        frame.pixels.iter().map(|p| T::of(*p as f64)).collect(),
        &[1, 1, frame.height, frame.width],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: BlockKind) -> ModelConfig {
        let mut c = ModelConfig::new(EncoderVariant::Vanilla, kind, 1, 16, 5);
        c.block.lstm_hidden = 4;
        c
    }

    #[test]
    fn stack_requires_matching_channels() {
        let mut c = tiny(BlockKind::Stack);
        assert_eq!(c.encoder.in_channels, 5);
        c.encoder.in_channels = 1;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = tiny(BlockKind::Kf);
        c.encoder.in_channels = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(tiny(BlockKind::Kf).label(), "V+Ours");
        assert_eq!(tiny(BlockKind::None).label(), "V");
        assert_eq!(tiny(BlockKind::Lstm).slug(), "vanilla-lstm");
    }

    #[test]
    fn detached_state_rejected_for_recurrent() {
        let m = SegModel::<f64>::new(&tiny(BlockKind::Kf)).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(matches!(
            m.forward_frame(&SequenceModelState::detached(), 0, &x),
            Err(Error::State(_))
        ));
        let other = SegModel::<f64>::new(&tiny(BlockKind::Kf)).unwrap();
        let s = other.reset_sequence(None).unwrap();
        assert!(matches!(m.forward_frame(&s, 0, &x), Err(Error::State(_))));
        let s = m.reset_sequence(None).unwrap();
        let (_, s1) = m.forward_frame(&s, 0, &x).unwrap();
        assert!(matches!(m.forward_frame(&s1, 0, &x), Err(Error::State(_))));
    }

    #[test]
    fn stateless_ignores_state_origin() {
        let m = SegModel::<f64>::new(&tiny(BlockKind::None)).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        let (y, _) = m.forward_frame(&SequenceModelState::detached(), 0, &x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 16, 16]);
    }
}
