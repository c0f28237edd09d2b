//! The gaze model: positional encoding, tokenization, per-token convolution
//! with channel attention, a self-attention encoder over tokens and a linear
//! head producing one sigmoid output per token.

mod checkpoint;
pub mod complexity;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use complexity::{conv_macs, count_flops, param_breakdown, token_conv_identity, FlopReport, StageFlops};
pub use config::{parse_key_values, ModelConfig, StageDims};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::channel_attention::ChannelAttentionCache;
use crate::nn::loss::{bce_with_logits, bce_with_logits_backward};
use crate::nn::ops::{hash_signs, adaptive_avg_pool, adaptive_avg_pool_backward, mean, mean_backward, relu, relu_backward, sigmoid_scalar};
use crate::nn::{ChannelAttention, Conv2d, EncoderCache, EncoderLayer, EncoderSpec, Grads, Linear, Registry, Scalar, Tensor};
use crate::tokenizer::{coord_grid, fold, tokenize_planes, unfold, untokenize_planes, PointVector};

/// Which parameters an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreezeMask {
    #[default]
    None,
    /// Freeze the self-attention encoder.
    Attention,
    /// Freeze everything except the head linear layer.
    AllExceptLinear,
}

impl FreezeMask {
    pub fn is_frozen(self, name: &str) -> bool {
        match self {
            FreezeMask::None => false,
            FreezeMask::Attention => name.starts_with("encoder."),
            FreezeMask::AllExceptLinear => !name.starts_with("head."),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FreezeMask::None => "none",
            FreezeMask::Attention => "attention",
            FreezeMask::AllExceptLinear => "all_except_linear",
        }
    }
}

impl std::str::FromStr for FreezeMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(FreezeMask::None),
            "attention" => Ok(FreezeMask::Attention),
            "all_except_linear" => Ok(FreezeMask::AllExceptLinear),
            other => Err(Error::Config(format!(
                "unknown freeze mask `{other}` (expected none, attention or all_except_linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
struct Layers {
    pos_conv: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
    channel_attention: ChannelAttention,
    encoders: Vec<EncoderLayer>,
    head: Linear,
}

fn encoder_spec(cfg: &ModelConfig) -> EncoderSpec {
    EncoderSpec {
        d_model: cfg.d_model(),
        heads: cfg.heads,
        ffn_hidden: cfg.ffn_width(),
        symmetric_qk: cfg.symmetric_qk,
    }
}

impl Layers {
    fn register<F: Scalar>(cfg: &ModelConfig, reg: &mut Registry<F>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (c, k, s, p) = (cfg.conv_channels, cfg.conv_kernel, cfg.conv_stride, cfg.conv_padding);
        let pos_conv = Conv2d::register(reg, "pos_conv", 2, 1, 1, 1, 0, rng)?;
        let conv1 = Conv2d::register(reg, "conv1", 3, c, k, s, p, rng)?;
        let conv2 = Conv2d::register(reg, "conv2", c, c, k, s, p, rng)?;
        let channel_attention = ChannelAttention::register(reg, "channel_attention", c, cfg.channel_reduction, cfg.plain_channel_attention, rng)?;
        let encoders = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::register(reg, &format!("encoder.{i}"), encoder_spec(cfg), rng))
            .collect::<Result<_>>()?;
        let head = Linear::register(reg, "head", cfg.tokens, cfg.tokens, rng)?;
        Ok(Layers {
            pos_conv,
            conv1,
            conv2,
            channel_attention,
            encoders,
            head,
        })
    }

    fn bind<F: Scalar>(cfg: &ModelConfig, reg: &Registry<F>) -> Result<Self> {
        let (s, p) = (cfg.conv_stride, cfg.conv_padding);
        Ok(Layers {
            pos_conv: Conv2d::bind(reg, "pos_conv", 1, 0)?,
            conv1: Conv2d::bind(reg, "conv1", s, p)?,
            conv2: Conv2d::bind(reg, "conv2", s, p)?,
            channel_attention: ChannelAttention::bind(reg, "channel_attention", cfg.conv_channels, cfg.plain_channel_attention)?,
            encoders: (0..cfg.encoder_layers)
                .map(|i| EncoderLayer::bind(reg, &format!("encoder.{i}"), encoder_spec(cfg)))
                .collect::<Result<_>>()?,
            head: Linear::bind(reg, "head")?,
        })
    }
}

/// Parameters plus architecture configuration.
#[derive(Debug, Clone)]
pub struct CueingModel<F = f32> {
    config: ModelConfig,
    dims: StageDims,
    registry: Registry<F>,
    layers: Layers,
}

/// Every intermediate of one forward pass. Tensors keep the token axis first.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    /// Coordinate grid `(1, 2, H, W)`.
    pub coords: Tensor<F>,
    /// Positional map after the 1×1 conv, `(1, 1, H, W)`.
    pub positional: Tensor<F>,
    /// Image plus positional map, `(3, H, W)`.
    pub encoded_input: Tensor<F>,
    /// Unfolded tokens `(T, 3, H', W')`.
    pub tokens: Tensor<F>,
    pub conv1_pre: Tensor<F>,
    pub conv1: Tensor<F>,
    pub conv2_pre: Tensor<F>,
    /// Per-token feature map `v`, `(T, C, Hout, Wout)`.
    pub features: Tensor<F>,
    pub channel_attention: ChannelAttentionCache<F>,
    /// Gated channel mean `(T, Hout, Wout)`.
    pub channel_mean: Tensor<F>,
    /// Pooled token sequence `(T, d)`.
    pub sequence: Tensor<F>,
    pub encoder_inputs: Vec<Tensor<F>>,
    pub encoder_caches: Vec<EncoderCache<F>>,
    pub encoded: Tensor<F>,
    /// Mean over `d`, `(1, T)`.
    pub spatial_mean: Tensor<F>,
    /// Head output before the sigmoid, `(1, T)`.
    pub logits: Tensor<F>,
    pub output: Vec<F>,
}

impl<F: Scalar> ForwardTrace<F> {
    /// Fingerprint of every piecewise branch taken: ReLU signs and max-pool choices.
    pub fn branch_fingerprint(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        hash_signs(&self.conv1_pre, &mut h);
        hash_signs(&self.conv2_pre, &mut h);
        self.channel_attention.hash_branch(&mut h);
        for c in &self.encoder_caches {
            c.hash_branch(&mut h);
        }
        h.finish()
    }
}

impl CueingModel<f32> {
    /// Fresh model with parameters drawn from `seed`; the seed is recorded in the config.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        CueingModel::init_generic(config, seed)
    }

    pub fn predict(&self, image: &Image) -> Result<PointVector> {
        let trace = self.forward_trace(image)?;
        Ok(PointVector::new(trace.output.iter().map(|&v| f64::from(v)).collect()))
    }
}

impl<F: Scalar> CueingModel<F> {
    pub fn init_generic(mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.seed = seed;
        let dims = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut registry = Registry::new();
        let layers = Layers::register(&config, &mut registry, &mut rng)?;
        Ok(CueingModel {
            config,
            dims,
            registry,
            layers,
        })
    }

    /// Rebuild from a registry whose names and shapes must match `config`.
    pub fn from_registry(config: ModelConfig, registry: Registry<F>) -> Result<Self> {
        let reference = CueingModel::<F>::init_generic(config.clone(), config.seed)?;
        if reference.registry.len() != registry.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: config expects {} tensors, found {}",
                reference.registry.len(),
                registry.len()
            )));
        }
        for ((_, want), (_, got)) in reference.registry.iter().zip(registry.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        let layers = Layers::bind(&config, &registry)?;
        Ok(CueingModel {
            dims: reference.dims,
            config,
            registry,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> StageDims {
        self.dims
    }

    pub fn registry(&self) -> &Registry<F> {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry<F> {
        &mut self.registry
    }

    /// Trainable scalar count, or all scalars when `trainable_only` is false.
    pub fn count_params(&self, trainable_only: bool) -> usize {
        self.registry.count(trainable_only)
    }

    pub fn apply_freeze(&mut self, mask: FreezeMask) {
        for p in self.registry.iter_mut() {
            p.trainable = !mask.is_frozen(&p.name);
        }
    }

    pub fn cast<G: Scalar>(&self) -> CueingModel<G> {
        CueingModel {
            config: self.config.clone(),
            dims: self.dims,
            registry: self.registry.cast(),
            layers: self.layers.clone(),
        }
    }

    pub fn forward_trace(&self, image: &Image) -> Result<ForwardTrace<F>> {
        let cfg = &self.config;
        let (h, w, t) = (cfg.height, cfg.width, cfg.tokens);
        if image.height() != h || image.width() != w {
            return Err(Error::shape(
                "input",
                format!("image is {}x{} (WxH) but the model expects {w}x{h}", image.width(), image.height()),
            ));
        }
        let reg = &self.registry;
        let l = &self.layers;

        let grid = coord_grid(h, w, t)?;
        let coords = Tensor::from_vec(&[1, 2, h, w], grid.data.iter().map(|&v| F::of(v)).collect())?;
        let positional = l.pos_conv.forward(reg, &coords)?;
        let hw = h * w;
        let pos = positional.data();
        let encoded_input = Tensor::from_fn(&[3, h, w], |i| F::of(f64::from(image.data()[i])) + pos[i % hw]);

        let batch = tokenize_planes(encoded_input.data(), 3, h, w, t).map_err(|e| stage_err("tokenize", e))?;
        let tokens = unfold(&batch);

        let conv1_pre = l.conv1.forward(reg, &tokens).map_err(|e| stage_err("conv1", e))?;
        let conv1 = relu(&conv1_pre);
        let conv2_pre = l.conv2.forward(reg, &conv1).map_err(|e| stage_err("conv2", e))?;
        let features = relu(&conv2_pre);
        let (channel_mean, ca_cache) = l.channel_attention.forward(reg, &features)?;
        let pooled = adaptive_avg_pool(&channel_mean, cfg.pool_h, cfg.pool_w)?;
        let sequence = pooled.reshape(&[t, cfg.d_model()])?;

        let mut x = sequence.clone();
        let mut encoder_inputs = Vec::with_capacity(l.encoders.len());
        let mut encoder_caches = Vec::with_capacity(l.encoders.len());
        for enc in &l.encoders {
            let (y, cache) = enc.forward(reg, &x).map_err(|e| stage_err("encoder", e))?;
            encoder_inputs.push(std::mem::replace(&mut x, y));
            encoder_caches.push(cache);
        }
        let encoded = x;
        let spatial_mean = mean(&encoded, &[1])?.reshape(&[1, t])?;
        let logits = l.head.forward(reg, &spatial_mean).map_err(|e| stage_err("head", e))?;
        let output = logits.data().iter().map(|&z| sigmoid_scalar(z)).collect();

        Ok(ForwardTrace {
            coords,
            positional,
            encoded_input,
            tokens,
            conv1_pre,
            conv1,
            conv2_pre,
            features,
            channel_attention: ca_cache,
            channel_mean,
            sequence,
            encoder_inputs,
            encoder_caches,
            encoded,
            spatial_mean,
            logits,
            output,
        })
    }

    pub fn forward(&self, image: &Image) -> Result<Vec<F>> {
        Ok(self.forward_trace(image)?.output)
    }

    /// Gradients of `dL/dlogits` flowing back through every stage. Gradients for
    /// all parameters are computed; freezing is applied by the optimizer.
    pub fn backward(&self, trace: &ForwardTrace<F>, dlogits: &[F]) -> Result<Grads<F>> {
        let cfg = &self.config;
        let (h, w, t) = (cfg.height, cfg.width, cfg.tokens);
        let reg = &self.registry;
        let l = &self.layers;
        let mut grads = reg.zero_grads();

        let dlogits = Tensor::from_vec(&[1, t], dlogits.to_vec())?;
        let dmean = l.head.backward(reg, &trace.spatial_mean, &dlogits, &mut grads)?;
        let mut dx = mean_backward(trace.encoded.shape(), &[1], &dmean.reshape(&[t])?)?;
        for (enc, cache) in l.encoders.iter().zip(&trace.encoder_caches).rev() {
            dx = enc.backward(reg, cache, &dx, &mut grads)?;
        }
        let dpooled = dx.reshape(&[t, cfg.pool_h, cfg.pool_w])?;
        let dmap = adaptive_avg_pool_backward(trace.channel_mean.shape(), &dpooled)?;
        let dfeatures = l.channel_attention.backward(reg, &trace.channel_attention, &dmap, &mut grads)?;
        let dconv2 = relu_backward(&trace.conv2_pre, &dfeatures);
        let dconv1_out = l.conv2.backward(reg, &trace.conv1, &dconv2, &mut grads)?;
        let dconv1 = relu_backward(&trace.conv1_pre, &dconv1_out);
        let dtokens = l.conv1.backward(reg, &trace.tokens, &dconv1, &mut grads)?;

        let dinput = untokenize_planes(&fold(&dtokens)?);
        let hw = h * w;
        let dpos: Vec<F> = (0..hw).map(|i| dinput[i] + dinput[hw + i] + dinput[2 * hw + i]).collect();
        let dpos = Tensor::from_vec(&[1, 1, h, w], dpos)?;
        l.pos_conv.backward(reg, &trace.coords, &dpos, &mut grads)?;
        Ok(grads)
    }

    /// Mean BCE between the prediction for `image` and `target`, with gradients.
    pub fn loss_and_grads(&self, image: &Image, target: &[F]) -> Result<(F, Grads<F>)> {
        let trace = self.forward_trace(image)?;
        let loss = bce_with_logits(trace.logits.data(), target)?;
        let dlogits = bce_with_logits_backward(trace.logits.data(), target)?;
        let grads = self.backward(&trace, &dlogits)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, image: &Image, target: &[F]) -> Result<F> {
        let trace = self.forward_trace(image)?;
        bce_with_logits(trace.logits.data(), target)
    }

    /// Loss together with [`ForwardTrace::branch_fingerprint`].
    pub fn loss_with_branch(&self, image: &Image, target: &[F]) -> Result<(F, u64)> {
        let trace = self.forward_trace(image)?;
        Ok((bce_with_logits(trace.logits.data(), target)?, trace.branch_fingerprint()))
    }
}

fn stage_err(stage: &'static str, e: Error) -> Error {
    match e {
        Error::Shape { detail, .. } => Error::shape(stage, detail),
        Error::Dimension(m) => Error::Dimension(format!("{stage}: {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            tokens: 16,
            width: 64,
            height: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_is_one_probability_per_token() {
        let m = CueingModel::init(small(), 3).unwrap();
        let img = Image::from_fn(32, 64, |c, y, x| ((c + y * 3 + x) % 11) as f32 / 10.0);
        let y = m.forward(&img).unwrap();
        assert_eq!(y.len(), 16);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn seeds_control_parameters() {
        let a = CueingModel::init(small(), 1).unwrap();
        let b = CueingModel::init(small(), 1).unwrap();
        let c = CueingModel::init(small(), 2).unwrap();
        assert_eq!(a.registry(), b.registry());
        assert_ne!(a.registry(), c.registry());
    }

    #[test]
    fn wrong_input_size_names_stage() {
        let m = CueingModel::init(small(), 0).unwrap();
        let err = m.forward(&Image::zeros(16, 16)).unwrap_err().to_string();
        assert!(err.contains("input"), "{err}");
    }

    #[test]
    fn freeze_masks_partition_names() {
        let m = CueingModel::init(small(), 0).unwrap();
        for (_, p) in m.registry().iter() {
            let att = FreezeMask::Attention.is_frozen(&p.name);
            let head = !FreezeMask::AllExceptLinear.is_frozen(&p.name);
            assert!(!(att && head), "{}", p.name);
            assert!(!FreezeMask::None.is_frozen(&p.name));
        }
    }
}
