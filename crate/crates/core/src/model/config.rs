use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::ops::ConvGeometry;
use crate::tokenizer::{grid_side, SUPPORTED_TOKENS};

/// Architecture configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub tokens: usize,
    pub width: usize,
    pub height: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_padding: usize,
    /// Token feature maps are average-pooled to `pool_h × pool_w`, giving the encoder width.
    pub pool_h: usize,
    pub pool_w: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    /// FFN hidden width; `None` means `2 · d`.
    pub ffn_hidden: Option<usize>,
    pub symmetric_qk: bool,
    pub plain_channel_attention: bool,
    pub channel_reduction: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tokens: 256,
            width: 1280,
            height: 720,
            conv_channels: 16,
            conv_kernel: 3,
            conv_stride: 2,
            conv_padding: 1,
            pool_h: 8,
            pool_w: 8,
            encoder_layers: 1,
            heads: 1,
            ffn_hidden: None,
            symmetric_qk: false,
            plain_channel_attention: false,
            channel_reduction: 4,
            seed: 0,
        }
    }
}

/// Spatial extents through the token pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageDims {
    pub grid: usize,
    pub token_h: usize,
    pub token_w: usize,
    pub conv1_h: usize,
    pub conv1_w: usize,
    pub conv2_h: usize,
    pub conv2_w: usize,
}

impl ModelConfig {
    /// Small configuration used for gradient checks: 16 tokens on a 64×64 input.
    pub fn tiny() -> Self {
        ModelConfig {
            tokens: 16,
            width: 64,
            height: 64,
            ..ModelConfig::default()
        }
    }

    pub fn d_model(&self) -> usize {
        self.pool_h * self.pool_w
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(2 * self.d_model())
    }

    pub fn conv1(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: 3,
            out_channels: self.conv_channels,
            kernel: self.conv_kernel,
            stride: self.conv_stride,
            padding: self.conv_padding,
        }
    }

    pub fn conv2(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.conv_channels,
            ..self.conv1()
        }
    }

    pub fn validate(&self) -> Result<StageDims> {
        if !SUPPORTED_TOKENS.contains(&self.tokens) {
            return Err(Error::Config(format!(
                "tokens={} is not supported; use one of {SUPPORTED_TOKENS:?} (powers of 2 that are perfect squares)",
                self.tokens
            )));
        }
        let grid = grid_side(self.tokens)?;
        if self.height % grid != 0 || self.width % grid != 0 {
            return Err(Error::Config(format!(
                "input {}x{} (WxH) is not divisible by sqrt(T)={grid}",
                self.width, self.height
            )));
        }
        if self.conv_channels == 0 || self.conv_kernel == 0 || self.conv_stride == 0 {
            return Err(Error::Config("conv channels, kernel and stride must be positive".into()));
        }
        if self.pool_h == 0 || self.pool_w == 0 {
            return Err(Error::Config("pooled token size must be positive".into()));
        }
        if self.encoder_layers == 0 {
            return Err(Error::Config("at least one encoder layer is required".into()));
        }
        if self.heads == 0 || self.d_model() % self.heads != 0 {
            return Err(Error::Config(format!(
                "d={} (pool {}x{}) must be divisible by heads={}",
                self.d_model(),
                self.pool_h,
                self.pool_w,
                self.heads
            )));
        }
        if self.channel_reduction == 0 || self.channel_reduction > self.conv_channels {
            return Err(Error::Config(format!(
                "channel reduction {} must lie in 1..={}",
                self.channel_reduction, self.conv_channels
            )));
        }
        let (th, tw) = (self.height / grid, self.width / grid);
        let c1 = self.conv1();
        let (Some(h1), Some(w1)) = (c1.out_extent(th), c1.out_extent(tw)) else {
            return Err(Error::Config(format!("conv1 does not fit a {th}x{tw} token")));
        };
        let (Some(h2), Some(w2)) = (c1.out_extent(h1), c1.out_extent(w1)) else {
            return Err(Error::Config(format!("conv2 does not fit a {h1}x{w1} feature map")));
        };
        Ok(StageDims {
            grid,
            token_h: th,
            token_w: tw,
            conv1_h: h1,
            conv1_w: w1,
            conv2_h: h2,
            conv2_w: w2,
        })
    }

    /// Plain-text `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tokens", self.tokens.to_string()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("conv.channels", self.conv_channels.to_string()),
            ("conv.kernel", self.conv_kernel.to_string()),
            ("conv.stride", self.conv_stride.to_string()),
            ("conv.padding", self.conv_padding.to_string()),
            ("pool.h", self.pool_h.to_string()),
            ("pool.w", self.pool_w.to_string()),
            ("encoder.layers", self.encoder_layers.to_string()),
            ("encoder.heads", self.heads.to_string()),
            ("encoder.ffn", self.ffn_width().to_string()),
            ("attention.symmetric_qk", self.symmetric_qk.to_string()),
            ("channel_attention.plain", self.plain_channel_attention.to_string()),
            ("channel_attention.reduction", self.channel_reduction.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Apply `key=value` overrides on top of `self`. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.trim() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("`{key}` expects true/false, got `{v}`"))),
            }
        }
        match key.trim() {
            "tokens" => self.tokens = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "conv.channels" => self.conv_channels = num(key, value)?,
            "conv.kernel" => self.conv_kernel = num(key, value)?,
            "conv.stride" => self.conv_stride = num(key, value)?,
            "conv.padding" => self.conv_padding = num(key, value)?,
            "pool.h" => self.pool_h = num(key, value)?,
            "pool.w" => self.pool_w = num(key, value)?,
            "encoder.layers" => self.encoder_layers = num(key, value)?,
            "encoder.heads" => self.heads = num(key, value)?,
            "encoder.ffn" => self.ffn_hidden = Some(num(key, value)?),
            "attention.symmetric_qk" => self.symmetric_qk = flag(key, value)?,
            "channel_attention.plain" => self.plain_channel_attention = flag(key, value)?,
            "channel_attention.reduction" => self.channel_reduction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in parse_key_values(text)? {
            cfg.apply(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Name the first field that differs from `other`, if any.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<String> {
        self.fields()
            .into_iter()
            .zip(other.fields())
            .find(|(a, b)| a.1 != b.1)
            .map(|(a, b)| format!("{}: {} vs {}", a.0, a.1, b.1))
    }
}

/// Parse `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
