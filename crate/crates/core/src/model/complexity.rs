//! Closed-form parameter and multiply-accumulate counts.
//!
//! One multiply-accumulate counts as one operation. Pure additions that are
//! not part of a weighted sum (residuals, biases) and elementwise
//! nonlinearities (ReLU, sigmoid, softmax exponentials, normalization) are not
//! counted. Averages count one operation per accumulated input element.

use std::fmt::Write as _;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::channel_attention::hidden_width;
use crate::nn::ops::{pool_range, ConvGeometry};
use crate::nn::ChannelAttention;

/// MACs of one convolution over an `h × w` input.
pub fn conv_macs(geo: &ConvGeometry, h: usize, w: usize) -> Option<u64> {
    let ho = geo.out_extent(h)? as u64;
    let wo = geo.out_extent(w)? as u64;
    Some(ho * wo * (geo.out_channels * geo.in_channels * geo.kernel * geo.kernel) as u64)
}

/// Per-layer parameter counts from the configuration alone.
pub fn param_breakdown(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    let c = cfg.conv_channels;
    let k2 = cfg.conv_kernel * cfg.conv_kernel;
    let d = cfg.d_model();
    let f = cfg.ffn_width();
    let t = cfg.tokens;
    let proj = d * d + d;
    let projections = if cfg.symmetric_qk { 3 } else { 4 };
    let encoder = 4 * d + projections * proj + (d * f + f) + (f * d + d);
    vec![
        ("pos_conv", 2 + 1),
        ("conv1", 3 * c * k2 + c),
        ("conv2", c * c * k2 + c),
        ("channel_attention", ChannelAttention::param_count(c, cfg.channel_reduction, cfg.plain_channel_attention)),
        ("encoder", cfg.encoder_layers * encoder),
        ("head", t * t + t),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFlops {
    pub stage: &'static str,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub stages: Vec<StageFlops>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.stages.iter().map(|s| s.macs).sum()
    }

    pub fn gmac(&self) -> f64 {
        self.total() as f64 / 1e9
    }

    pub fn stage(&self, name: &str) -> Option<u64> {
        self.stages.iter().find(|s| s.stage == name).map(|s| s.macs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            let _ = writeln!(s, "{:<18} {:>14} MAC  {:>9.6} GMAC", st.stage, st.macs, st.macs as f64 / 1e9);
        }
        let _ = writeln!(s, "{:<18} {:>14} MAC  {:>9.6} GMAC", "total", self.total(), self.gmac());
        s
    }
}

fn pool_macs(h: usize, w: usize, p: usize, q: usize) -> u64 {
    let rows: usize = (0..p).map(|i| pool_range(i, h, p)).map(|(a, b)| b - a).sum();
    let cols: usize = (0..q).map(|j| pool_range(j, w, q)).map(|(a, b)| b - a).sum();
    (rows * cols) as u64
}

/// Per-stage MACs for one image at the configured input size.
pub fn count_flops(cfg: &ModelConfig) -> Result<FlopReport> {
    let dims = cfg.validate()?;
    let t = cfg.tokens as u64;
    let (h, w) = (cfg.height, cfg.width);
    let c = cfg.conv_channels as u64;
    let hw2 = (dims.conv2_h * dims.conv2_w) as u64;
    let d = cfg.d_model() as u64;
    let f = cfg.ffn_width() as u64;
    let hidden = if cfg.plain_channel_attention { 0 } else { hidden_width(cfg.conv_channels, cfg.channel_reduction) as u64 };

    // the coordinate grid is constant; its 1×1 conv still runs per image
    let positional = (h * w * 2) as u64;
    let conv1 = t * conv_macs(&cfg.conv1(), dims.token_h, dims.token_w).unwrap_or(0);
    let conv2 = t * conv_macs(&cfg.conv2(), dims.conv1_h, dims.conv1_w).unwrap_or(0);
    // avg pooling of each channel, two passes through the shared MLP, gated channel mean
    let channel_attention = t * (c * hw2 + 2 * (c * hidden + hidden * c) + c * hw2);
    let pool = t * pool_macs(dims.conv2_h, dims.conv2_w, cfg.pool_h, cfg.pool_w);
    let projections = if cfg.symmetric_qk { 3 } else { 4 };
    let encoder = cfg.encoder_layers as u64 * (projections * t * d * d + 2 * t * t * d + 2 * t * d * f);
    let spatial_mean = t * d;
    let head = t * t;

    Ok(FlopReport {
        stages: vec![
            StageFlops { stage: "positional", macs: positional },
            StageFlops { stage: "tokenize", macs: 0 },
            StageFlops { stage: "conv1", macs: conv1 },
            StageFlops { stage: "conv2", macs: conv2 },
            StageFlops { stage: "channel_attention", macs: channel_attention },
            StageFlops { stage: "pool", macs: pool },
            StageFlops { stage: "encoder", macs: encoder },
            StageFlops { stage: "spatial_mean", macs: spatial_mean },
            StageFlops { stage: "head", macs: head },
        ],
    })
}

/// `(T · per-token MACs, full-image MACs)` for a stride-1 same-padding conv
/// with the configured kernel and channel counts. Both sides are equal.
pub fn token_conv_identity(cfg: &ModelConfig) -> Result<(u64, u64)> {
    let dims = cfg.validate()?;
    let k = cfg.conv_kernel;
    if k % 2 == 0 {
        return Err(Error::Config(format!("same padding needs an odd kernel, got {k}")));
    }
    let geo = ConvGeometry {
        kernel: k,
        stride: 1,
        padding: k / 2,
        ..cfg.conv1()
    };
    let per_token = conv_macs(&geo, dims.token_h, dims.token_w).unwrap_or(0);
    let full = conv_macs(&geo, cfg.height, cfg.width).unwrap_or(0);
    Ok((cfg.tokens as u64 * per_token, full))
}
