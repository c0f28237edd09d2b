//! Channel attention: each channel of a `(N, C, h, w)` feature map is gated by
//! `sigmoid(MLP(avgpool) + MLP(maxpool))` with a shared two-layer MLP, then the
//! gated channels are averaged into one `h × w` map per sample.
//!
//! The `plain` variant replaces the pooled MLP with one learned logit per channel.

use rand::Rng;

use super::init::zeros;
use super::layers::{lookup, Linear};
use super::ops::{hash_signs, relu, relu_backward, sigmoid_scalar};
use super::{Grads, ParamId, Registry, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Gate {
    Mlp { fc1: Linear, fc2: Linear },
    Plain { logits: ParamId },
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelAttention {
    channels: usize,
    gate: Gate,
}

#[derive(Debug, Clone)]
pub struct ChannelAttentionCache<F> {
    v: Tensor<F>,
    /// Channel weights `(N, C)`, each in `(0, 1)`.
    pub weights: Tensor<F>,
    avg: Tensor<F>,
    max: Tensor<F>,
    argmax: Vec<usize>,
    hidden_avg_pre: Tensor<F>,
    hidden_max_pre: Tensor<F>,
    hidden_avg: Tensor<F>,
    hidden_max: Tensor<F>,
}

impl<F: Scalar> ChannelAttentionCache<F> {
    /// Feed the max-pool choices and hidden ReLU branches into `state`.
    pub fn hash_branch<H: std::hash::Hasher>(&self, state: &mut H) {
        use std::hash::Hash;
        self.argmax.hash(state);
        hash_signs(&self.hidden_avg_pre, state);
        hash_signs(&self.hidden_max_pre, state);
    }
}

/// Hidden width of the shared MLP for `channels` and reduction ratio `r`.
pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

impl ChannelAttention {
    pub fn register<F: Scalar>(reg: &mut Registry<F>, prefix: &str, channels: usize, reduction: usize, plain: bool, rng: &mut impl Rng) -> Result<Self> {
        let gate = if plain {
            Gate::Plain {
                logits: reg.add(format!("{prefix}.logits"), zeros(&[channels]))?,
            }
        } else {
            let hidden = hidden_width(channels, reduction);
            Gate::Mlp {
                fc1: Linear::register(reg, &format!("{prefix}.mlp.fc1"), hidden, channels, rng)?,
                fc2: Linear::register(reg, &format!("{prefix}.mlp.fc2"), channels, hidden, rng)?,
            }
        };
        Ok(ChannelAttention { channels, gate })
    }

    pub fn bind<F: Scalar>(reg: &Registry<F>, prefix: &str, channels: usize, plain: bool) -> Result<Self> {
        let gate = if plain {
            Gate::Plain {
                logits: lookup(reg, &format!("{prefix}.logits"))?,
            }
        } else {
            Gate::Mlp {
                fc1: Linear::bind(reg, &format!("{prefix}.mlp.fc1"))?,
                fc2: Linear::bind(reg, &format!("{prefix}.mlp.fc2"))?,
            }
        };
        Ok(ChannelAttention { channels, gate })
    }

    pub fn param_count(channels: usize, reduction: usize, plain: bool) -> usize {
        if plain {
            channels
        } else {
            let h = hidden_width(channels, reduction);
            (channels * h + h) + (h * channels + channels)
        }
    }

    /// Returns the channel mean `(N, h, w)` of the gated map and the cache.
    pub fn forward<F: Scalar>(&self, reg: &Registry<F>, v: &Tensor<F>) -> Result<(Tensor<F>, ChannelAttentionCache<F>)> {
        let &[n, c, h, w] = v.shape() else {
            return Err(Error::shape("channel_attention", format!("input must be (N, C, h, w), got {:?}", v.shape())));
        };
        if c != self.channels {
            return Err(Error::shape("channel_attention", format!("expected {} channels, got {c}", self.channels)));
        }
        let hw = h * w;
        let mut avg = Tensor::zeros(&[n, c]);
        let mut max = Tensor::zeros(&[n, c]);
        let mut argmax = vec![0usize; n * c];
        for (i, plane) in v.data().chunks(hw).enumerate() {
            let mut best = 0;
            for (p, &x) in plane.iter().enumerate() {
                if x > plane[best] {
                    best = p;
                }
            }
            avg.data_mut()[i] = plane.iter().copied().sum::<F>() / F::of(hw as f64);
            max.data_mut()[i] = plane[best];
            argmax[i] = best;
        }

        let (logits, hidden_avg_pre, hidden_max_pre, hidden_avg, hidden_max) = match self.gate {
            Gate::Mlp { fc1, fc2 } => {
                let ha_pre = fc1.forward(reg, &avg)?;
                let hm_pre = fc1.forward(reg, &max)?;
                let ha = relu(&ha_pre);
                let hm = relu(&hm_pre);
                let mut z = fc2.forward(reg, &ha)?;
                z.add_assign(&fc2.forward(reg, &hm)?);
                (z, ha_pre, hm_pre, ha, hm)
            }
            Gate::Plain { logits } => {
                let l = reg.value(logits);
                let z = Tensor::from_fn(&[n, c], |i| l.data()[i % c]);
                let e = Tensor::zeros(&[0]);
                (z, e.clone(), e.clone(), e.clone(), e)
            }
        };
        let weights = Tensor::from_fn(&[n, c], |i| sigmoid_scalar(logits.data()[i]));

        let inv_c = F::one() / F::of(c as f64);
        let mut out = Tensor::zeros(&[n, h, w]);
        for s in 0..n {
            let dst = &mut out.data_mut()[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let wt = weights.data()[s * c + ch];
                let plane = &v.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                for (o, &x) in dst.iter_mut().zip(plane) {
                    *o += wt * x;
                }
            }
            for o in dst.iter_mut() {
                *o *= inv_c;
            }
        }
        Ok((
            out,
            ChannelAttentionCache {
                v: v.clone(),
                weights,
                avg,
                max,
                argmax,
                hidden_avg_pre,
                hidden_max_pre,
                hidden_avg,
                hidden_max,
            },
        ))
    }

    /// Gated map `v ⊗ w` (before the channel mean), for inspection.
    pub fn weighted<F: Scalar>(cache: &ChannelAttentionCache<F>) -> Tensor<F> {
        let shape = cache.v.shape();
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        Tensor::from_fn(shape, |i| cache.v.data()[i] * cache.weights.data()[i / hw / c * c + (i / hw) % c])
    }

    pub fn backward<F: Scalar>(&self, reg: &Registry<F>, cache: &ChannelAttentionCache<F>, dy: &Tensor<F>, grads: &mut Grads<F>) -> Result<Tensor<F>> {
        let shape = cache.v.shape();
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        if dy.len() != n * hw {
            return Err(Error::shape("channel_attention_backward", format!("dy has {} values, expected {}", dy.len(), n * hw)));
        }
        let inv_c = F::one() / F::of(c as f64);
        let mut dv = Tensor::zeros(shape);
        let mut dz = Tensor::zeros(&[n, c]);
        for s in 0..n {
            let g = &dy.data()[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let idx = s * c + ch;
                let wt = cache.weights.data()[idx];
                let plane = &cache.v.data()[idx * hw..(idx + 1) * hw];
                let dplane = &mut dv.data_mut()[idx * hw..(idx + 1) * hw];
                let mut dw = F::zero();
                for p in 0..hw {
                    let gp = g[p] * inv_c;
                    dplane[p] = wt * gp;
                    dw += gp * plane[p];
                }
                dz.data_mut()[idx] = dw * wt * (F::one() - wt);
            }
        }
        match self.gate {
            Gate::Mlp { fc1, fc2 } => {
                let dha = fc2.backward(reg, &cache.hidden_avg, &dz, grads)?;
                let dhm = fc2.backward(reg, &cache.hidden_max, &dz, grads)?;
                let davg = fc1.backward(reg, &cache.avg, &relu_backward(&cache.hidden_avg_pre, &dha), grads)?;
                let dmax = fc1.backward(reg, &cache.max, &relu_backward(&cache.hidden_max_pre, &dhm), grads)?;
                let inv_hw = F::one() / F::of(hw as f64);
                for idx in 0..n * c {
                    let da = davg.data()[idx] * inv_hw;
                    let plane = &mut dv.data_mut()[idx * hw..(idx + 1) * hw];
                    for x in plane.iter_mut() {
                        *x += da;
                    }
                    plane[cache.argmax[idx]] += dmax.data()[idx];
                }
            }
            Gate::Plain { logits } => {
                let mut dl = vec![F::zero(); c];
                for (i, &g) in dz.data().iter().enumerate() {
                    dl[i % c] += g;
                }
                grads.accumulate(logits, &dl);
            }
        }
        Ok(dv)
    }
}
