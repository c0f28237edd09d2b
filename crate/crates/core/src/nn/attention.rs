//! Pre-norm transformer encoder layer over a `T × d` token sequence:
//! `x + MHA(LN(x))`, then `x + FFN(LN(x))`. Attention is unmasked over all
//! token pairs.

use rand::Rng;

use super::init::{ones, zeros};
use super::layers::{lookup, Linear};
use super::ops::{hash_signs, layer_norm, layer_norm_backward, relu, relu_backward, softmax, softmax_backward, LayerNormCache};
use super::{Grads, ParamId, Registry, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Share one projection for queries and keys, making raw scores symmetric.
    pub symmetric_qk: bool,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width d={} must be divisible by heads h={}",
                self.d_model, self.heads
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::Config("ffn width must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let proj = d * d + d;
        let n_proj = if self.symmetric_qk { 3 } else { 4 };
        2 * (2 * d) + n_proj * proj + (d * self.ffn_hidden + self.ffn_hidden) + (self.ffn_hidden * d + d)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn register<F: Scalar>(reg: &mut Registry<F>, name: &str, d: usize) -> Result<Self> {
        Ok(Norm {
            gain: reg.add(format!("{name}.gain"), ones(&[d]))?,
            bias: reg.add(format!("{name}.bias"), zeros(&[d]))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    spec: EncoderSpec,
    ln1: Norm,
    query: Linear,
    key: Option<Linear>,
    value: Linear,
    out: Linear,
    ln2: Norm,
    ffn_in: Linear,
    ffn_out: Linear,
}

/// Forward intermediates needed by backward.
#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    x: Tensor<F>,
    ln1: LayerNormCache<F>,
    a: Tensor<F>,
    q: Tensor<F>,
    k: Tensor<F>,
    v: Tensor<F>,
    /// Attention weights, `(heads, T, T)`; each row sums to 1.
    pub weights: Tensor<F>,
    ctx: Tensor<F>,
    ln2: LayerNormCache<F>,
    b: Tensor<F>,
    hidden_pre: Tensor<F>,
    hidden: Tensor<F>,
}

impl<F: Scalar> EncoderCache<F> {
    /// Feed the feed-forward ReLU branches into `state`.
    pub fn hash_branch<H: std::hash::Hasher>(&self, state: &mut H) {
        hash_signs(&self.hidden_pre, state);
    }
}

fn head_slice<F: Scalar>(x: &Tensor<F>, head: usize, dh: usize) -> Vec<F> {
    let d = x.shape()[1];
    x.data()
        .chunks(d)
        .flat_map(|row| row[head * dh..(head + 1) * dh].iter().copied())
        .collect()
}

fn scatter_head<F: Scalar>(dst: &mut Tensor<F>, src: &[F], head: usize, dh: usize) {
    let d = dst.shape()[1];
    for (row, s) in dst.data_mut().chunks_mut(d).zip(src.chunks(dh)) {
        for (a, &b) in row[head * dh..(head + 1) * dh].iter_mut().zip(s) {
            *a += b;
        }
    }
}

impl EncoderLayer {
    pub fn register<F: Scalar>(reg: &mut Registry<F>, prefix: &str, spec: EncoderSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.d_model;
        let ln1 = Norm::register(reg, &format!("{prefix}.ln1"), d)?;
        let query = Linear::register(reg, &format!("{prefix}.attn.query"), d, d, rng)?;
        let key = if spec.symmetric_qk {
            None
        } else {
            Some(Linear::register(reg, &format!("{prefix}.attn.key"), d, d, rng)?)
        };
        let value = Linear::register(reg, &format!("{prefix}.attn.value"), d, d, rng)?;
        let out = Linear::register(reg, &format!("{prefix}.attn.out"), d, d, rng)?;
        let ln2 = Norm::register(reg, &format!("{prefix}.ln2"), d)?;
        let ffn_in = Linear::register(reg, &format!("{prefix}.ffn.fc1"), spec.ffn_hidden, d, rng)?;
        let ffn_out = Linear::register(reg, &format!("{prefix}.ffn.fc2"), d, spec.ffn_hidden, rng)?;
        Ok(EncoderLayer {
            spec,
            ln1,
            query,
            key,
            value,
            out,
            ln2,
            ffn_in,
            ffn_out,
        })
    }

    /// Rebind to an existing registry by parameter names.
    pub fn bind<F: Scalar>(reg: &Registry<F>, prefix: &str, spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let affine = |name: &str| Linear::bind(reg, &format!("{prefix}.{name}"));
        let norm = |name: &str| -> Result<Norm> {
            Ok(Norm {
                gain: lookup(reg, &format!("{prefix}.{name}.gain"))?,
                bias: lookup(reg, &format!("{prefix}.{name}.bias"))?,
            })
        };
        Ok(EncoderLayer {
            spec,
            ln1: norm("ln1")?,
            query: affine("attn.query")?,
            key: if spec.symmetric_qk { None } else { Some(affine("attn.key")?) },
            value: affine("attn.value")?,
            out: affine("attn.out")?,
            ln2: norm("ln2")?,
            ffn_in: affine("ffn.fc1")?,
            ffn_out: affine("ffn.fc2")?,
        })
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    pub fn forward<F: Scalar>(&self, reg: &Registry<F>, x: &Tensor<F>) -> Result<(Tensor<F>, EncoderCache<F>)> {
        let d = self.spec.d_model;
        let &[t, xd] = x.shape() else {
            return Err(Error::shape("encoder", format!("input must be (T, d), got {:?}", x.shape())));
        };
        if xd != d {
            return Err(Error::shape("encoder", format!("token width {xd} != configured d={d}")));
        }
        let h = self.spec.heads;
        let dh = d / h;
        let scale = F::one() / F::of(dh as f64).sqrt();

        let (a, ln1) = layer_norm(x, reg.value(self.ln1.gain), reg.value(self.ln1.bias))?;
        let q = self.query.forward(reg, &a)?;
        let k = match &self.key {
            Some(key) => key.forward(reg, &a)?,
            None => q.clone(),
        };
        let v = self.value.forward(reg, &a)?;

        let mut weights = Tensor::zeros(&[h, t, t]);
        let mut ctx = Tensor::zeros(&[t, d]);
        for head in 0..h {
            let qh = head_slice(&q, head, dh);
            let kh = head_slice(&k, head, dh);
            let vh = head_slice(&v, head, dh);
            let mut scores = vec![F::zero(); t * t];
            super::ops::matmul_bt_acc(&qh, &kh, &mut scores, t, dh, t);
            for s in &mut scores {
                *s *= scale;
            }
            let p = softmax(&Tensor::from_vec(&[t, t], scores)?, 1)?;
            let mut c = vec![F::zero(); t * dh];
            super::ops::matmul_acc(p.data(), &vh, &mut c, t, t, dh);
            scatter_head(&mut ctx, &c, head, dh);
            weights.data_mut()[head * t * t..(head + 1) * t * t].copy_from_slice(p.data());
        }
        let attn = self.out.forward(reg, &ctx)?;
        let mut x1 = x.clone();
        x1.add_assign(&attn);

        let (b, ln2) = layer_norm(&x1, reg.value(self.ln2.gain), reg.value(self.ln2.bias))?;
        let hidden_pre = self.ffn_in.forward(reg, &b)?;
        let hidden = relu(&hidden_pre);
        let f = self.ffn_out.forward(reg, &hidden)?;
        let mut y = x1.clone();
        y.add_assign(&f);

        Ok((
            y,
            EncoderCache {
                x: x.clone(),
                ln1,
                a,
                q,
                k,
                v,
                weights,
                ctx,
                ln2,
                b,
                hidden_pre,
                hidden,
            },
        ))
    }

    pub fn backward<F: Scalar>(&self, reg: &Registry<F>, cache: &EncoderCache<F>, dy: &Tensor<F>, grads: &mut Grads<F>) -> Result<Tensor<F>> {
        let d = self.spec.d_model;
        let h = self.spec.heads;
        let dh = d / h;
        let t = cache.x.shape()[0];
        let scale = F::one() / F::of(dh as f64).sqrt();

        // feed-forward branch
        let dhidden = self.ffn_out.backward(reg, &cache.hidden, dy, grads)?;
        let dpre = relu_backward(&cache.hidden_pre, &dhidden);
        let db = self.ffn_in.backward(reg, &cache.b, &dpre, grads)?;
        let g2 = layer_norm_backward(&cache.ln2, reg.value(self.ln2.gain), &db);
        grads.accumulate(self.ln2.gain, g2.dgain.data());
        grads.accumulate(self.ln2.bias, g2.dbias.data());
        let mut dx1 = dy.clone();
        dx1.add_assign(&g2.dx);

        // attention branch
        let dctx = self.out.backward(reg, &cache.ctx, &dx1, grads)?;
        let mut dq = Tensor::zeros(&[t, d]);
        let mut dk = Tensor::zeros(&[t, d]);
        let mut dv = Tensor::zeros(&[t, d]);
        for head in 0..h {
            let qh = head_slice(&cache.q, head, dh);
            let kh = head_slice(&cache.k, head, dh);
            let vh = head_slice(&cache.v, head, dh);
            let dch = head_slice(&dctx, head, dh);
            let p = Tensor::from_vec(&[t, t], cache.weights.data()[head * t * t..(head + 1) * t * t].to_vec())?;
            let mut dp = vec![F::zero(); t * t];
            super::ops::matmul_bt_acc(&dch, &vh, &mut dp, t, dh, t);
            let mut dvh = vec![F::zero(); t * dh];
            super::ops::matmul_at_acc(p.data(), &dch, &mut dvh, t, t, dh);
            let mut ds = softmax_backward(&p, &Tensor::from_vec(&[t, t], dp)?, 1)?;
            for s in ds.data_mut() {
                *s *= scale;
            }
            let mut dqh = vec![F::zero(); t * dh];
            super::ops::matmul_acc(ds.data(), &kh, &mut dqh, t, t, dh);
            let mut dkh = vec![F::zero(); t * dh];
            super::ops::matmul_at_acc(ds.data(), &qh, &mut dkh, t, t, dh);
            scatter_head(&mut dq, &dqh, head, dh);
            scatter_head(&mut dk, &dkh, head, dh);
            scatter_head(&mut dv, &dvh, head, dh);
        }
        let mut da = self.value.backward(reg, &cache.a, &dv, grads)?;
        match &self.key {
            Some(key) => {
                da.add_assign(&key.backward(reg, &cache.a, &dk, grads)?);
                da.add_assign(&self.query.backward(reg, &cache.a, &dq, grads)?);
            }
            None => {
                dq.add_assign(&dk);
                da.add_assign(&self.query.backward(reg, &cache.a, &dq, grads)?);
            }
        }
        let g1 = layer_norm_backward(&cache.ln1, reg.value(self.ln1.gain), &da);
        grads.accumulate(self.ln1.gain, g1.dgain.data());
        grads.accumulate(self.ln1.bias, g1.dbias.data());
        let mut dx = dx1;
        dx.add_assign(&g1.dx);
        Ok(dx)
    }
}
