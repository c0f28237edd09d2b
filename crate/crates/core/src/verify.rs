//! Finite-difference verification of every differentiable primitive and of
//! the complete model, in double precision.
//!
//! Each primitive is reduced to a scalar `Σ r·y` with random weights `r`, so a
//! single backward pass with `dy = r` yields the gradient being checked.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Image;
use crate::error::Result;
use crate::model::{CueingModel, ModelConfig};
use crate::nn::gradcheck::{check_gradient, check_gradient_guarded};
use crate::nn::loss::{bce_backward, bce_loss, bce_with_logits, bce_with_logits_backward};
use crate::nn::ops::{
    adaptive_avg_pool, adaptive_avg_pool_backward, conv2d, conv2d_backward, layer_norm, layer_norm_backward, linear, linear_backward, mean,
    mean_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward,
};
use crate::nn::{ChannelAttention, EncoderLayer, EncoderSpec, GradCheckReport, Grads, Registry, Tensor};
use crate::tokenizer::downsample_gaze;

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Random draws per primitive.
    pub seeds: u64,
    /// Coordinates sampled per parameter tensor in the full-model check.
    pub model_coords: usize,
    pub base_seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seeds: 20,
            model_coords: 24,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checks: Vec<GradCheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<28} coords={:<6} skipped={:<4} max_rel_err={:.3e} tol={:.0e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.checked,
                c.skipped,
                c.max_rel_err,
                c.tol
            );
        }
        s
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values in `±[0.1, 1]`, away from the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with_shape(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, v.to_vec()).expect("probe has the original shape")
}

/// Check `analytic` against the projected scalar `f(x)` for one input.
fn check_input(name: &str, x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> GradCheckReport {
    check_gradient(name, |v| f(&with_shape(x.shape(), v)), x.data(), analytic.data(), None, PRIMITIVE_TOL)
}

fn check_input_guarded(name: &str, x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> (f64, u64)) -> GradCheckReport {
    check_gradient_guarded(name, |v| f(&with_shape(x.shape(), v)), x.data(), analytic.data(), None, PRIMITIVE_TOL)
}

fn fingerprint(feed: impl FnOnce(&mut DefaultHasher)) -> u64 {
    let mut h = DefaultHasher::new();
    feed(&mut h);
    h.finish()
}

fn seeded<F: FnMut(&mut ChaCha8Rng) -> Vec<GradCheckReport>>(name: &str, opts: &VerifyOptions, tol: f64, mut one: F) -> GradCheckReport {
    let parts: Vec<GradCheckReport> = (0..opts.seeds)
        .flat_map(|s| one(&mut rng(opts.base_seed.wrapping_mul(1_000_003).wrapping_add(s))))
        .collect();
    GradCheckReport::merge(name, &parts, tol)
}

fn check_conv(r: &mut ChaCha8Rng, stride: usize, padding: usize) -> Vec<GradCheckReport> {
    let x = uniform(r, &[2, 3, 7, 6], -1.0, 1.0);
    let w = uniform(r, &[4, 3, 3, 3], -0.5, 0.5);
    let b = uniform(r, &[4], -0.5, 0.5);
    let y = conv2d(&x, &w, &b, stride, padding).unwrap();
    let proj = uniform(r, y.shape(), -1.0, 1.0);
    let g = conv2d_backward(&x, &w, &b, stride, padding, &proj).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&conv2d(x, w, b, stride, padding).unwrap(), &proj);
    vec![
        check_input("x", &x, &g.dx, |v| f(v, &w, &b)),
        check_input("w", &w, &g.dweight, |v| f(&x, v, &b)),
        check_input("b", &b, &g.dbias, |v| f(&x, &w, v)),
    ]
}

fn check_linear(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = uniform(r, &[3, 5], -1.0, 1.0);
    let w = uniform(r, &[4, 5], -1.0, 1.0);
    let b = uniform(r, &[4], -1.0, 1.0);
    let proj = uniform(r, &[3, 4], -1.0, 1.0);
    let g = linear_backward(&x, &w, &b, &proj).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&linear(x, w, b).unwrap(), &proj);
    vec![
        check_input("x", &x, &g.dx, |v| f(v, &w, &b)),
        check_input("w", &w, &g.dw, |v| f(&x, v, &b)),
        check_input("b", &b, &g.db, |v| f(&x, &w, v)),
    ]
}

fn check_relu(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = off_kink(r, &[4, 6]);
    let proj = uniform(r, &[4, 6], -1.0, 1.0);
    let dx = relu_backward(&x, &proj);
    vec![check_input("x", &x, &dx, |v| dot(&relu(v), &proj))]
}

fn check_sigmoid(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = uniform(r, &[4, 6], -4.0, 4.0);
    let proj = uniform(r, &[4, 6], -1.0, 1.0);
    let dx = sigmoid_backward(&sigmoid(&x), &proj);
    vec![check_input("x", &x, &dx, |v| dot(&sigmoid(v), &proj))]
}

fn check_softmax(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    (0..2)
        .map(|axis| {
            let x = uniform(r, &[3, 5], -3.0, 3.0);
            let proj = uniform(r, &[3, 5], -1.0, 1.0);
            let dx = softmax_backward(&softmax(&x, axis).unwrap(), &proj, axis).unwrap();
            check_input("x", &x, &dx, |v| dot(&softmax(v, axis).unwrap(), &proj))
        })
        .collect()
}

fn check_layer_norm(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let x = uniform(r, &[4, 6], -2.0, 2.0);
    let gain = uniform(r, &[6], 0.5, 1.5);
    let bias = uniform(r, &[6], -0.5, 0.5);
    let proj = uniform(r, &[4, 6], -1.0, 1.0);
    let (_, cache) = layer_norm(&x, &gain, &bias).unwrap();
    let g = layer_norm_backward(&cache, &gain, &proj);
    let f = |x: &Tensor<f64>, gn: &Tensor<f64>, b: &Tensor<f64>| dot(&layer_norm(x, gn, b).unwrap().0, &proj);
    vec![
        check_input("x", &x, &g.dx, |v| f(v, &gain, &bias)),
        check_input("gain", &gain, &g.dgain, |v| f(&x, v, &bias)),
        check_input("bias", &bias, &g.dbias, |v| f(&x, &gain, v)),
    ]
}

fn check_mean(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    [vec![1], vec![1, 2], vec![0, 2]]
        .iter()
        .map(|axes| {
            let x = uniform(r, &[3, 4, 5], -1.0, 1.0);
            let y = mean(&x, axes).unwrap();
            let proj = uniform(r, y.shape(), -1.0, 1.0);
            let dx = mean_backward(x.shape(), axes, &proj).unwrap();
            check_input("x", &x, &dx, |v| dot(&mean(v, axes).unwrap(), &proj))
        })
        .collect()
}

fn check_pool(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    [([2, 7, 5], (3, 4)), ([2, 3, 3], (4, 5)), ([1, 12, 20], (8, 8))]
        .iter()
        .map(|(shape, (p, q))| {
            let x = uniform(r, shape, -1.0, 1.0);
            let proj = uniform(r, &[shape[0], *p, *q], -1.0, 1.0);
            let dx = adaptive_avg_pool_backward(x.shape(), &proj).unwrap();
            check_input("x", &x, &dx, |v| dot(&adaptive_avg_pool(v, *p, *q).unwrap(), &proj))
        })
        .collect()
}

fn check_bce(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let p = uniform(r, &[9], 0.05, 0.95);
    let z = uniform(r, &[9], -4.0, 4.0);
    let y = uniform(r, &[9], 0.0, 1.0);
    let dp = Tensor::from_vec(&[9], bce_backward(p.data(), y.data()).unwrap()).unwrap();
    let dz = Tensor::from_vec(&[9], bce_with_logits_backward(z.data(), y.data()).unwrap()).unwrap();
    vec![
        check_input("probabilities", &p, &dp, |v| bce_loss(v.data(), y.data()).unwrap()),
        check_input("logits", &z, &dz, |v| bce_with_logits(v.data(), y.data()).unwrap()),
    ]
}

fn registry_of(reg: &mut Registry<f64>) -> &mut Registry<f64> {
    reg
}

/// Check every parameter reachable through `params(state)` (up to `coords`
/// sampled entries each) against `loss(state)`.
fn check_params<S>(
    state: &mut S,
    params: fn(&mut S) -> &mut Registry<f64>,
    grads: &Grads<f64>,
    coords: Option<usize>,
    r: &mut ChaCha8Rng,
    tol: f64,
    loss: impl Fn(&S) -> (f64, u64),
) -> Vec<GradCheckReport> {
    let ids: Vec<_> = params(state).iter().map(|(id, _)| id).collect();
    let mut out = Vec::new();
    for id in ids {
        let name = params(state).param(id).name.clone();
        let x = params(state).value(id).data().to_vec();
        let analytic = grads.get(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        let indices: Option<Vec<usize>> = coords.filter(|&c| c < x.len()).map(|c| {
            let mut all: Vec<usize> = (0..x.len()).collect();
            for i in 0..c {
                let j = r.random_range(i..all.len());
                all.swap(i, j);
            }
            all.truncate(c);
            all
        });
        let report = check_gradient_guarded(
            name,
            |v| {
                params(state).value_mut(id).data_mut().copy_from_slice(v);
                loss(state)
            },
            &x,
            &analytic,
            indices.as_deref(),
            tol,
        );
        params(state).value_mut(id).data_mut().copy_from_slice(&x);
        out.push(report);
    }
    out
}

fn check_channel_attention(r: &mut ChaCha8Rng, plain: bool) -> Vec<GradCheckReport> {
    let mut reg = Registry::<f64>::new();
    let ca = ChannelAttention::register(&mut reg, "ca", 8, 4, plain, r).unwrap();
    if plain {
        for p in reg.iter_mut() {
            p.value = uniform(r, p.value.shape(), -1.0, 1.0);
        }
    }
    let v = uniform(r, &[2, 8, 3, 4], 0.0, 1.0);
    let (y, cache) = ca.forward(&reg, &v).unwrap();
    let proj = uniform(r, y.shape(), -1.0, 1.0);
    let mut grads = reg.zero_grads();
    let dv = ca.backward(&reg, &cache, &proj, &mut grads).unwrap();
    let mut out = vec![check_input_guarded("v", &v, &dv, |x| {
        let (y, cache) = ca.forward(&reg, x).unwrap();
        (dot(&y, &proj), fingerprint(|h| cache.hash_branch(h)))
    })];
    out.extend(check_params(&mut reg, registry_of, &grads, None, r, PRIMITIVE_TOL, |reg| {
        let (y, cache) = ca.forward(reg, &v).unwrap();
        (dot(&y, &proj), fingerprint(|h| cache.hash_branch(h)))
    }));
    out
}

fn check_encoder(r: &mut ChaCha8Rng, symmetric_qk: bool) -> Vec<GradCheckReport> {
    let spec = EncoderSpec {
        d_model: 8,
        heads: 2,
        ffn_hidden: 12,
        symmetric_qk,
    };
    let mut reg = Registry::<f64>::new();
    let enc = EncoderLayer::register(&mut reg, "enc", spec, r).unwrap();
    for p in reg.iter_mut() {
        if p.name.ends_with(".bias") {
            p.value = uniform(r, p.value.shape(), -0.3, 0.3);
        }
    }
    let x = uniform(r, &[5, 8], -1.5, 1.5);
    let (y, cache) = enc.forward(&reg, &x).unwrap();
    let proj = uniform(r, y.shape(), -1.0, 1.0);
    let mut grads = reg.zero_grads();
    let dx = enc.backward(&reg, &cache, &proj, &mut grads).unwrap();
    let mut out = vec![check_input_guarded("x", &x, &dx, |v| {
        let (y, cache) = enc.forward(&reg, v).unwrap();
        (dot(&y, &proj), fingerprint(|h| cache.hash_branch(h)))
    })];
    out.extend(check_params(&mut reg, registry_of, &grads, None, r, PRIMITIVE_TOL, |reg| {
        let (y, cache) = enc.forward(reg, &x).unwrap();
        (dot(&y, &proj), fingerprint(|h| cache.hash_branch(h)))
    }));
    out
}

/// Synthetic input and target for the full-model check.
fn model_fixture(cfg: &ModelConfig, r: &mut ChaCha8Rng) -> (Image, Vec<f64>) {
    let (h, w) = (cfg.height, cfg.width);
    let image = Image::from_fn(h, w, |_, _, _| r.random_range(0.0..1.0));
    let (cy, cx) = (r.random_range(0.0..h as f64), r.random_range(0.0..w as f64));
    let s2 = 2.0 * (w as f64 / 6.0).powi(2);
    let gaze = crate::data::GazeMap::from_fn(h, w, |y, x| {
        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
        (-d2 / s2).exp() as f32
    });
    let target = downsample_gaze(&gaze, cfg.tokens).expect("fixture dims fit the config").values;
    (image, target)
}

/// Gradient of the BCE loss with respect to every parameter tensor of the
/// tiny configuration (16 tokens, 64×64 input).
pub fn check_model(seed: u64, coords: usize) -> Result<GradCheckReport> {
    check_model_config(ModelConfig::tiny(), seed, coords)
}

pub fn check_model_config(cfg: ModelConfig, seed: u64, coords: usize) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut model = CueingModel::<f64>::init_generic(cfg.clone(), seed)?;
    // nonzero biases and gains exercise every gradient path
    for p in model.registry_mut().iter_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".gain") {
            let base = if p.name.ends_with(".gain") { 1.0 } else { 0.0 };
            p.value = Tensor::from_fn(p.value.shape(), |_| base + r.random_range(-0.2..0.2));
        }
    }
    let (image, target) = model_fixture(&cfg, &mut r);
    let (_, grads) = model.loss_and_grads(&image, &target)?;
    let parts = check_params(&mut model, CueingModel::registry_mut, &grads, Some(coords), &mut r, MODEL_TOL, |m| {
        m.loss_with_branch(&image, &target).expect("fixture matches config")
    });
    Ok(GradCheckReport::merge("model", &parts, MODEL_TOL))
}

/// Every primitive and layer, then the full model.
pub fn run_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let tol = PRIMITIVE_TOL;
    let mut checks = vec![
        seeded("conv2d stride2 pad1", opts, tol, |r| check_conv(r, 2, 1)),
        seeded("conv2d stride1 pad0", opts, tol, |r| check_conv(r, 1, 0)),
        seeded("linear", opts, tol, check_linear),
        seeded("relu", opts, tol, check_relu),
        seeded("sigmoid", opts, tol, check_sigmoid),
        seeded("softmax", opts, tol, check_softmax),
        seeded("layer_norm", opts, tol, check_layer_norm),
        seeded("mean", opts, tol, check_mean),
        seeded("adaptive_avg_pool", opts, tol, check_pool),
        seeded("bce", opts, tol, check_bce),
        seeded("channel_attention", opts, tol, |r| check_channel_attention(r, false)),
        seeded("channel_attention plain", opts, tol, |r| check_channel_attention(r, true)),
        seeded("encoder", opts, tol, |r| check_encoder(r, false)),
        seeded("encoder symmetric_qk", opts, tol, |r| check_encoder(r, true)),
    ];
    checks.push(check_model(opts.base_seed, opts.model_coords)?);
    Ok(SuiteReport { checks })
}
