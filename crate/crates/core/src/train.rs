//! Mini-batch Adam training on per-token BCE, fine-tuning subsets and
//! parameter freezing.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_frame, DatasetManifest, Frame};
use crate::error::{Error, Result};
use crate::model::{CueingModel, FreezeMask};
use crate::nn::{AdamConfig, AdamState, Grads};
use crate::tokenizer::downsample_gaze;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Skip frames whose gaze map is entirely zero.
    pub drop_empty_gaze: bool,
    pub freeze: FreezeMask,
    /// Record the full-dataset loss every this many epochs (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 1,
            max_steps: None,
            adam: AdamConfig::default(),
            seed: 0,
            drop_empty_gaze: false,
            freeze: FreezeMask::None,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {:?}", self.adam)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "max_steps={}", self.max_steps.map_or("none".into(), |v| v.to_string()));
        let _ = writeln!(s, "lr={}", self.adam.lr);
        let _ = writeln!(s, "beta1={}", self.adam.beta1);
        let _ = writeln!(s, "beta2={}", self.adam.beta2);
        let _ = writeln!(s, "eps={}", self.adam.eps);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "drop_empty_gaze={}", self.drop_empty_gaze);
        let _ = writeln!(s, "freeze={}", self.freeze.name());
        let _ = writeln!(s, "eval_every={}", self.eval_every);
        s
    }

    /// Apply one `key=value` override; returns `false` for keys this config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_steps" => self.max_steps = if value == "none" { None } else { Some(num(key, value)?) },
            "lr" => self.adam.lr = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "eps" => self.adam.eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "drop_empty_gaze" => {
                self.drop_empty_gaze = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects true/false, got `{value}`")))?
            }
            "freeze" => self.freeze = value.parse()?,
            "eval_every" => self.eval_every = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One training sample: image and downsampled gaze target.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub frame: &'a Frame,
    pub target: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean loss over the samples seen in each epoch, measured before each update.
    pub epoch_loss: Vec<f64>,
    pub step_loss: Vec<f64>,
    /// `(epoch, mean loss over all samples)` at the evaluation cadence.
    pub evaluations: Vec<(usize, f64)>,
    pub steps: usize,
    pub samples: usize,
}

impl TrainHistory {
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch\tmean_loss\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            let _ = writeln!(s, "{}\t{l}", i + 1);
        }
        s
    }
}

fn prepare<'a>(model: &CueingModel<f32>, frames: &'a [Frame], drop_empty: bool) -> Result<Vec<Sample<'a>>> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        if f.image.height() != cfg.height || f.image.width() != cfg.width {
            return Err(Error::Dimension(format!(
                "frame `{}` is {}x{} but the model expects {}x{}",
                f.id,
                f.image.width(),
                f.image.height(),
                cfg.width,
                cfg.height
            )));
        }
        if drop_empty && f.gaze.is_all_zero() {
            continue;
        }
        let target = downsample_gaze(&f.gaze, cfg.tokens)?.values.into_iter().map(|v| v as f32).collect();
        out.push(Sample { frame: f, target });
    }
    if out.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    Ok(out)
}

/// Mean loss of `model` over `frames` against their downsampled gaze.
pub fn mean_loss(model: &CueingModel<f32>, frames: &[Frame]) -> Result<f64> {
    let samples = prepare(model, frames, false)?;
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss(&s.frame.image, &s.target).map(f64::from))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Per-sample gradients are computed in parallel and summed in sample order,
/// so results do not depend on the thread count.
fn batch_grads(model: &CueingModel<f32>, batch: &[&Sample]) -> Result<(Grads<f32>, Vec<f64>)> {
    let parts: Vec<(f32, Grads<f32>)> = batch
        .par_iter()
        .map(|s| model.loss_and_grads(&s.frame.image, &s.target))
        .collect::<Result<_>>()?;
    let mut total = model.registry().zero_grads();
    let scale = 1.0 / batch.len() as f32;
    let mut losses = Vec::with_capacity(parts.len());
    for (loss, g) in parts {
        losses.push(f64::from(loss));
        for (id, _) in model.registry().iter() {
            if let Some(t) = g.get(id) {
                let scaled: Vec<f32> = t.data().iter().map(|v| v * scale).collect();
                total.accumulate(id, &scaled);
            }
        }
    }
    Ok((total, losses))
}

/// Train in place. Parameters frozen by `cfg.freeze` are left bit-identical.
pub fn train(model: &mut CueingModel<f32>, frames: &[Frame], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    model.apply_freeze(cfg.freeze);
    let samples = prepare(model, frames, cfg.drop_empty_gaze)?;
    let mut adam = AdamState::new(model.registry(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory {
        samples: samples.len(),
        ..TrainHistory::default()
    };
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (grads, losses) = batch_grads(model, &batch)?;
            adam.step(model.registry_mut(), &grads)?;
            history.steps += 1;
            history.step_loss.push(losses.iter().sum::<f64>() / losses.len() as f64);
            epoch_sum += losses.iter().sum::<f64>();
            epoch_n += losses.len();
        }
        if epoch_n > 0 {
            history.epoch_loss.push(epoch_sum / epoch_n as f64);
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            let frames: Vec<Frame> = samples.iter().map(|s| s.frame.clone()).collect();
            history.evaluations.push((epoch + 1, mean_loss(model, &frames)?));
        }
        if cfg.max_steps.is_some_and(|m| history.steps >= m) {
            break 'epochs;
        }
    }
    Ok(history)
}

/// Load every manifest entry at the model's input size.
pub fn load_frames(manifest: &DatasetManifest, width: usize, height: usize) -> Result<Vec<Frame>> {
    manifest
        .entries
        .par_iter()
        .map(|e| load_frame(manifest, e, width, height))
        .collect()
}

pub fn train_manifest(model: &mut CueingModel<f32>, manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<TrainHistory> {
    if manifest.is_empty() {
        return Err(Error::Invalid("training manifest has no entries".into()));
    }
    let frames = load_frames(manifest, model.config().width, model.config().height)?;
    train(model, &frames, cfg)
}

/// `⌈fraction · N⌉` entries drawn uniformly without replacement, kept in manifest order.
pub fn sample_finetune_subset(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if manifest.is_empty() {
        return Err(Error::Invalid("cannot sample from an empty manifest".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = manifest.len();
    // tolerate products like 0.07 * 100 = 7.000000000000001
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(DatasetManifest {
        root: manifest.root.clone(),
        entries: picked.into_iter().map(|i| manifest.entries[i].clone()).collect(),
    })
}
