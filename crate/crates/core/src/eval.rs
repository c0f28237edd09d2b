//! Dataset evaluation: predict, upsample to full resolution, then score
//! against the ground-truth gaze maps.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{DatasetManifest, Frame, GazeMap};
use crate::error::{Error, Result};
use crate::metrics::{metrics_from_samples, object_samples, pixel_auc, pixel_level_metrics, AucVariant, ObjectMetrics, ObjectSample, FOCUS_THRESHOLD};
use crate::model::CueingModel;
use crate::render::{default_sigma, upsample_points_with, Interpolation};
use crate::train::load_frames;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    /// Blur width in pixels; `None` means one sixty-fourth of the map width.
    pub sigma: Option<f64>,
    pub interpolation: Interpolation,
    pub threshold: f32,
    pub auc: AucVariant,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            sigma: None,
            interpolation: Interpolation::Bilinear,
            threshold: FOCUS_THRESHOLD,
            auc: AucVariant::Objects,
        }
    }
}

impl RenderParams {
    pub fn sigma_for(&self, width: usize) -> f64 {
        self.sigma.unwrap_or_else(|| default_sigma(width))
    }

    pub fn to_text(&self) -> String {
        let interpolation = match self.interpolation {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
        };
        let auc = match self.auc {
            AucVariant::Objects => "objects",
            AucVariant::Pixels => "pixels",
        };
        format!(
            "render.sigma={}\nrender.interpolation={interpolation}\neval.threshold={}\neval.auc={auc}\n",
            self.sigma.map_or("auto".to_string(), |s| s.to_string()),
            self.threshold
        )
    }

    /// Apply one `key=value` override; returns `false` for keys this struct does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("`{key}` expects a number, got `{value}`"));
        match key {
            "render.sigma" => {
                self.sigma = if value == "auto" { None } else { Some(value.parse().map_err(|_| bad())?) };
                if self.sigma.is_some_and(|s| !(s >= 0.0)) {
                    return Err(Error::Config(format!("render.sigma must be non-negative, got {value}")));
                }
            }
            "render.interpolation" => self.interpolation = value.parse()?,
            "eval.threshold" => self.threshold = value.parse().map_err(|_| bad())?,
            "eval.auc" => self.auc = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Full-resolution predicted gaze map for one frame.
pub fn predict_map(model: &CueingModel<f32>, frame: &Frame, params: &RenderParams) -> Result<GazeMap> {
    let points = model.predict(&frame.image)?;
    let (h, w) = (frame.gaze.height(), frame.gaze.width());
    upsample_points_with(&points, h, w, params.sigma_for(w), params.interpolation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: String,
    pub kl: f64,
    pub cc: Option<f64>,
    pub objects: usize,
    pub gt_focused: usize,
    pub pred_focused: usize,
    pub correct: usize,
    pub pixel_auc: Option<f64>,
}

impl FrameRecord {
    pub fn to_line(&self) -> String {
        format!(
            "id={} kl={} cc={} objects={} gt_focused={} pred_focused={} correct={}",
            self.id,
            self.kl,
            opt(self.cc),
            self.objects,
            self.gt_focused,
            self.pred_focused,
            self.correct
        )
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| x.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub frames: usize,
    /// `None` when the frames contain no objects.
    pub object: Option<ObjectMetrics>,
    /// AUC under the selected variant.
    pub auc: Option<f64>,
    pub auc_variant: AucVariant,
    /// Per-frame KL averaged over frames, in nats.
    pub kl: f64,
    /// Per-frame CC averaged over the frames where it is defined.
    pub cc: Option<f64>,
    pub per_frame: Vec<FrameRecord>,
}

impl MetricReport {
    /// Flat `key=value` summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames={}", self.frames);
        match &self.object {
            Some(o) => {
                let _ = writeln!(s, "objects={}", o.objects);
                let _ = writeln!(s, "accuracy={}", o.accuracy);
                let _ = writeln!(s, "precision={}", o.precision);
                let _ = writeln!(s, "recall={}", o.recall);
                let _ = writeln!(s, "f1={}", o.f1);
                let _ = writeln!(s, "tp={} fp={} tn={} fn={}", o.confusion.tp, o.confusion.fp, o.confusion.tn, o.confusion.r#fn);
            }
            None => {
                let _ = writeln!(s, "objects=0");
            }
        }
        let variant = match self.auc_variant {
            AucVariant::Objects => "objects",
            AucVariant::Pixels => "pixels",
        };
        let _ = writeln!(s, "auc_variant={variant}");
        let _ = writeln!(s, "auc={}", opt(self.auc));
        let _ = writeln!(s, "kl={}", self.kl);
        let _ = writeln!(s, "cc={}", opt(self.cc));
        s
    }

    /// One record line per frame.
    pub fn frames_text(&self) -> String {
        self.per_frame.iter().map(|r| r.to_line() + "\n").collect()
    }
}

struct FrameResult {
    record: FrameRecord,
    samples: Vec<ObjectSample>,
}

fn score_frame(id: &str, pred: &GazeMap, gt: &GazeMap, boxes: &[crate::data::BBox], params: &RenderParams) -> Result<FrameResult> {
    let px = pixel_level_metrics(pred, gt)?;
    let samples = object_samples(pred, gt, boxes, params.threshold)?;
    Ok(FrameResult {
        record: FrameRecord {
            id: id.to_string(),
            kl: px.kl,
            cc: px.cc,
            objects: samples.len(),
            gt_focused: samples.iter().filter(|s| s.truth).count(),
            pred_focused: samples.iter().filter(|s| s.predicted).count(),
            correct: samples.iter().filter(|s| s.truth == s.predicted).count(),
            pixel_auc: match params.auc {
                AucVariant::Pixels => pixel_auc(pred, gt, params.threshold),
                AucVariant::Objects => None,
            },
        },
        samples,
    })
}

/// Aggregate already-rendered predictions against `frames`' gaze maps.
pub fn report_from_predictions(frames: &[Frame], preds: &[GazeMap], params: &RenderParams) -> Result<MetricReport> {
    if frames.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    if frames.len() != preds.len() {
        return Err(Error::Invalid(format!("{} frames but {} predictions", frames.len(), preds.len())));
    }
    let results: Vec<FrameResult> = frames
        .par_iter()
        .zip(preds.par_iter())
        .map(|(f, p)| score_frame(&f.id, p, &f.gaze, &f.boxes, params))
        .collect::<Result<_>>()?;
    let samples: Vec<ObjectSample> = results.iter().flat_map(|r| r.samples.iter().copied()).collect();
    let object = if samples.is_empty() { None } else { Some(metrics_from_samples(&samples)?) };
    let per_frame: Vec<FrameRecord> = results.into_iter().map(|r| r.record).collect();
    let n = per_frame.len() as f64;
    let kl = per_frame.iter().map(|r| r.kl).sum::<f64>() / n;
    let ccs: Vec<f64> = per_frame.iter().filter_map(|r| r.cc).collect();
    let cc = (!ccs.is_empty()).then(|| ccs.iter().sum::<f64>() / ccs.len() as f64);
    let auc = match params.auc {
        AucVariant::Objects => object.and_then(|o| o.auc),
        AucVariant::Pixels => {
            let v: Vec<f64> = per_frame.iter().filter_map(|r| r.pixel_auc).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(MetricReport {
        frames: per_frame.len(),
        object,
        auc,
        auc_variant: params.auc,
        kl,
        cc,
        per_frame,
    })
}

pub fn predict_maps(model: &CueingModel<f32>, frames: &[Frame], params: &RenderParams) -> Result<Vec<GazeMap>> {
    frames.par_iter().map(|f| predict_map(model, f, params)).collect()
}

pub fn evaluate_frames(model: &CueingModel<f32>, frames: &[Frame], params: &RenderParams) -> Result<MetricReport> {
    let preds = predict_maps(model, frames, params)?;
    report_from_predictions(frames, &preds, params)
}

/// Load every manifest frame at the model's input size and evaluate.
pub fn evaluate(model: &CueingModel<f32>, manifest: &DatasetManifest, params: &RenderParams) -> Result<MetricReport> {
    let frames = load_frames(manifest, model.config().width, model.config().height)?;
    evaluate_frames(model, &frames, params)
}
