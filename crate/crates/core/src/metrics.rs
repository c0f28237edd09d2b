//! Object-level focus metrics and pixel-level map similarity.

use crate::data::{BBox, GazeMap};
use crate::error::{Error, Result};

pub const FOCUS_THRESHOLD: f32 = 0.5;
/// Added to every pixel before normalizing maps into distributions.
pub const KL_EPS: f64 = 1e-7;

/// Largest map value inside `b`.
pub fn box_max(map: &GazeMap, b: &BBox) -> Result<f32> {
    if b.is_empty() {
        return Err(Error::Invalid(format!("degenerate box {b:?} has zero area")));
    }
    if b.x2 as usize > map.width() || b.y2 as usize > map.height() {
        return Err(Error::Invalid(format!(
            "box {b:?} extends beyond the {}x{} map",
            map.width(),
            map.height()
        )));
    }
    let mut m = f32::NEG_INFINITY;
    for y in b.y1 as usize..b.y2 as usize {
        for x in b.x1 as usize..b.x2 as usize {
            m = m.max(map.get(y, x));
        }
    }
    Ok(m)
}

/// An object is focused when the map's maximum inside its box is strictly above `thr`.
pub fn focus_decision(map: &GazeMap, b: &BBox, thr: f32) -> Result<bool> {
    Ok(box_max(map, b)? > thr)
}

/// Per-object labels and score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSample {
    pub truth: bool,
    pub predicted: bool,
    /// Maximum predicted gaze inside the box.
    pub score: f64,
}

pub fn object_samples(pred: &GazeMap, gt: &GazeMap, boxes: &[BBox], thr: f32) -> Result<Vec<ObjectSample>> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    boxes
        .iter()
        .map(|b| {
            let score = box_max(pred, b)?;
            Ok(ObjectSample {
                truth: focus_decision(gt, b, thr)?,
                predicted: score > thr,
                score: f64::from(score),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn from_samples(samples: &[ObjectSample]) -> Self {
        let mut c = Confusion::default();
        for s in samples {
            match (s.truth, s.predicted) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.r#fn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }
}

/// Object-level results; rates are percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectMetrics {
    pub objects: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    /// Zero when nothing is predicted focused.
    pub precision: f64,
    /// Zero when nothing is truly focused.
    pub recall: f64,
    pub f1: f64,
    /// Absent when the ground truth has only one class.
    pub auc: Option<f64>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Mann-Whitney statistic: the probability that a positive outscores a
/// negative, ties counting one half. Uses midranks of the pooled scores.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

pub fn metrics_from_samples(samples: &[ObjectSample]) -> Result<ObjectMetrics> {
    if samples.is_empty() {
        return Err(Error::Invalid("object-level metrics need at least one object".into()));
    }
    let c = Confusion::from_samples(samples);
    let precision = pct(c.tp, c.tp + c.fp);
    let recall = pct(c.tp, c.tp + c.r#fn);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.truth).collect();
    Ok(ObjectMetrics {
        objects: samples.len(),
        confusion: c,
        accuracy: pct(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        auc: rank_auc(&scores, &labels),
    })
}

/// Object-level metrics pooled over `(prediction, ground truth, boxes)` frames.
pub fn object_level_metrics(frames: &[(&GazeMap, &GazeMap, &[BBox])], thr: f32) -> Result<ObjectMetrics> {
    let mut all = Vec::new();
    for (pred, gt, boxes) in frames {
        all.extend(object_samples(pred, gt, boxes, thr)?);
    }
    metrics_from_samples(&all)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMetrics {
    /// `Σ q log(q / p)` with `q` the ground truth distribution, in nats.
    pub kl: f64,
    /// Pearson correlation; absent when either map is constant.
    pub cc: Option<f64>,
}

fn distribution(map: &GazeMap) -> Vec<f64> {
    let shifted: Vec<f64> = map.data().iter().map(|&v| f64::from(v) + KL_EPS).collect();
    let s: f64 = shifted.iter().sum();
    shifted.into_iter().map(|v| v / s).collect()
}

pub fn kl_divergence(pred: &GazeMap, gt: &GazeMap) -> f64 {
    let p = distribution(pred);
    let q = distribution(gt);
    q.iter().zip(&p).map(|(&qi, &pi)| qi * (qi / pi).ln()).sum()
}

pub fn pearson(a: &[f32], b: &[f32]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pixel_level_metrics(pred: &GazeMap, gt: &GazeMap) -> Result<PixelMetrics> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(PixelMetrics {
        kl: kl_divergence(pred, gt),
        cc: pearson(pred.data(), gt.data()),
    })
}

/// Which AUC to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucVariant {
    /// ROC over objects: max predicted gaze per box against the ground-truth focus label.
    #[default]
    Objects,
    /// ROC over pixels: predicted value against ground-truth pixels above the
    /// focus threshold, averaged over frames that have both classes.
    Pixels,
}

impl std::str::FromStr for AucVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objects" => Ok(AucVariant::Objects),
            "pixels" => Ok(AucVariant::Pixels),
            other => Err(Error::Config(format!("unknown AUC variant `{other}` (objects or pixels)"))),
        }
    }
}

/// Pixel ROC-AUC of one frame.
pub fn pixel_auc(pred: &GazeMap, gt: &GazeMap, thr: f32) -> Option<f64> {
    let scores: Vec<f64> = pred.data().iter().map(|&v| f64::from(v)).collect();
    let labels: Vec<bool> = gt.data().iter().map(|&v| v > thr).collect();
    rank_auc(&scores, &labels)
}
