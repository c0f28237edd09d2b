//! Seeded synthetic driving scenes for desk-scale experiments.
//!
//! Each frame is a road-like background with solid-colored rectangles standing
//! in for detected objects. The gaze map is a sum of isotropic Gaussian blobs
//! centered inside a random subset of the boxes (pedestrians and traffic
//! lights attract gaze more often than parked trucks), optionally plus one
//! distractor blob centered outside every box, then rescaled to max 1.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{save_gaze_map, save_image, BBox, DatasetManifest, Frame, GazeMap, Image, ManifestEntry, ObjectClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that a frame gets one gaze blob outside all boxes.
    pub distractor_blob_prob: f64,
    /// Blob standard deviation in pixels.
    pub blob_sigma: f64,
    /// Upper bound on in-box blobs per frame.
    pub max_focused: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_frames: 8,
            width: 320,
            height: 192,
            min_objects: 2,
            max_objects: 4,
            distractor_blob_prob: 0.0,
            blob_sigma: 20.0,
            max_focused: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn to_text(&self) -> String {
        format!(
            "synth.frames={}\nsynth.width={}\nsynth.height={}\nsynth.min_objects={}\nsynth.max_objects={}\nsynth.distractor_prob={}\nsynth.blob_sigma={}\nsynth.max_focused={}\nsynth.seed={}\n",
            self.n_frames,
            self.width,
            self.height,
            self.min_objects,
            self.max_objects,
            self.distractor_blob_prob,
            self.blob_sigma,
            self.max_focused,
            self.seed
        )
    }

    /// Apply one `key=value` override; returns `false` for keys this spec does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
        }
        match key {
            "synth.frames" => self.n_frames = num(key, value)?,
            "synth.width" => self.width = num(key, value)?,
            "synth.height" => self.height = num(key, value)?,
            "synth.min_objects" => self.min_objects = num(key, value)?,
            "synth.max_objects" => self.max_objects = num(key, value)?,
            "synth.distractor_prob" => self.distractor_blob_prob = num(key, value)?,
            "synth.blob_sigma" => self.blob_sigma = num(key, value)?,
            "synth.max_focused" => self.max_focused = num(key, value)?,
            "synth.seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!(
                "synthetic frames must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects exceeds max_objects".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_blob_prob) {
            return Err(Error::Config("distractor_blob_prob must lie in [0, 1]".into()));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::Config("blob_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// A generated frame together with its gaze map before the distractor was added.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub frame: Frame,
    pub clean_gaze: GazeMap,
    pub blob_centers: Vec<(f64, f64)>,
    pub distractor: Option<(f64, f64)>,
}

fn class_color(class: ObjectClass) -> [f32; 3] {
    match class {
        ObjectClass::Pedestrian => [0.95, 0.15, 0.15],
        ObjectClass::Rider => [0.95, 0.55, 0.10],
        ObjectClass::Car => [0.15, 0.35, 0.95],
        ObjectClass::Truck => [0.10, 0.60, 0.20],
        ObjectClass::Bus => [0.95, 0.90, 0.15],
        ObjectClass::Train => [0.55, 0.25, 0.65],
        ObjectClass::Motorcycle => [0.10, 0.85, 0.85],
        ObjectClass::Bicycle => [0.90, 0.30, 0.80],
        ObjectClass::TrafficLight => [1.00, 1.00, 1.00],
        ObjectClass::TrafficSign => [0.05, 0.05, 0.05],
    }
}

fn focus_weight(class: ObjectClass) -> f64 {
    match class {
        ObjectClass::Pedestrian => 0.9,
        ObjectClass::Rider => 0.8,
        ObjectClass::TrafficLight => 0.8,
        ObjectClass::TrafficSign => 0.6,
        ObjectClass::Motorcycle | ObjectClass::Bicycle => 0.5,
        ObjectClass::Car => 0.3,
        ObjectClass::Truck | ObjectClass::Bus => 0.25,
        ObjectClass::Train => 0.15,
    }
}

fn add_blob(map: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, sigma: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in 0..h {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            map[y * w + x] += (-(dx * dx + dy * dy) * inv).exp();
        }
    }
}

fn normalized(map: &[f64], h: usize, w: usize) -> GazeMap {
    let max = map.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    GazeMap::from_fn(h, w, |y, x| (map[y * w + x] * scale) as f32)
}

fn inside_any(boxes: &[BBox], y: f64, x: f64) -> bool {
    boxes.iter().any(|b| {
        x >= f64::from(b.x1) && x < f64::from(b.x2) && y >= f64::from(b.y1) && y < f64::from(b.y2)
    })
}

/// Generate frame `index` of the dataset described by `spec`.
///
/// Every frame draws from its own ChaCha stream, and the distractor is drawn
/// last, so toggling `distractor_blob_prob` leaves images, boxes and in-box
/// blobs unchanged.
pub fn synth_frame(spec: &SynthSpec, index: usize) -> SynthFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (h, w) = (spec.height, spec.width);

    let sky = [
        0.45 + 0.1 * rng.random::<f32>(),
        0.60 + 0.1 * rng.random::<f32>(),
        0.80 + 0.1 * rng.random::<f32>(),
    ];
    let road = 0.30 + 0.15 * rng.random::<f32>();
    let horizon = h as f32 * (0.4 + 0.1 * rng.random::<f32>());
    let mut image = Image::from_fn(h, w, |c, y, _| {
        if (y as f32) < horizon {
            sky[c] * (0.8 + 0.2 * y as f32 / horizon)
        } else {
            road
        }
    });
    for v in image.data_mut() {
        *v = (*v + 0.04 * (rng.random::<f32>() - 0.5)).clamp(0.0, 1.0);
    }

    let n_objects = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut boxes = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let class = ObjectClass::ALL[rng.random_range(0..ObjectClass::ALL.len())];
        let bw = rng.random_range(w / 10..=w / 5).max(2);
        let bh = rng.random_range(h / 8..=h / 4).max(2);
        let x1 = rng.random_range(0..=w - bw);
        let y1 = rng.random_range(0..=h - bh);
        boxes.push(BBox::new(class, x1 as u32, y1 as u32, (x1 + bw) as u32, (y1 + bh) as u32));
    }
    for b in &boxes {
        let color = class_color(b.class);
        for y in b.y1 as usize..b.y2 as usize {
            for x in b.x1 as usize..b.x2 as usize {
                for (c, &v) in color.iter().enumerate() {
                    image.set(c, y, x, v);
                }
            }
        }
    }

    let mut focused: Vec<usize> = (0..boxes.len())
        .filter(|&i| rng.random::<f64>() < focus_weight(boxes[i].class))
        .collect();
    if focused.is_empty() && !boxes.is_empty() {
        let best = (0..boxes.len())
            .max_by(|&a, &b| focus_weight(boxes[a].class).total_cmp(&focus_weight(boxes[b].class)).then(b.cmp(&a)))
            .unwrap();
        focused.push(best);
    }
    focused.truncate(spec.max_focused.max(1));

    let mut acc = vec![0.0f64; h * w];
    let mut blob_centers = Vec::new();
    for &i in &focused {
        let b = boxes[i];
        let (bw, bh) = (f64::from(b.width()), f64::from(b.height()));
        let cx = f64::from(b.x1) + bw * (0.25 + 0.5 * rng.random::<f64>());
        let cy = f64::from(b.y1) + bh * (0.25 + 0.5 * rng.random::<f64>());
        add_blob(&mut acc, h, w, cy, cx, spec.blob_sigma);
        blob_centers.push((cy, cx));
    }
    let clean_gaze = normalized(&acc, h, w);

    let roll = rng.random::<f64>();
    let mut distractor = None;
    if roll < spec.distractor_blob_prob {
        for _ in 0..256 {
            let cy = rng.random::<f64>() * h as f64;
            let cx = rng.random::<f64>() * w as f64;
            if !inside_any(&boxes, cy, cx) {
                distractor = Some((cy, cx));
                break;
            }
        }
    }
    let gaze = match distractor {
        Some((cy, cx)) => {
            add_blob(&mut acc, h, w, cy, cx, spec.blob_sigma);
            normalized(&acc, h, w)
        }
        None => clean_gaze.clone(),
    };

    SynthFrame {
        frame: Frame {
            id: format!("frame_{index:05}"),
            image,
            gaze,
            boxes,
        },
        clean_gaze,
        blob_centers,
        distractor,
    }
}

pub fn synth_frames(spec: &SynthSpec) -> Result<Vec<SynthFrame>> {
    spec.validate()?;
    Ok((0..spec.n_frames).map(|i| synth_frame(spec, i)).collect())
}

/// Write `images/`, `gaze/`, `gaze_clean/` and `manifest.txt` under `out_dir`.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.n_frames);
    for i in 0..spec.n_frames {
        let s = synth_frame(spec, i);
        let name = format!("{}.png", s.frame.id);
        let image_path = PathBuf::from("images").join(&name);
        let gaze_path = PathBuf::from("gaze").join(&name);
        save_image(&s.frame.image, &out_dir.join(&image_path))?;
        save_gaze_map(&s.frame.gaze, &out_dir.join(&gaze_path))?;
        save_gaze_map(&s.clean_gaze, &out_dir.join("gaze_clean").join(&name))?;
        entries.push(ManifestEntry {
            image_path,
            gaze_path,
            boxes: s.frame.boxes,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
