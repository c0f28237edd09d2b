//! Core domain types, manifest ingestion and image I/O.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Three-channel image stored channel-major (`3 × H × W`), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; Self::CHANNELS * height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(Self::CHANNELS * height * width);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { height, width, data }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::Dimension(format!(
                "image buffer holds {} values, expected 3x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("image values must lie in [0, 1]".into()));
        }
        Ok(Image { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Image::from_fn(h as usize, w as usize, |c, y, x| {
            f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| quantize(self.get(c, y as usize, x as usize));
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn resize(&self, height: usize, width: usize) -> Image {
        let mut out = Vec::with_capacity(Self::CHANNELS * height * width);
        for c in 0..Self::CHANNELS {
            out.extend(resize_plane(self.channel(c), self.height, self.width, height, width));
        }
        Image {
            height,
            width,
            data: out,
        }
    }
}

/// Single-channel gaze intensity map, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GazeMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        GazeMap {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        GazeMap { height, width, data }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("gaze map must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "gaze buffer holds {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("gaze values must lie in [0, 1]".into()));
        }
        Ok(GazeMap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Luma image; 3-channel sources are reduced by per-pixel channel mean.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => Self::from_gray8(g),
            DynamicImage::ImageLumaA8(_) => Self::from_gray8(&img.to_luma8()),
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                GazeMap::from_fn(h as usize, w as usize, |y, x| {
                    let p = rgb.get_pixel(x as u32, y as u32);
                    let sum: f32 = p.0.iter().map(|&b| f32::from(b) / 255.0).sum();
                    sum / 3.0
                })
            }
        }
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        GazeMap::from_fn(h as usize, w as usize, |y, x| {
            f32::from(img.get_pixel(x as u32, y as u32)[0]) / 255.0
        })
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([quantize(self.get(y as usize, x as usize))])
        })
    }

    pub fn resize(&self, height: usize, width: usize) -> GazeMap {
        GazeMap {
            height,
            width,
            data: resize_plane(&self.data, self.height, self.width, height, width),
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resize with corner-aligned sampling: output pixel `i` samples the
/// source at `i * (in - 1) / (out - 1)`.
fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if h == oh && w == ow {
        return src.to_vec();
    }
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|i| {
                let pos = if n_out > 1 && n_in > 1 {
                    i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                } else {
                    0.0
                };
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = coords(h, oh);
    let xs = coords(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    out
}

/// The ten driving-relevant object categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Pedestrian,
    Rider,
    Car,
    Truck,
    Bus,
    Train,
    Motorcycle,
    Bicycle,
    TrafficLight,
    TrafficSign,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 10] = [
        ObjectClass::Pedestrian,
        ObjectClass::Rider,
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Train,
        ObjectClass::Motorcycle,
        ObjectClass::Bicycle,
        ObjectClass::TrafficLight,
        ObjectClass::TrafficSign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Rider => "rider",
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Bus => "bus",
            ObjectClass::Train => "train",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Bicycle => "bicycle",
            ObjectClass::TrafficLight => "traffic light",
            ObjectClass::TrafficSign => "traffic sign",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        // underscores are accepted so names survive whitespace-split tooling
        let norm = s.trim().replace('_', " ");
        ObjectClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == norm)
            .ok_or_else(|| format!("unknown object class `{s}`"))
    }
}

/// Axis-aligned box in pixel coordinates, `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub class: ObjectClass,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    pub fn new(class: ObjectClass, x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        BBox { class, x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        self.x2.saturating_sub(self.x1)
    }

    pub fn height(&self) -> u32 {
        self.y2.saturating_sub(self.y1)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x1 as usize..self.x2 as usize).contains(&x) && (self.y1 as usize..self.y2 as usize).contains(&y)
    }

    /// Clamp to a `width × height` frame; `None` if nothing is left.
    pub fn clamped(&self, width: usize, height: usize) -> Option<BBox> {
        let b = BBox {
            class: self.class,
            x1: self.x1.min(width as u32),
            y1: self.y1.min(height as u32),
            x2: self.x2.min(width as u32),
            y2: self.y2.min(height as u32),
        };
        (!b.is_empty()).then_some(b)
    }

    /// Scale by per-axis ratios, rounding outward so every covered point stays covered.
    pub fn rescaled(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            class: self.class,
            x1: (f64::from(self.x1) * sx).floor() as u32,
            y1: (f64::from(self.y1) * sy).floor() as u32,
            x2: (f64::from(self.x2) * sx).ceil() as u32,
            y2: (f64::from(self.y2) * sy).ceil() as u32,
        }
    }
}

/// One sample: image, gaze map and the boxes of driving-relevant objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub image: Image,
    pub gaze: GazeMap,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub gaze_path: PathBuf,
    pub boxes: Vec<BBox>,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    fn to_line(&self) -> String {
        let boxes: Vec<String> = self
            .boxes
            .iter()
            .map(|b| format!("{},{},{},{},{}", b.class, b.x1, b.y1, b.x2, b.y2))
            .collect();
        format!(
            "image={} gaze={} boxes={}",
            self.image_path.display(),
            self.gaze_path.display(),
            boxes.join(";")
        )
    }
}

/// Ordered list of dataset records; paths are relative to `root`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    pub fn gaze_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.gaze_path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }

    /// Write the manifest file; `root` is not stored, it is the file's directory on reload.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

const KEYS: [&str; 3] = ["image=", "gaze=", "boxes="];

fn split_fields(line: &str) -> std::result::Result<[Option<&str>; 3], String> {
    // key positions: each key must start the line or follow whitespace
    let mut starts: Vec<(usize, usize)> = Vec::new();
    for (k, key) in KEYS.iter().enumerate() {
        let mut found = None;
        let mut from = 0;
        while let Some(off) = line[from..].find(key) {
            let pos = from + off;
            if pos == 0 || line[..pos].ends_with(char::is_whitespace) {
                if found.is_some() {
                    return Err(format!("duplicate field `{}`", &key[..key.len() - 1]));
                }
                found = Some(pos);
            }
            from = pos + key.len();
        }
        if let Some(pos) = found {
            starts.push((pos, k));
        }
    }
    starts.sort_unstable();
    if let Some(&(first, _)) = starts.first() {
        if !line[..first].trim().is_empty() {
            return Err(format!("unexpected text `{}`", line[..first].trim()));
        }
    }
    let mut out = [None; 3];
    for (i, &(pos, k)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(line.len(), |&(p, _)| p);
        out[k] = Some(line[pos + KEYS[k].len()..end].trim());
    }
    Ok(out)
}

fn parse_box(s: &str) -> std::result::Result<BBox, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("box `{s}` must have 5 fields cls,x1,y1,x2,y2"));
    }
    let class: ObjectClass = parts[0].parse()?;
    let mut c = [0f64; 4];
    for (slot, p) in c.iter_mut().zip(&parts[1..]) {
        *slot = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad coordinate `{p}` in box `{s}`"))?;
    }
    let [x1, y1, x2, y2] = c;
    if x2 <= x1 || y2 <= y1 {
        return Err(format!("degenerate box `{s}`: need x1 < x2 and y1 < y2"));
    }
    if x2 <= 0.0 || y2 <= 0.0 {
        return Err(format!("box `{s}` lies entirely at negative coordinates"));
    }
    Ok(BBox {
        class,
        x1: x1.max(0.0).floor() as u32,
        y1: y1.max(0.0).floor() as u32,
        x2: x2.ceil() as u32,
        y2: y2.ceil() as u32,
    })
}

fn parse_line(line: &str) -> std::result::Result<ManifestEntry, String> {
    let [image, gaze, boxes] = split_fields(line)?;
    let image = image.filter(|s| !s.is_empty()).ok_or("missing `image=` field")?;
    let gaze = gaze.filter(|s| !s.is_empty()).ok_or("missing `gaze=` field")?;
    let boxes = match boxes {
        None | Some("") => Vec::new(),
        Some(b) => b
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(parse_box)
            .collect::<std::result::Result<_, _>>()?,
    };
    Ok(ManifestEntry {
        image_path: PathBuf::from(image),
        gaze_path: PathBuf::from(gaze),
        boxes,
    })
}

/// Parse manifest text; `origin` is used only for error messages.
pub fn parse_manifest(text: &str, root: &Path, origin: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entry = parse_line(trimmed).map_err(|message| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        })?;
        entries.push(entry);
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
    })
}

/// Load a manifest; relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, &root, path)?;
    for e in &manifest.entries {
        for p in [manifest.image_path(e), manifest.gaze_path(e)] {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
                ));
            }
        }
    }
    Ok(manifest)
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_image(path: &Path) -> Result<Image> {
    Ok(Image::from_rgb8(&open_image(path)?.to_rgb8()))
}

pub fn load_gaze_map(path: &Path) -> Result<GazeMap> {
    Ok(GazeMap::from_dynamic(&open_image(path)?))
}

/// Load, scale to `[0, 1]`, and bilinearly resize one record to `target_w × target_h`.
/// Boxes are rescaled by the image's resize ratios and clamped; boxes that vanish are dropped.
pub fn load_frame(manifest: &DatasetManifest, entry: &ManifestEntry, target_w: usize, target_h: usize) -> Result<Frame> {
    let image = load_image(&manifest.image_path(entry))?;
    let gaze = load_gaze_map(&manifest.gaze_path(entry))?;
    Ok(frame_from_parts(entry.id(), image, gaze, &entry.boxes, target_w, target_h))
}

pub fn frame_from_parts(id: String, image: Image, gaze: GazeMap, boxes: &[BBox], target_w: usize, target_h: usize) -> Frame {
    let sx = target_w as f64 / image.width() as f64;
    let sy = target_h as f64 / image.height() as f64;
    let boxes = boxes
        .iter()
        .filter_map(|b| b.rescaled(sx, sy).clamped(target_w, target_h))
        .collect();
    Frame {
        id,
        image: image.resize(target_h, target_w),
        gaze: gaze.resize(target_h, target_w),
        boxes,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn save_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Save as 8-bit grayscale PNG, byte = `round(v * 255)`.
pub fn save_gaze_map(map: &GazeMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    map.to_gray8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| save_err(path, e))
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    img.to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| save_err(path, e))
}
