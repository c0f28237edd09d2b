//! Turning per-token predictions back into full-resolution gaze maps, and
//! heat-map overlays for inspection.

use rayon::prelude::*;

use crate::data::{GazeMap, Image};
use crate::error::{Error, Result};
use crate::tokenizer::{grid_side, PointVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Catmull-Rom cubic; may overshoot before the final clamp.
    Bicubic,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            other => Err(Error::Config(format!("unknown interpolation `{other}` (bilinear or bicubic)"))),
        }
    }
}

/// Default smoothing width for a map `width` pixels wide.
pub fn default_sigma(width: usize) -> f64 {
    width as f64 / 64.0
}

/// Position of output pixel `i` on a `side`-cell grid whose values sit at cell centers.
fn grid_pos(i: usize, n: usize, side: usize) -> f64 {
    ((i as f64 + 0.5) * side as f64 / n as f64 - 0.5).clamp(0.0, (side - 1) as f64)
}

fn linear_taps(pos: f64, side: usize) -> [(usize, f64); 2] {
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(side - 1);
    let f = pos - i0 as f64;
    [(i0, 1.0 - f), (i1, f)]
}

fn cubic_taps(pos: f64, side: usize) -> [(usize, f64); 4] {
    let i = pos.floor();
    let t = pos - i;
    let w = [
        ((-0.5 * t + 1.0) * t - 0.5) * t,
        (1.5 * t - 2.5) * t * t + 1.0,
        ((-1.5 * t + 2.0) * t + 0.5) * t,
        (0.5 * t - 0.5) * t * t,
    ];
    let at = |k: i64| (i as i64 + k).clamp(0, side as i64 - 1) as usize;
    [(at(-1), w[0]), (at(0), w[1]), (at(1), w[2]), (at(2), w[3])]
}

fn taps(pos: f64, side: usize, kind: Interpolation) -> Vec<(usize, f64)> {
    match kind {
        Interpolation::Bilinear => linear_taps(pos, side).to_vec(),
        Interpolation::Bicubic => cubic_taps(pos, side).to_vec(),
    }
}

/// Interpolate a `√T × √T` grid of token values to `h × w`, without smoothing or clamping.
pub fn interpolate_points(points: &PointVector, h: usize, w: usize, kind: Interpolation) -> Result<Vec<f64>> {
    let side = grid_side(points.len())?;
    if h < side || w < side {
        return Err(Error::Dimension(format!("output {w}x{h} (WxH) is smaller than the {side}x{side} token grid")));
    }
    let v = &points.values;
    let col_taps: Vec<_> = (0..w).map(|x| taps(grid_pos(x, w, side), side, kind)).collect();
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let rt = taps(grid_pos(y, h, side), side, kind);
        for (o, ct) in row.iter_mut().zip(&col_taps) {
            let mut acc = 0.0;
            for &(r, wr) in &rt {
                for &(c, wc) in ct {
                    acc += wr * wc * v[r * side + c];
                }
            }
            *o = acc;
        }
    });
    Ok(out)
}

/// Normalized Gaussian weights for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// One separable pass along rows (`stride` 1) or columns (`stride` = width).
fn blur_pass(src: &[f64], h: usize, w: usize, kernel: &[f64], along_rows: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let (pos, n) = if along_rows { (x as i64, w as i64) } else { (y as i64, h as i64) };
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let q = pos + k as i64 - r;
                if q < 0 || q >= n {
                    continue;
                }
                let idx = if along_rows { y * w + q as usize } else { q as usize * w + x };
                acc += kw * src[idx];
                norm += kw;
            }
            *o = acc / norm;
        }
    });
    out
}

/// Separable Gaussian blur truncated at 3σ; the kernel is renormalized where it
/// leaves the map, so constants are preserved everywhere.
pub fn gaussian_blur_values(values: &[f64], h: usize, w: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    if values.len() != h * w {
        return Err(Error::Dimension(format!("{} values for a {w}x{h} map", values.len())));
    }
    let kernel = gaussian_kernel(sigma);
    let rows = blur_pass(values, h, w, &kernel, true);
    Ok(blur_pass(&rows, h, w, &kernel, false))
}

pub fn gaussian_blur(map: &GazeMap, sigma: f64) -> Result<GazeMap> {
    let v: Vec<f64> = map.data().iter().map(|&x| f64::from(x)).collect();
    let out = gaussian_blur_values(&v, map.height(), map.width(), sigma)?;
    GazeMap::from_vec(map.height(), map.width(), out.into_iter().map(|x| x as f32).collect())
}

/// Full-resolution gaze map from token predictions: interpolate with values
/// anchored at token centers, blur with `sigma` pixels (skipped when 0), clamp to `[0, 1]`.
pub fn upsample_points_with(points: &PointVector, h: usize, w: usize, sigma: f64, kind: Interpolation) -> Result<GazeMap> {
    let mut v = interpolate_points(points, h, w, kind)?;
    if sigma != 0.0 {
        v = gaussian_blur_values(&v, h, w, sigma)?;
    }
    GazeMap::from_vec(h, w, v.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect())
}

pub fn upsample_points(points: &PointVector, h: usize, w: usize, sigma: f64) -> Result<GazeMap> {
    upsample_points_with(points, h, w, sigma, Interpolation::Bilinear)
}

/// Jet-style colormap entry `i` of 256: blue, cyan, green, yellow, red.
pub fn colormap_entry(i: u8) -> [u8; 3] {
    let x = f64::from(i) / 255.0;
    let ch = |c: f64| ((1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

pub fn colormap() -> [[u8; 3]; 256] {
    std::array::from_fn(|i| colormap_entry(i as u8))
}

/// Colormap index for a gaze value.
pub fn color_index(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Heat-colored gaze map blended over `image`: `(1 - α)·image + α·color(map)`.
pub fn overlay(image: &Image, map: &GazeMap, alpha: f32) -> Result<Image> {
    if image.height() != map.height() || image.width() != map.width() {
        return Err(Error::Dimension(format!(
            "overlay image is {}x{} but map is {}x{}",
            image.width(),
            image.height(),
            map.width(),
            map.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let table = colormap();
    let w = image.width();
    Ok(Image::from_fn(image.height(), w, |c, y, x| {
        let col = f32::from(table[color_index(map.get(y, x)) as usize][c]) / 255.0;
        (1.0 - alpha) * image.get(c, y, x) + alpha * col
    }))
}

/// The colormap as a Markdown table.
pub fn colormap_markdown() -> String {
    let mut s = String::from("| index | R | G | B |\n|---:|---:|---:|---:|\n");
    for (i, [r, g, b]) in colormap().iter().enumerate() {
        s.push_str(&format!("| {i} | {r} | {g} | {b} |\n"));
    }
    s
}
