//! Bounding-box cleansing: keep only pixels (and gaze) inside the union of
//! driving-relevant object boxes, zero everything else.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{load_gaze_map, load_image, save_gaze_map, save_image, BBox, DatasetManifest, GazeMap, Image, ManifestEntry};
use crate::error::{Error, Result};

/// Row-major membership mask for the union of `boxes` over an `h × w` grid.
pub fn union_mask(boxes: &[BBox], h: usize, w: usize) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for b in boxes.iter().filter_map(|b| b.clamped(w, h)) {
        for y in b.y1 as usize..b.y2 as usize {
            mask[y * w + b.x1 as usize..y * w + b.x2 as usize].fill(true);
        }
    }
    mask
}

pub fn mask_image(image: &Image, boxes: &[BBox]) -> Image {
    let (h, w) = (image.height(), image.width());
    let mask = union_mask(boxes, h, w);
    let mut out = image.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        for (v, &keep) in plane.iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    out
}

pub fn mask_gaze(gaze: &GazeMap, boxes: &[BBox]) -> GazeMap {
    let mask = union_mask(boxes, gaze.height(), gaze.width());
    let mut out = gaze.clone();
    for (v, &keep) in out.data_mut().iter_mut().zip(&mask) {
        if !keep {
            *v = 0.0;
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanseReport {
    pub frames: usize,
    /// Frames whose masked gaze is entirely zero.
    pub zero_gaze_frames: usize,
    pub zero_gaze_ids: Vec<String>,
    pub dropped: usize,
}

impl CleanseReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "frames={}\nzero_gaze_frames={}\ndropped={}\n",
            self.frames, self.zero_gaze_frames, self.dropped
        );
        for id in &self.zero_gaze_ids {
            s.push_str(&format!("zero_gaze={id}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CleanseOptions {
    /// Omit frames whose masked gaze is all zero from the output manifest.
    pub drop_empty_gaze: bool,
}

/// Mask every entry of `manifest` at its native resolution and write the
/// results under `out_dir`, mirroring the input relative paths.
pub fn cleanse_dataset(
    manifest: &DatasetManifest,
    out_dir: &Path,
    opts: CleanseOptions,
) -> Result<(DatasetManifest, CleanseReport)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(bool, String)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let image = load_image(&manifest.image_path(entry))?;
            let gaze = load_gaze_map(&manifest.gaze_path(entry))?;
            let masked_image = mask_image(&image, &entry.boxes);
            let masked_gaze = mask_gaze(&gaze, &entry.boxes);
            save_image(&masked_image, &out_dir.join(&entry.image_path))?;
            save_gaze_map(&masked_gaze, &out_dir.join(&entry.gaze_path))?;
            Ok((masked_gaze.is_all_zero(), entry.id()))
        })
        .collect::<Result<_>>()?;

    let mut report = CleanseReport {
        frames: manifest.len(),
        ..CleanseReport::default()
    };
    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(manifest.len());
    for (entry, (empty, id)) in manifest.entries.iter().zip(results) {
        if empty {
            report.zero_gaze_frames += 1;
            report.zero_gaze_ids.push(id);
            if opts.drop_empty_gaze {
                report.dropped += 1;
                continue;
            }
        }
        entries.push(entry.clone());
    }
    let out = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    out.save(&out_dir.join("manifest.txt"))?;
    let report_path = out_dir.join("cleanse_report.txt");
    fs::write(&report_path, report.to_text()).map_err(|e| Error::io(&report_path, e))?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObjectClass;

    fn ramp(h: usize, w: usize) -> GazeMap {
        GazeMap::from_fn(h, w, |y, x| ((y * w + x) as f32 + 1.0) / (h * w) as f32)
    }

    #[test]
    fn no_boxes_zeroes_everything() {
        let img = Image::from_fn(4, 5, |_, _, _| 0.7);
        assert!(mask_image(&img, &[]).data().iter().all(|&v| v == 0.0));
        assert!(mask_gaze(&ramp(4, 5), &[]).is_all_zero());
    }

    #[test]
    fn full_box_is_identity() {
        let g = ramp(6, 8);
        let b = BBox::new(ObjectClass::Car, 0, 0, 8, 6);
        assert_eq!(mask_gaze(&g, &[b]), g);
        let img = Image::from_fn(6, 8, |c, y, x| ((c + y + x) % 7) as f32 / 7.0);
        assert_eq!(mask_image(&img, &[b]), img);
    }

    #[test]
    fn straddling_blob_split_at_edge() {
        let g = GazeMap::from_fn(4, 8, |_, x| if (2..6).contains(&x) { 1.0 } else { 0.0 });
        let out = mask_gaze(&g, &[BBox::new(ObjectClass::Pedestrian, 0, 0, 4, 4)]);
        for y in 0..4 {
            for x in 0..8 {
                let expect = if (2..4).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(out.get(y, x), expect);
            }
        }
    }

    #[test]
    fn idempotent_and_conservative() {
        let g = ramp(10, 12);
        let boxes = [
            BBox::new(ObjectClass::Car, 1, 1, 5, 6),
            BBox::new(ObjectClass::Bus, 3, 4, 11, 9),
        ];
        let once = mask_gaze(&g, &boxes);
        assert_eq!(mask_gaze(&once, &boxes), once);
        assert!(once.sum() <= g.sum());
    }
}
