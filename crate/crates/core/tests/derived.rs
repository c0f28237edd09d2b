//! Properties checked by scanning, permuting or recomputing by hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cueing::cleanse::{cleanse_dataset, mask_gaze, union_mask, CleanseOptions};
use cueing::data::{load_gaze_map, BBox, Frame, GazeMap, Image, ObjectClass};
use cueing::eval::{report_from_predictions, RenderParams};
use cueing::model::{CueingModel, ModelConfig};
use cueing::nn::loss::bce_loss;
use cueing::nn::{ChannelAttention, EncoderLayer, EncoderSpec, Registry, Tensor};
use cueing::synth::{synth_dataset, synth_frames, SynthSpec};
use cueing::tokenizer::{tokenize, untokenize};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn inside(b: &BBox, y: f64, x: f64) -> bool {
    x >= f64::from(b.x1) && x < f64::from(b.x2) && y >= f64::from(b.y1) && y < f64::from(b.y2)
}

#[test]
fn distractor_free_gaze_sits_on_boxes() {
    let spec = SynthSpec {
        n_frames: 12,
        seed: 3,
        ..SynthSpec::default()
    };
    for s in synth_frames(&spec).unwrap() {
        let f = &s.frame;
        assert!(s.distractor.is_none());
        assert_eq!(f.gaze, s.clean_gaze);
        for &(cy, cx) in &s.blob_centers {
            assert!(f.boxes.iter().any(|b| inside(b, cy, cx)), "{}: blob center outside every box", f.id);
        }
        // k unit blobs, normalized by a max no lower than a half-pixel-offset
        // peak: a pixel above 0.05 needs a center within sqrt(2 sigma^2 ln(20k) + 1/2)
        let k = s.blob_centers.len() as f64;
        let reach = (2.0 * spec.blob_sigma.powi(2) * (20.0 * k).ln() + 0.5).sqrt();
        let (mut best, mut at) = (0.0f32, (0, 0));
        for y in 0..spec.height {
            for x in 0..spec.width {
                let v = f.gaze.get(y, x);
                if v > best {
                    best = v;
                    at = (y, x);
                }
                if v > 0.05 {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let near = s.blob_centers.iter().map(|&(cy, cx)| ((py - cy).powi(2) + (px - cx).powi(2)).sqrt()).fold(f64::MAX, f64::min);
                    assert!(near <= reach, "{}: pixel ({y}, {x}) = {v} is {near:.1} px from every center", f.id);
                }
            }
        }
        assert!(f.boxes.iter().any(|b| inside(b, at.0 as f64 + 0.5, at.1 as f64 + 0.5)), "{}: peak outside boxes", f.id);
    }
}

#[test]
fn overlapping_boxes_copy_the_overlap_once() {
    let g = GazeMap::from_fn(20, 24, |y, x| ((y * 24 + x) % 17) as f32 / 16.0);
    let a = BBox::new(ObjectClass::Car, 2, 3, 14, 12);
    let b = BBox::new(ObjectClass::Pedestrian, 8, 6, 20, 18);
    for boxes in [vec![a, b], vec![b, a], vec![a, b, a]] {
        let m = mask_gaze(&g, &boxes);
        for y in 0..20 {
            for x in 0..24 {
                let (py, px) = (y as f64, x as f64);
                let want = if inside(&a, py, px) || inside(&b, py, px) { g.get(y, x) } else { 0.0 };
                assert_eq!(m.get(y, x).to_bits(), want.to_bits(), "({y}, {x})");
            }
        }
    }
}

#[test]
fn blob_straddling_an_edge_is_cut_there() {
    let (h, w) = (30, 40);
    let blob = GazeMap::from_fn(h, w, |y, x| {
        let d2 = (y as f64 + 0.5 - 15.0).powi(2) + (x as f64 + 0.5 - 20.0).powi(2);
        (-d2 / 50.0).exp() as f32
    });
    // the box edge at x = 20 runs through the blob center
    let b = BBox::new(ObjectClass::Car, 0, 0, 20, 30);
    let m = mask_gaze(&blob, &[b]);
    for y in 0..h {
        for x in 0..w {
            let want = if x < 20 { blob.get(y, x) } else { 0.0 };
            assert_eq!(m.get(y, x), want);
        }
    }
    let kept: f64 = m.data().iter().map(|&v| f64::from(v)).sum();
    let total: f64 = blob.data().iter().map(|&v| f64::from(v)).sum();
    assert!((kept / total - 0.5).abs() < 1e-6);
}

#[test]
fn cleanse_report_counts_empty_frames_like_a_scan() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_frames: 10,
        width: 96,
        height: 64,
        blob_sigma: 6.0,
        distractor_blob_prob: 1.0,
        seed: 21,
        ..SynthSpec::default()
    };
    let mut manifest = synth_dataset(&spec, &dir.path().join("raw")).unwrap();
    // shrink some boxes to corners the gaze never reaches
    let mut r = rng(4);
    for e in manifest.entries.iter_mut() {
        if r.random_bool(0.4) {
            e.boxes = vec![BBox::new(ObjectClass::TrafficSign, 0, 0, 1, 1)];
        }
    }
    let (_, report) = cleanse_dataset(&manifest, &dir.path().join("clean"), CleanseOptions::default()).unwrap();

    let mut want = Vec::new();
    for e in &manifest.entries {
        let g = load_gaze_map(&manifest.gaze_path(e)).unwrap();
        let keep = union_mask(&e.boxes, g.height(), g.width());
        let mut any = false;
        for y in 0..g.height() {
            for x in 0..g.width() {
                let covered = e.boxes.iter().any(|b| inside(b, y as f64, x as f64));
                assert_eq!(keep[y * g.width() + x], covered);
                any |= covered && g.get(y, x) != 0.0;
            }
        }
        if !any {
            want.push(e.id());
        }
    }
    assert!(!want.is_empty() && want.len() < manifest.len(), "fixture should mix empty and non-empty frames");
    assert_eq!(report.zero_gaze_frames, want.len());
    assert_eq!(report.zero_gaze_ids, want);
}

#[test]
fn permuted_tokens_restore_after_inverse_permutation() {
    let mut r = rng(5);
    for &(t, h, w) in &[(4, 6, 8), (16, 32, 48), (64, 16, 24)] {
        let img = Image::from_fn(h, w, |_, _, _| r.random::<f32>());
        let tokens = tokenize(&img, t).unwrap();
        let n = tokens.token_len();
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut r);
        let mut shuffled = tokens.clone();
        for (dst, &src) in perm.iter().enumerate() {
            shuffled.data[dst * n..(dst + 1) * n].copy_from_slice(tokens.token(src));
        }
        if t > 1 && perm.iter().enumerate().any(|(i, &p)| i != p) {
            assert_ne!(shuffled, tokens);
        }
        let mut restored = shuffled.clone();
        for (dst, &src) in perm.iter().enumerate() {
            restored.data[src * n..(src + 1) * n].copy_from_slice(shuffled.token(dst));
        }
        assert_eq!(untokenize(&restored).unwrap(), img);
    }
}

#[test]
fn encoder_layer_is_permutation_equivariant() {
    let mut r = rng(6);
    for symmetric_qk in [false, true] {
        let spec = EncoderSpec {
            d_model: 16,
            heads: 4,
            ffn_hidden: 32,
            symmetric_qk,
        };
        let mut reg = Registry::<f64>::new();
        let enc = EncoderLayer::register(&mut reg, "enc", spec, &mut r).unwrap();
        let (t, d) = (9, 16);
        let x = Tensor::from_fn(&[t, d], |_| r.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut r);
        let px = Tensor::from_fn(&[t, d], |i| x.data()[perm[i / d] * d + i % d]);
        let (y, _) = enc.forward(&reg, &x).unwrap();
        let (py, _) = enc.forward(&reg, &px).unwrap();
        for i in 0..t {
            for j in 0..d {
                let a = py.data()[i * d + j];
                let b = y.data()[perm[i] * d + j];
                assert!((a - b).abs() < 1e-12, "row {i} col {j}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn channel_mean_matches_per_pixel_average() {
    let mut r = rng(7);
    let mut reg = Registry::<f64>::new();
    let ca = ChannelAttention::register(&mut reg, "ca", 16, 4, false, &mut r).unwrap();
    let (n, c, h, w) = (3, 16, 5, 7);
    let v = Tensor::from_fn(&[n, c, h, w], |_| r.random_range(-1.0..2.0));
    let (mean, cache) = ca.forward(&reg, &v).unwrap();
    let gated = ChannelAttention::weighted(&cache);
    assert_eq!(mean.shape(), &[n, h, w]);
    for s in 0..n {
        for p in 0..h * w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += gated.data()[(s * c + ch) * h * w + p];
            }
            assert!((mean.data()[s * h * w + p] - acc / c as f64).abs() <= 1e-12);
        }
    }
}

#[test]
fn bce_matches_scalar_loop() {
    let mut r = rng(8);
    for _ in 0..50 {
        let n = r.random_range(1..300);
        let p: Vec<f64> = (0..n).map(|_| r.random_range(1e-4..1.0 - 1e-4)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let mut s = 0.0;
        for i in 0..n {
            s -= y[i] * p[i].ln() + (1.0 - y[i]) * (1.0 - p[i]).ln();
        }
        let want = s / n as f64;
        assert!((bce_loss(&p, &y).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn edits_inside_one_token_stay_in_that_token_until_unfold() {
    let cfg = ModelConfig {
        tokens: 16,
        width: 64,
        height: 48,
        ..ModelConfig::default()
    };
    let model = CueingModel::init(cfg, 9).unwrap();
    let mut r = rng(9);
    let a = Image::from_fn(48, 64, |_, _, _| r.random::<f32>());
    let k = 6; // row 1, column 2 of the 4x4 grid: rows 12..24, columns 32..48
    let mut b = a.clone();
    for c in 0..3 {
        for y in 12..24 {
            for x in 32..48 {
                b.set(c, y, x, r.random::<f32>());
            }
        }
    }
    let ta = model.forward_trace(&a).unwrap();
    let tb = model.forward_trace(&b).unwrap();
    assert_eq!(ta.positional, tb.positional);
    let n = ta.tokens.len() / 16;
    for i in 0..16 {
        let same = ta.tokens.data()[i * n..(i + 1) * n] == tb.tokens.data()[i * n..(i + 1) * n];
        assert_eq!(same, i != k, "token {i}");
    }
    // per-token convolutions keep the change local too
    let m = ta.features.len() / 16;
    for i in 0..16 {
        let same = ta.features.data()[i * m..(i + 1) * m] == tb.features.data()[i * m..(i + 1) * m];
        assert_eq!(same, i != k, "features of token {i}");
    }
}

fn frame(id: &str, gaze: GazeMap, boxes: Vec<BBox>) -> Frame {
    let (h, w) = (gaze.height(), gaze.width());
    Frame {
        id: id.into(),
        image: Image::from_fn(h, w, |_, _, _| 0.0),
        gaze,
        boxes,
    }
}

#[test]
fn two_frame_report_matches_hand_computation() {
    // ground truth: left half 1, right half 0, on a 4x4 map
    let gt = GazeMap::from_fn(4, 4, |_, x| if x < 2 { 1.0 } else { 0.0 });
    let left = BBox::new(ObjectClass::Car, 0, 0, 2, 2);
    let right = BBox::new(ObjectClass::Bus, 2, 2, 4, 4);
    let frames = vec![frame("a", gt.clone(), vec![left, right]), frame("b", gt.clone(), vec![left, right])];
    // frame a is predicted perfectly, frame b flat at the threshold
    let preds = vec![gt.clone(), GazeMap::from_fn(4, 4, |_, _| 0.5)];
    let report = report_from_predictions(&frames, &preds, &RenderParams::default()).unwrap();

    // a: left tp, right tn. b: left fn (0.5 is not above 0.5), right tn.
    let o = report.object.unwrap();
    assert_eq!((o.confusion.tp, o.confusion.fp, o.confusion.tn, o.confusion.r#fn), (1, 0, 2, 1));
    assert_eq!(o.accuracy, 75.0);
    assert_eq!(o.precision, 100.0);
    assert_eq!(o.recall, 50.0);
    assert!((o.f1 - 200.0 / 3.0).abs() < 1e-12);
    // positive scores {1, 0.5} against negative scores {0, 0.5}: 3.5 of 4 pairs
    assert_eq!(report.auc, Some(0.875));
    // a: zero. b: q is 1/8 on eight pixels and p is 1/16 everywhere, so ln 2
    assert_eq!(report.per_frame[0].kl, 0.0);
    assert!((report.per_frame[1].kl - std::f64::consts::LN_2).abs() < 1e-5);
    assert!((report.kl - std::f64::consts::LN_2 / 2.0).abs() < 1e-5);
    // b is constant, so only a contributes a correlation
    assert_eq!(report.per_frame[1].cc, None);
    assert!((report.cc.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(report.frames, 2);

    let single = report_from_predictions(&frames[1..], &preds[1..], &RenderParams::default()).unwrap();
    assert_eq!(single.kl, single.per_frame[0].kl);
    assert_eq!(single.cc, single.per_frame[0].cc);
    let one = single.object.unwrap();
    assert_eq!(one.objects, single.per_frame[0].objects);
    assert_eq!(one.accuracy, 100.0 * single.per_frame[0].correct as f64 / one.objects as f64);
}
