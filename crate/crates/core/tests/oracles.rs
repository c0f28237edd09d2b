//! Library results against independent scalar-loop reimplementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cueing::cleanse::{mask_gaze, mask_image};
use cueing::data::{load_gaze_map, save_gaze_map, BBox, GazeMap, Image, ObjectClass};
use cueing::metrics::{metrics_from_samples, object_samples, pixel_level_metrics, rank_auc, FOCUS_THRESHOLD};
use cueing::model::{count_flops, param_breakdown, CueingModel, ModelConfig};
use cueing::nn::ops::conv2d;
use cueing::nn::Tensor;
use cueing::render::{gaussian_blur, upsample_points, upsample_points_with, Interpolation};
use cueing::tokenizer::{downsample_gaze, PointVector};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_box(r: &mut ChaCha8Rng, h: usize, w: usize) -> BBox {
    let class = ObjectClass::ALL[r.random_range(0..ObjectClass::ALL.len())];
    let x1 = r.random_range(0..w as u32);
    let y1 = r.random_range(0..h as u32);
    // boxes may poke past the border; masking clamps them
    let x2 = (x1 + r.random_range(1..=w as u32 / 2)).min(w as u32 + 3);
    let y2 = (y1 + r.random_range(1..=h as u32 / 2)).min(h as u32 + 3);
    BBox::new(class, x1, y1, x2, y2)
}

fn random_map(r: &mut ChaCha8Rng, h: usize, w: usize) -> GazeMap {
    GazeMap::from_fn(h, w, |_, _| r.random::<f32>())
}

fn inside(b: &BBox, y: usize, x: usize) -> bool {
    (b.x1 as usize..b.x2 as usize).contains(&x) && (b.y1 as usize..b.y2 as usize).contains(&y)
}

#[test]
fn masking_matches_membership_oracle() {
    let mut r = rng(11);
    for _ in 0..25 {
        let (h, w) = (r.random_range(5..40), r.random_range(5..40));
        let boxes: Vec<BBox> = (0..r.random_range(0..5)).map(|_| random_box(&mut r, h, w)).collect();
        let img = Image::from_fn(h, w, |_, _, _| r.random::<f32>());
        let gaze = random_map(&mut r, h, w);
        let mi = mask_image(&img, &boxes);
        let mg = mask_gaze(&gaze, &boxes);
        for y in 0..h {
            for x in 0..w {
                let keep = boxes.iter().any(|b| inside(b, y, x));
                for c in 0..3 {
                    let want = if keep { img.get(c, y, x) } else { 0.0 };
                    assert_eq!(mi.get(c, y, x).to_bits(), want.to_bits());
                }
                let want = if keep { gaze.get(y, x) } else { 0.0 };
                assert_eq!(mg.get(y, x).to_bits(), want.to_bits());
            }
        }
    }
}

#[test]
fn downsampling_matches_brute_force_means() {
    let mut r = rng(12);
    for &(t, h, w) in &[(4, 6, 10), (16, 32, 48), (64, 24, 40), (256, 48, 80)] {
        let g = random_map(&mut r, h, w);
        let got = downsample_gaze(&g, t).unwrap();
        let side = (t as f64).sqrt() as usize;
        let (th, tw) = (h / side, w / side);
        for i in 0..t {
            let (r0, c0) = ((i / side) * th, (i % side) * tw);
            let mut s = 0.0f64;
            for y in r0..r0 + th {
                for x in c0..c0 + tw {
                    s += f64::from(g.get(y, x));
                }
            }
            let want = s / (th * tw) as f64;
            assert!((got.values[i] - want).abs() <= 1e-12, "token {i}: {} vs {want}", got.values[i]);
        }
    }
}

#[test]
fn object_metrics_match_scalar_confusion_oracle() {
    let mut r = rng(13);
    let (h, w) = (30, 40);
    let mut frames = Vec::new();
    let mut n = 0;
    while n < 100 {
        let k = r.random_range(1..=5).min(100 - n);
        let boxes: Vec<BBox> = (0..k)
            .map(|_| {
                let b = random_box(&mut r, h, w);
                BBox::new(b.class, b.x1, b.y1, b.x2.min(w as u32), b.y2.min(h as u32))
            })
            .collect();
        // low background with occasional hot pixels inside boxes, so both labels occur
        let mut pred = GazeMap::from_fn(h, w, |_, _| r.random::<f32>() * 0.45);
        let mut gt = GazeMap::from_fn(h, w, |_, _| r.random::<f32>() * 0.45);
        for b in &boxes {
            for map in [&mut pred, &mut gt] {
                if r.random_bool(0.5) {
                    let y = r.random_range(b.y1..b.y2) as usize;
                    let x = r.random_range(b.x1..b.x2) as usize;
                    map.set(y, x, r.random_range(0.3..1.0));
                }
            }
        }
        n += k;
        frames.push((pred, gt, boxes));
    }

    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut samples = Vec::new();
    for (pred, gt, boxes) in &frames {
        for b in boxes {
            let mut pm = f32::MIN;
            let mut gm = f32::MIN;
            for y in b.y1 as usize..b.y2 as usize {
                for x in b.x1 as usize..b.x2 as usize {
                    pm = pm.max(pred.get(y, x));
                    gm = gm.max(gt.get(y, x));
                }
            }
            let (p, g) = (pm > 0.5, gm > 0.5);
            match (g, p) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fneg += 1,
            }
            scores.push(f64::from(pm));
            labels.push(g);
        }
        samples.extend(object_samples(pred, gt, boxes, FOCUS_THRESHOLD).unwrap());
    }
    assert_eq!(samples.len(), 100);
    let m = metrics_from_samples(&samples).unwrap();
    assert_eq!((m.confusion.tp, m.confusion.fp, m.confusion.tn, m.confusion.r#fn), (tp, fp, tn, fneg));
    assert!(tp > 0 && tn > 0 && fp + fneg > 0, "fixture should exercise every cell");
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let precision = pct(tp, tp + fp);
    let recall = pct(tp, tp + fneg);
    assert_eq!(m.accuracy, pct(tp + tn, 100));
    assert_eq!(m.precision, precision);
    assert_eq!(m.recall, recall);
    assert_eq!(m.f1, 2.0 * precision * recall / (precision + recall));

    // pairwise definition of AUC
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    assert!((m.auc.unwrap() - wins / pairs).abs() < 1e-12);
}

#[test]
fn auc_handles_ties_like_pairwise_count() {
    let mut r = rng(14);
    for _ in 0..50 {
        let n = r.random_range(2..40);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..5u8)) / 4.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|p| *p.1).map(|p| *p.0).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|p| !*p.1).map(|p| *p.0).collect();
        let got = rank_auc(&scores, &labels);
        if pos.is_empty() || neg.is_empty() {
            assert!(got.is_none());
            continue;
        }
        let mut s = 0.0;
        for &p in &pos {
            for &q in &neg {
                s += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
        assert!((got.unwrap() - s / (pos.len() * neg.len()) as f64).abs() < 1e-12);
    }
}

#[test]
fn kl_and_cc_match_scalar_references() {
    let mut r = rng(15);
    for _ in 0..20 {
        let (h, w) = (r.random_range(4..30), r.random_range(4..30));
        let p = random_map(&mut r, h, w);
        let q = random_map(&mut r, h, w);
        let got = pixel_level_metrics(&p, &q).unwrap();

        let eps = 1e-7;
        let (mut sp, mut sq) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                sp += f64::from(p.get(y, x)) + eps;
                sq += f64::from(q.get(y, x)) + eps;
            }
        }
        let mut kl = 0.0;
        for y in 0..h {
            for x in 0..w {
                let pi = (f64::from(p.get(y, x)) + eps) / sp;
                let qi = (f64::from(q.get(y, x)) + eps) / sq;
                kl += qi * (qi / pi).ln();
            }
        }
        assert!((got.kl - kl).abs() <= 1e-10, "{} vs {kl}", got.kl);

        let n = (h * w) as f64;
        let mp = p.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let mq = q.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vp = 0.0;
        let mut vq = 0.0;
        for i in 0..h * w {
            let a = f64::from(p.data()[i]) - mp;
            let b = f64::from(q.data()[i]) - mq;
            cov += a * b;
            vp += a * a;
            vq += b * b;
        }
        let cc = cov / (vp * vq).sqrt();
        assert!((got.cc.unwrap() - cc).abs() <= 1e-10);
    }
}

#[test]
fn self_comparison_and_constant_maps() {
    let mut r = rng(16);
    let g = random_map(&mut r, 20, 30);
    let m = pixel_level_metrics(&g, &g).unwrap();
    assert!(m.kl.abs() <= 1e-6);
    assert!((m.cc.unwrap() - 1.0).abs() < 1e-9);
    let flat = GazeMap::from_fn(20, 30, |_, _| 0.3);
    let mut blob = GazeMap::zeros(20, 30);
    blob.set(10, 15, 1.0);
    let m = pixel_level_metrics(&flat, &blob).unwrap();
    assert!(m.kl > 0.0);
    assert!(m.cc.is_none());
}

fn naive_conv(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], b: &[f64], cout: usize, k: usize, s: usize, p: usize) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[o];
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += wt[((o * cin + c) * k + ky) * k + kx] * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, ho, wo)
}

#[test]
fn conv_matches_direct_loops() {
    let mut r = rng(17);
    for &(cin, cout, h, w, k, s, p) in &[(3, 4, 9, 11, 3, 2, 1), (2, 3, 8, 8, 3, 1, 1), (4, 2, 7, 10, 1, 1, 0), (3, 5, 12, 6, 5, 2, 2)] {
        let x: Vec<f64> = (0..2 * cin * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..cout * cin * k * k).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = conv2d(
            &Tensor::from_vec(&[2, cin, h, w], x.clone()).unwrap(),
            &Tensor::from_vec(&[cout, cin, k, k], wt.clone()).unwrap(),
            &Tensor::from_vec(&[cout], b.clone()).unwrap(),
            s,
            p,
        )
        .unwrap();
        for n in 0..2 {
            let (want, ho, wo) = naive_conv(&x[n * cin * h * w..(n + 1) * cin * h * w], cin, h, w, &wt, &b, cout, k, s, p);
            assert_eq!(got.shape(), &[2, cout, ho, wo]);
            let part = &got.data()[n * want.len()..(n + 1) * want.len()];
            for (a, b) in part.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn default_parameter_count_is_closed_form() {
    // positional 1x1 conv 2->1, two 3x3 convs (3->16, 16->16), CBAM MLP 16->4->16,
    // one pre-norm encoder layer with d=64 and FFN width 128, and a TxT head.
    let (c, k2, d, f, t, hid) = (16, 9, 64, 128, 256, 4);
    let pos = 2 + 1;
    let conv1 = 3 * c * k2 + c;
    let conv2 = c * c * k2 + c;
    let ca = (c * hid + hid) + (hid * c + c);
    let enc = 2 * (2 * d) + 4 * (d * d + d) + (d * f + f) + (f * d + d);
    let head = t * t + t;
    let total = pos + conv1 + conv2 + ca + enc + head;
    assert_eq!(total, 102_183);
    let cfg = ModelConfig::default();
    assert_eq!(param_breakdown(&cfg).iter().map(|p| p.1).sum::<usize>(), total);
    assert_eq!(CueingModel::init(cfg, 0).unwrap().count_params(false), total);
}

/// Sum of overlapping adaptive-pool window sizes along one axis.
fn pool_windows(n: usize, p: usize) -> u64 {
    (0..p).map(|i| ((i + 1) * n).div_ceil(p) - (i * n) / p).sum::<usize>() as u64
}

#[test]
fn default_flops_are_closed_form() {
    let t: u64 = 256;
    let (h, w) = (720u64, 1280u64);
    let (th, tw) = (h / 16, w / 16);
    let out = |n: u64| (n + 2 - 3) / 2 + 1;
    let (h1, w1) = (out(th), out(tw));
    let (h2, w2) = (out(h1), out(w1));
    assert_eq!((h1, w1, h2, w2), (23, 40, 12, 20));
    let d = 64;
    let stages = [
        ("positional", 2 * h * w),
        ("tokenize", 0),
        ("conv1", t * h1 * w1 * 16 * 3 * 9),
        ("conv2", t * h2 * w2 * 16 * 16 * 9),
        ("channel_attention", t * (16 * h2 * w2 + 2 * (16 * 4 + 4 * 16) + 16 * h2 * w2)),
        ("pool", t * pool_windows(12, 8) * pool_windows(20, 8)),
        ("encoder", 4 * t * d * d + 2 * t * t * d + 2 * t * d * 128),
        ("spatial_mean", t * d),
        ("head", t * t),
    ];
    let report = count_flops(&ModelConfig::default()).unwrap();
    for (name, macs) in stages {
        assert_eq!(report.stage(name), Some(macs), "{name}");
    }
    assert_eq!(report.total(), stages.iter().map(|s| s.1).sum::<u64>());
    assert_eq!(report.total(), 264_134_656);
}

#[test]
fn blur_of_delta_is_discrete_gaussian() {
    let (h, w, sigma) = (41, 41, 3.0);
    let mut m = GazeMap::zeros(h, w);
    m.set(20, 20, 1.0);
    let out = gaussian_blur(&m, sigma).unwrap();
    let r = (3.0f64 * sigma).ceil() as i64;
    let z: f64 = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).sum();
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as i64 - 20, x as i64 - 20);
            let want = if dy.abs() <= r && dx.abs() <= r {
                (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp() / (z * z)
            } else {
                0.0
            };
            assert!((f64::from(out.get(y, x)) - want).abs() < 1e-6);
        }
    }
}

#[test]
fn blur_semigroup_and_constants() {
    let mut r = rng(18);
    let m = GazeMap::from_fn(60, 60, |_, _| r.random::<f32>());
    let twice = gaussian_blur(&gaussian_blur(&m, 2.0).unwrap(), 2.0).unwrap();
    let once = gaussian_blur(&m, 2.0 * std::f64::consts::SQRT_2).unwrap();
    // compare away from the renormalized border
    for y in 15..45 {
        for x in 15..45 {
            assert!((twice.get(y, x) - once.get(y, x)).abs() <= 1e-3);
        }
    }
    let flat = GazeMap::from_fn(17, 23, |_, _| 0.625);
    let b = gaussian_blur(&flat, 4.0).unwrap();
    assert!(b.data().iter().all(|&v| (f64::from(v) - 0.625).abs() <= 1e-9));
}

#[test]
fn single_hot_point_peaks_at_token_center() {
    for kind in [Interpolation::Bilinear, Interpolation::Bicubic] {
        let mut v = vec![0.0; 16];
        v[6] = 1.0; // row 1, column 2 of a 4x4 grid
        let m = upsample_points_with(&PointVector::new(v), 64, 96, 3.0, kind).unwrap();
        let (mut best, mut at) = (f32::MIN, (0, 0));
        for y in 0..64 {
            for x in 0..96 {
                if m.get(y, x) > best {
                    best = m.get(y, x);
                    at = (y, x);
                }
            }
        }
        // token (1, 2) covers rows 16..32 and columns 48..72; its center is (23.5, 59.5)
        assert!((at.0 as f64 - 23.5).abs() <= 0.5 && (at.1 as f64 - 59.5).abs() <= 0.5, "{kind:?}: {at:?}");
        let row: Vec<f32> = (60..96).map(|x| m.get(at.0, x)).collect();
        assert!(row.windows(2).all(|p| p[1] <= p[0] + 1e-7), "{kind:?} not decreasing to the right");
    }
    let zero = upsample_points(&PointVector::new(vec![0.0; 16]), 32, 32, 2.0).unwrap();
    assert!(zero.is_all_zero());
}

#[test]
fn gaze_png_quantization_bound() {
    let mut r = rng(19);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..5 {
        let m = random_map(&mut r, 17, 29);
        let p = dir.path().join(format!("g{i}.png"));
        save_gaze_map(&m, &p).unwrap();
        let back = load_gaze_map(&p).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }
}
