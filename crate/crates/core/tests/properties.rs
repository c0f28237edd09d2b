//! Round trips and invariants over random inputs.

use proptest::prelude::*;

use cueing::cleanse::{mask_gaze, mask_image};
use cueing::data::{BBox, GazeMap, Image, ObjectClass};
use cueing::model::{read_checkpoint, write_checkpoint, CueingModel, FreezeMask, ModelConfig};
use cueing::nn::Tensor;
use cueing::render::{upsample_points, upsample_points_with, Interpolation};
use cueing::tokenizer::{fold, tokenize, tokenize_planes, unfold, untokenize, PointVector};
use cueing::train::{train, TrainConfig};
use cueing::synth::{synth_frames, SynthSpec};

fn token_count() -> impl Strategy<Value = usize> {
    prop_oneof![Just(4usize), Just(16), Just(64)]
}

/// `(T, H, W, pixels)` with H and W divisible by `√T`.
fn tokenizable() -> impl Strategy<Value = (usize, usize, usize, Vec<f32>)> {
    (token_count(), 1usize..4, 1usize..4).prop_flat_map(|(t, a, b)| {
        let side = (t as f64).sqrt() as usize;
        let (h, w) = (side * a, side * b);
        (Just(t), Just(h), Just(w), prop::collection::vec(0.0f32..=1.0, 3 * h * w))
    })
}

fn boxes(h: u32, w: u32) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec((0..w, 0..h, 1..w + 2, 1..h + 2, 0usize..10), 0..4).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, bw, bh, c)| BBox::new(ObjectClass::ALL[c], x, y, x + bw, y + bh))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tokenize_round_trip_is_exact((t, h, w, px) in tokenizable()) {
        let img = Image::from_vec(h, w, px).unwrap();
        let back = untokenize(&tokenize(&img, t).unwrap()).unwrap();
        prop_assert_eq!(back.data(), img.data());
    }

    #[test]
    fn fold_unfold_round_trip_is_exact((t, h, w, px) in tokenizable()) {
        let tokens = tokenize_planes(&px, 3, h, w, t).unwrap();
        let stack: Tensor<f32> = unfold(&tokens);
        prop_assert_eq!(stack.shape(), &[t, 3, h / tokens.grid(), w / tokens.grid()][..]);
        prop_assert_eq!(fold(&stack).unwrap(), tokens);
    }

    #[test]
    fn masking_is_idempotent_and_conserves_gaze(px in prop::collection::vec(0.0f32..=1.0, 12 * 15), b in boxes(12, 15)) {
        let g = GazeMap::from_vec(12, 15, px.clone()).unwrap();
        let once = mask_gaze(&g, &b);
        prop_assert_eq!(mask_gaze(&once, &b), once.clone());
        prop_assert!(once.sum() <= g.sum());
        let img = Image::from_fn(12, 15, |c, y, x| px[(y * 15 + x + c) % px.len()]);
        let mi = mask_image(&img, &b);
        prop_assert_eq!(mask_image(&mi, &b), mi);
    }

    #[test]
    fn upsampling_is_monotone_and_bounded(
        a in prop::collection::vec(-0.2f64..1.2, 16),
        bump in prop::collection::vec(0.0f64..0.5, 16),
        bicubic in any::<bool>(),
    ) {
        let kind = if bicubic { Interpolation::Bicubic } else { Interpolation::Bilinear };
        let b: Vec<f64> = a.iter().zip(&bump).map(|(x, d)| x + d).collect();
        let ma = upsample_points_with(&PointVector::new(a), 24, 36, 1.5, kind).unwrap();
        let mb = upsample_points_with(&PointVector::new(b), 24, 36, 1.5, kind).unwrap();
        prop_assert!(ma.data().iter().chain(mb.data()).all(|v| (0.0..=1.0).contains(v)));
        if !bicubic {
            // bicubic weights go negative, so only bilinear is order-preserving
            for (x, y) in ma.data().iter().zip(mb.data()) {
                prop_assert!(x <= y);
            }
        }
    }

    #[test]
    fn constant_points_stay_constant(c in 0.0f64..=1.0) {
        let m = upsample_points(&PointVector::new(vec![c; 64]), 40, 56, 2.5).unwrap();
        prop_assert!(m.data().iter().all(|&v| (f64::from(v) - c).abs() < 1e-6));
    }

    #[test]
    fn rescaled_boxes_keep_their_points(
        x1 in 0u32..50, y1 in 0u32..50, bw in 1u32..30, bh in 1u32..30,
        sx in 0.2f64..3.0, sy in 0.2f64..3.0,
    ) {
        let b = BBox::new(ObjectClass::Car, x1, y1, x1 + bw, y1 + bh);
        let r = b.rescaled(sx, sy);
        for y in b.y1..b.y2 {
            for x in b.x1..b.x2 {
                let (cx, cy) = ((f64::from(x) + 0.5) * sx, (f64::from(y) + 0.5) * sy);
                prop_assert!(cx >= f64::from(r.x1) && cx < f64::from(r.x2));
                prop_assert!(cy >= f64::from(r.y1) && cy < f64::from(r.y2));
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = ModelConfig {
        tokens: 16,
        width: 64,
        height: 48,
        encoder_layers: 2,
        heads: 2,
        ..ModelConfig::default()
    };
    let model = CueingModel::init(cfg, 5).unwrap();
    let bytes = write_checkpoint(&model).unwrap();
    let back = read_checkpoint(&bytes).unwrap();
    assert_eq!(write_checkpoint(&back).unwrap(), bytes);
    for ((_, a), (_, b)) in model.registry().iter().zip(back.registry().iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    let img = Image::from_fn(48, 64, |c, y, x| ((c + y * 3 + x * 7) % 11) as f32 / 10.0);
    assert_eq!(model.forward(&img).unwrap(), back.forward(&img).unwrap());

    let mut truncated = bytes.clone();
    truncated.pop();
    assert!(read_checkpoint(&truncated).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(read_checkpoint(&trailing).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let spec = SynthSpec {
        n_frames: 2,
        width: 64,
        height: 64,
        blob_sigma: 6.0,
        ..SynthSpec::default()
    };
    let frames: Vec<_> = synth_frames(&spec).unwrap().into_iter().map(|s| s.frame).collect();
    let mut model = CueingModel::init(ModelConfig::tiny(), 1).unwrap();
    let before = write_checkpoint(&model).unwrap();
    let mut cfg = TrainConfig {
        epochs: 2,
        freeze: FreezeMask::None,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 0.0;
    train(&mut model, &frames, &cfg).unwrap();
    assert_eq!(write_checkpoint(&model).unwrap(), before);
}
