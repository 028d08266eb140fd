use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use fss_core::augment::{
    apply_affine_to_mask, build_support_set, warp_image_nearest, AffineParams, AffineTransform, AugmentPolicy,
};
use fss_core::eval::{dice, FoldPlan};
use fss_core::image::{BinaryMask, BitDepth, GrayImage, LabeledSlice, SliceVolume};
use fss_core::matcher::{argmin, match_volume, MatchesFile, MetricConfig};
use fss_core::segmenter::{flood_backend, identity_backend, PromptedSequence, SegmenterBackend};
use fss_core::similarity::{lpips, psnr, ssim, IdentityExtractor, LayerWeights, TinyFixedExtractor};
use fss_core::volume_io::{decode_gray_png, decode_mask_png, encode_gray_png, encode_mask_png};

fn image(min_side: u32, max_side: u32, depth: BitDepth) -> impl Strategy<Value = GrayImage> {
    (min_side..=max_side, min_side..=max_side).prop_flat_map(move |(w, h)| {
        let n = (w * h) as usize;
        prop::collection::vec(0..=depth.max_value(), n)
            .prop_map(move |px| GrayImage::new(w, h, depth, px).unwrap())
    })
}

fn mask_of(w: u32, h: u32) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(0u8..=1, (w * h) as usize).prop_map(move |v| BinaryMask::new(w, h, v).unwrap())
}

fn image_pair(min_side: u32, max_side: u32) -> impl Strategy<Value = (GrayImage, GrayImage)> {
    (min_side..=max_side, min_side..=max_side).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        let one = move || prop::collection::vec(0u16..=255, n).prop_map(move |px| GrayImage::new(w, h, BitDepth::Eight, px).unwrap());
        (one(), one())
    })
}

fn affine() -> impl Strategy<Value = AffineParams> {
    (-180.0..180.0f64, 0.5..2.0f64, -30.0..30.0f64, -0.3..0.3f64, -0.3..0.3f64).prop_map(
        |(rotation_deg, scale, shear_deg, translate_x, translate_y)| AffineParams {
            rotation_deg,
            scale,
            shear_deg,
            translate_x,
            translate_y,
        },
    )
}

fn smooth(w: u32, h: u32, phase: f64) -> GrayImage {
    GrayImage::from_fn(w, h, BitDepth::Eight, |x, y| {
        (128.0 + 100.0 * ((f64::from(x) * 0.3 + phase).sin() * (f64::from(y) * 0.2 - phase).cos())).round() as u16
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gray_png_round_trips(img in prop_oneof![image(1, 24, BitDepth::Eight), image(1, 24, BitDepth::Sixteen)]) {
        let bytes = encode_gray_png(&img).unwrap();
        prop_assert_eq!(decode_gray_png(&bytes).unwrap(), img);
    }

    #[test]
    fn mask_png_round_trips(mask in (1u32..24, 1u32..24).prop_flat_map(|(w, h)| mask_of(w, h))) {
        let bytes = encode_mask_png(&mask).unwrap();
        prop_assert_eq!(decode_mask_png(&bytes).unwrap(), mask);
    }

    #[test]
    fn mask_warp_follows_image_channel(
        mask in (2u32..32, 2u32..32).prop_flat_map(|(w, h)| mask_of(w, h)),
        p in affine(),
    ) {
        let t = AffineTransform::about_center(mask.width(), mask.height(), &p);
        let warped = apply_affine_to_mask(&mask, &t).unwrap();
        let channel = warp_image_nearest(&mask.to_image(), &t).unwrap();
        prop_assert_eq!(warped, BinaryMask::binarize(mask.width(), mask.height(), channel.pixels()).unwrap());
    }

    #[test]
    fn transform_inverse_composes_to_identity(p in affine(), x in -50.0..50.0f64, y in -50.0..50.0f64) {
        let t = AffineTransform::about_center(32, 24, &p);
        let (u, v) = t.inverse().unwrap().apply(t.apply(x, y).0, t.apply(x, y).1);
        prop_assert!((u - x).abs() < 1e-9 && (v - y).abs() < 1e-9);
    }

    #[test]
    fn lpips_is_a_symmetric_nonnegative_distance((a, b) in image_pair(16, 24)) {
        let tiny = TinyFixedExtractor::new();
        let w = LayerWeights::default_for(&tiny).unwrap();
        let ab = lpips(&a, &b, &tiny, &w).unwrap().value;
        prop_assert_eq!(ab, lpips(&b, &a, &tiny, &w).unwrap().value);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(lpips(&a, &a, &tiny, &w).unwrap().value, 0.0);
        let id = LayerWeights::new(vec![1.0]).unwrap();
        prop_assert!(lpips(&a, &b, &IdentityExtractor, &id).unwrap().value >= 0.0);
    }

    #[test]
    fn ssim_and_psnr_are_symmetric_and_maximal_at_identity((a, b) in image_pair(11, 20)) {
        let s = ssim(&a, &b).unwrap().value;
        prop_assert!((s - ssim(&b, &a).unwrap().value).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a).unwrap().value - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &b).unwrap().value, psnr(&b, &a).unwrap().value);
        prop_assert_eq!(psnr(&a, &a).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn argmin_picks_the_first_minimum(row in prop::collection::vec(prop_oneof![Just(0.5f64), 0.0..1.0f64], 1..40)) {
        let (i, v) = argmin(&row).unwrap();
        prop_assert!(row.iter().all(|&x| x >= v));
        prop_assert!(row[..i].iter().all(|&x| x > v));
        prop_assert_eq!(row[i], v);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(
        (x, y) in (1u32..16, 1u32..16).prop_flat_map(|(w, h)| (mask_of(w, h), mask_of(w, h)))
    ) {
        let d = dice(&x, &y).unwrap();
        prop_assert_eq!(d, dice(&y, &x).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dice(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn dice_grows_as_a_prediction_fills_its_target(
        (gt, order) in (2u32..16, 2u32..16).prop_flat_map(|(w, h)| (mask_of(w, h), Just((w * h) as usize)).prop_flat_map(|(m, n)| {
            (Just(m), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        }))
    ) {
        let (w, h) = gt.dims();
        let inside: Vec<usize> = order.into_iter().filter(|&i| gt.values()[i] == 1).collect();
        let mut values = vec![0u8; (w * h) as usize];
        let mut last = dice(&BinaryMask::new(w, h, values.clone()).unwrap(), &gt).unwrap();
        for i in inside {
            values[i] = 1;
            let d = dice(&BinaryMask::new(w, h, values.clone()).unwrap(), &gt).unwrap();
            prop_assert!(d >= last);
            last = d;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn folds_partition_the_dataset(n in 1usize..30, folds in 1usize..8, seed in any::<u64>()) {
        prop_assume!(folds <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
        let plan = FoldPlan::new(&ids, folds, seed).unwrap();
        let mut seen = BTreeSet::new();
        let sizes: Vec<usize> = (0..folds).map(|f| {
            let m = plan.members(f);
            seen.extend(m.iter().cloned());
            m.len()
        }).collect();
        prop_assert_eq!(seen.len(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(plan, FoldPlan::new(&ids, folds, seed).unwrap());
    }

    #[test]
    fn matches_file_round_trips(
        distances in prop::collection::vec(prop_oneof![
            Just(f64::INFINITY), Just(f64::NEG_INFINITY), -1e6..1e6f64,
        ], 1..8),
    ) {
        let text = serde_json::json!({
            "metric": "psnr",
            "pool_size": 3,
            "slices": distances.iter().enumerate().map(|(i, &d)| serde_json::json!({
                "slice_index": i,
                "winner_index": i % 3,
                "winner_distance": if d.is_finite() { serde_json::json!(d) } else if d > 0.0 { "inf".into() } else { "-inf".into() },
                "metric": "psnr",
                "provenance": null,
            })).collect::<Vec<_>>(),
        }).to_string();
        let file = MatchesFile::from_json(&text).unwrap();
        prop_assert_eq!(file.slices.iter().map(|s| s.winner_distance).collect::<Vec<_>>(), distances);
        prop_assert_eq!(MatchesFile::from_json(&file.to_json()).unwrap(), file);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn larger_augmentation_budgets_never_raise_winner_distances(
        small in 0usize..3,
        extra in 1usize..3,
        n_q in 1usize..5,
        seed in any::<u64>(),
        metric in 0usize..3,
    ) {
        let q = SliceVolume::new((0..n_q).map(|i| smooth(16, 16, i as f64)).collect()).unwrap();
        let pair = LabeledSlice::new(smooth(16, 16, 0.7), BinaryMask::from_fn(16, 16, |x, y| x + y < 16)).unwrap();
        let policy = AugmentPolicy { seed, ..AugmentPolicy::default() };
        let a = build_support_set(std::slice::from_ref(&pair), small, n_q, &policy).unwrap();
        let b = build_support_set(std::slice::from_ref(&pair), small + extra, n_q, &policy).unwrap();
        prop_assert_eq!(&b.entries()[..a.len()], a.entries());
        let m = match metric {
            0 => MetricConfig::lpips(Arc::new(TinyFixedExtractor::new())).unwrap(),
            1 => MetricConfig::Ssim,
            _ => MetricConfig::Psnr,
        };
        let da = match_volume(&q, &a, &m).unwrap().distances();
        let db = match_volume(&q, &b, &m).unwrap().distances();
        for (x, y) in da.iter().zip(&db) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn backends_are_stateless(
        (frames, mask) in (8u32..20, 8u32..20).prop_flat_map(|(w, h)| {
            let img = move || prop::collection::vec(0u16..=255, (w * h) as usize)
                .prop_map(move |px| GrayImage::new(w, h, BitDepth::Eight, px).unwrap());
            (prop::collection::vec(img(), 2..4), mask_of(w, h))
        }),
        tol in 0.0..40.0f64,
    ) {
        let seq = PromptedSequence::new(frames.clone(), 0, mask.clone()).unwrap();
        let mut reversed = frames.clone();
        reversed[1..].reverse();
        let other = PromptedSequence::new(reversed, 0, mask).unwrap();
        let backends: [Box<dyn SegmenterBackend>; 2] = [Box::new(identity_backend()), Box::new(flood_backend(tol))];
        for b in &backends {
            let first = b.segment(&seq).unwrap();
            let _ = b.segment(&other).unwrap();
            prop_assert_eq!(b.segment(&seq).unwrap(), first);
        }
    }
}
