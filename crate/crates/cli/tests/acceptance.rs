//! Acceptance suite. Each check prints one `PASS`/`FAIL` line, then asserts.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fss_core::augment::{
    apply_affine_to_image, apply_affine_to_mask, apply_color_jitter, build_support_set, warp_image_nearest,
    AffineParams, AffineTransform, AugmentPolicy, AugmentedSupportSet, ColorJitter, Provenance, SupportEntry,
};
use fss_core::eval::{dice, dice_volume};
use fss_core::image::{BinaryMask, BitDepth, GrayImage, LabeledSlice, SliceVolume};
use fss_core::matcher::{match_volume, MetricConfig};
use fss_core::phantom::{generate, Phantom, PhantomSpec};
use fss_core::pipeline::{run_pipeline, PipelineConfig};
use fss_core::rng::SampleStream;
use fss_core::segmenter::{flood_backend, identity_backend, segment_volume};
use fss_core::similarity::{
    lpips, psnr, ssim, FeatureExtractor, IdentityExtractor, LayerWeights, TinyFixedExtractor,
};

fn verdict(name: &str, ok: bool, detail: impl AsRef<str>) {
    println!("{} {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(ok, "{name}: {}", detail.as_ref());
}

fn within(name: &str, elapsed: Duration, limit: Duration) -> bool {
    let ok = elapsed < limit;
    if !ok {
        println!("  {name}: took {elapsed:?}, limit {limit:?}");
    }
    ok
}

fn random_image(rng: &mut SampleStream, w: u32, h: u32) -> GrayImage {
    GrayImage::from_fn(w, h, BitDepth::Eight, |_, _| rng.int_inclusive(0, 255) as u16).unwrap()
}

/// Smooth random image: a few Gaussian bumps plus mild noise.
fn smooth_image(rng: &mut SampleStream, w: u32, h: u32) -> GrayImage {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform(0.0, f64::from(w)),
                rng.uniform(0.0, f64::from(h)),
                rng.uniform(2.0, 8.0),
                rng.uniform(40.0, 200.0),
            )
        })
        .collect();
    GrayImage::from_fn(w, h, BitDepth::Eight, |x, y| {
        let v: f64 = bumps
            .iter()
            .map(|&(cx, cy, s, a)| a * (-((f64::from(x) - cx).powi(2) + (f64::from(y) - cy).powi(2)) / (2.0 * s * s)).exp())
            .sum();
        (v + rng.uniform(0.0, 8.0)).round().clamp(0.0, 255.0) as u16
    })
    .unwrap()
}

fn random_mask(rng: &mut SampleStream, w: u32, h: u32) -> BinaryMask {
    if rng.unit() < 0.5 {
        let p = rng.uniform(0.1, 0.9);
        BinaryMask::from_fn(w, h, |_, _| rng.unit() < p)
    } else {
        let (cx, cy) = (rng.uniform(0.0, f64::from(w)), rng.uniform(0.0, f64::from(h)));
        let (rx, ry) = (rng.uniform(1.0, f64::from(w) / 2.0), rng.uniform(1.0, f64::from(h) / 2.0));
        BinaryMask::from_fn(w, h, |x, y| {
            ((f64::from(x) - cx) / rx).powi(2) + ((f64::from(y) - cy) / ry).powi(2) <= 1.0
        })
    }
}

#[test]
fn augmentation_correspondence() {
    let start = Instant::now();
    let mut rng = SampleStream::new(0xa11);
    let wide = AugmentPolicy {
        rotation_deg: [-180.0, 180.0],
        scale: [0.5, 2.0],
        shear_deg: [-30.0, 30.0],
        translate: [-0.3, 0.3],
        ..AugmentPolicy::default()
    };
    let mut mismatched = 0;
    for i in 0..200 {
        let w = rng.int_inclusive(4, 48) as u32;
        let h = rng.int_inclusive(4, 48) as u32;
        let mask = random_mask(&mut rng, w, h);
        let params = if i % 4 == 0 {
            // Quarter turns exercise the exact-grid case.
            AffineParams {
                rotation_deg: 90.0 * rng.int_inclusive(0, 3) as f64,
                scale: 1.0,
                shear_deg: 0.0,
                translate_x: rng.int_inclusive(-3, 3) as f64 / f64::from(w),
                translate_y: rng.int_inclusive(-3, 3) as f64 / f64::from(h),
            }
        } else {
            wide.sample(&mut rng).affine
        };
        let t = AffineTransform::about_center(w, h, &params);
        let warped_mask = apply_affine_to_mask(&mask, &t).unwrap();
        let channel = warp_image_nearest(&mask.to_image(), &t).unwrap();
        let from_channel = BinaryMask::binarize(w, h, channel.pixels()).unwrap();
        if warped_mask != from_channel {
            mismatched += 1;
        }
    }

    let mut identity_ok = true;
    for _ in 0..50 {
        let w = rng.int_inclusive(1, 40) as u32;
        let h = rng.int_inclusive(1, 40) as u32;
        let img = random_image(&mut rng, w, h);
        let mask = random_mask(&mut rng, w, h);
        let zero = AffineParams {
            rotation_deg: 0.0,
            scale: 1.0,
            shear_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
        };
        for t in [AffineTransform::identity(), AffineTransform::about_center(w, h, &zero)] {
            let warped = apply_affine_to_image(&img, &t).unwrap();
            identity_ok &= apply_color_jitter(&warped, &ColorJitter::identity()) == img;
            identity_ok &= apply_affine_to_mask(&mask, &t).unwrap() == mask;
        }
    }
    let ok = mismatched == 0 && identity_ok && within("correspondence", start.elapsed(), Duration::from_secs(10));
    verdict(
        "augmentation correspondence",
        ok,
        format!(
            "200 triples, {mismatched} mismatches; identity no-op {}; {:.2?}",
            if identity_ok { "exact" } else { "broken" },
            start.elapsed()
        ),
    );
}

#[test]
fn support_set_cardinality() {
    let mut rng = SampleStream::new(7);
    let pair = LabeledSlice::new(random_image(&mut rng, 16, 16), random_mask(&mut rng, 16, 16)).unwrap();
    let policy = AugmentPolicy::default();
    let sizes: Vec<usize> = [0, 1, 2, 4]
        .iter()
        .map(|&nt| build_support_set(std::slice::from_ref(&pair), nt, 30, &policy).unwrap().len())
        .collect();
    verdict(
        "support-set cardinality",
        sizes == [1, 31, 61, 121],
        format!("K=1 N_q=30 N_T={{0,1,2,4}} -> {sizes:?}, expected [1, 31, 61, 121]"),
    );
}

/// Sliding-window SSIM evaluated window by window with an explicit 2-D Gaussian.
#[allow(clippy::needless_range_loop)]
fn brute_ssim(a: &GrayImage, b: &GrayImage) -> f64 {
    const K: usize = 11;
    let sigma = 1.5f64;
    let c = (K as f64 - 1.0) / 2.0;
    let mut g = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    let l = 255.0f64;
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let px = |img: &GrayImage, x: usize, y: usize| f64::from(img.pixels()[y * w + x]);
    let mut sum = 0.0;
    let mut n = 0usize;
    for oy in 0..=h - K {
        for ox in 0..=w - K {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = g[i][j] / total;
                    mx += wt * px(a, ox + j, oy + i);
                    my += wt * px(b, ox + j, oy + i);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = g[i][j] / total;
                    let dx = px(a, ox + j, oy + i) - mx;
                    let dy = px(b, ox + j, oy + i) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    sum / n as f64
}

fn brute_psnr(a: &GrayImage, b: &GrayImage) -> f64 {
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| (f64::from(p) - f64::from(q)).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * 255.0f64.log10() - 10.0 * mse.log10()
    }
}

fn pixel_mse(a: &GrayImage, b: &GrayImage) -> f64 {
    let n = a.pixels().len() as f64;
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| (f64::from(p) / 255.0 - f64::from(q) / 255.0).powi(2))
        .sum::<f64>()
        / n
}

fn perturbed(rng: &mut SampleStream, a: &GrayImage, amp: i64) -> GrayImage {
    let px: Vec<u16> = a
        .pixels()
        .iter()
        .map(|&p| (i64::from(p) + rng.int_inclusive(-amp, amp)).clamp(0, 255) as u16)
        .collect();
    GrayImage::new(a.width(), a.height(), a.depth(), px).unwrap()
}

#[test]
fn metric_oracles() {
    let start = Instant::now();
    let mut rng = SampleStream::new(0x3e7);
    let identity = IdentityExtractor;
    let tiny = TinyFixedExtractor::new();
    let id_w = LayerWeights::new(vec![1.0]).unwrap();
    let tiny_w = LayerWeights::default_for(&tiny).unwrap();
    let (mut ssim_err, mut psnr_err, mut lpips_rel) = (0.0f64, 0.0f64, 0.0f64);
    let mut axioms_ok = true;
    for i in 0..100 {
        let w = rng.int_inclusive(16, 32) as u32;
        let h = rng.int_inclusive(16, 32) as u32;
        let a = smooth_image(&mut rng, w, h);
        let b = match i % 4 {
            0 => random_image(&mut rng, w, h),
            1 => a.clone(),
            _ => perturbed(&mut rng, &a, 1 + 10 * (i % 3) as i64),
        };
        ssim_err = ssim_err.max((ssim(&a, &b).unwrap().value - brute_ssim(&a, &b)).abs());
        let (p, q) = (psnr(&a, &b).unwrap().value, brute_psnr(&a, &b));
        psnr_err = psnr_err.max(if p.is_infinite() && q.is_infinite() { 0.0 } else { (p - q).abs() });

        let got = lpips(&a, &b, &identity, &id_w).unwrap().value;
        let want = pixel_mse(&a, &b);
        if want == 0.0 {
            axioms_ok &= got == 0.0;
        } else {
            lpips_rel = lpips_rel.max(((got - want) / want).abs());
        }

        for (fx, wts) in [(&identity as &dyn FeatureExtractor, &id_w), (&tiny, &tiny_w)] {
            let ab = lpips(&a, &b, fx, wts).unwrap().value;
            let ba = lpips(&b, &a, fx, wts).unwrap().value;
            let aa = lpips(&a, &a, fx, wts).unwrap().value;
            axioms_ok &= ab == ba && ab >= 0.0 && aa == 0.0;
        }
    }
    let elapsed = start.elapsed();
    let ok = ssim_err <= 1e-6
        && psnr_err <= 1e-6
        && lpips_rel <= 1e-9
        && axioms_ok
        && within("metrics", elapsed, Duration::from_secs(30));
    verdict(
        "metric oracles",
        ok,
        format!(
            "100 pairs: max |dSSIM| {ssim_err:.1e} (tol 1e-6), max |dPSNR| {psnr_err:.1e} (tol 1e-6), \
             LPIPS/MSE rel {lpips_rel:.1e} (tol 1e-9), symmetry/nonneg/identity {}; {elapsed:.2?}",
            if axioms_ok { "hold" } else { "violated" }
        ),
    );
}

fn brute_force_match(q: &SliceVolume, s: &AugmentedSupportSet, metric: &MetricConfig) -> Vec<(usize, f64)> {
    q.slices()
        .iter()
        .map(|slice| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, e) in s.entries().iter().enumerate() {
                let c = metric.cost(slice, &e.image).unwrap();
                if best.0 == usize::MAX || c < best.1 {
                    best = (j, c);
                }
            }
            best
        })
        .collect()
}

fn metric_for(k: i64) -> MetricConfig {
    match k {
        0 => MetricConfig::lpips(Arc::new(IdentityExtractor)).unwrap(),
        1 => MetricConfig::lpips(Arc::new(TinyFixedExtractor::new())).unwrap(),
        2 => MetricConfig::Ssim,
        _ => MetricConfig::Psnr,
    }
}

#[test]
fn argmin_oracle() {
    let start = Instant::now();
    let mut rng = SampleStream::new(0xa59);
    let mut failures = Vec::new();
    for inst in 0..50 {
        let (w, h) = (16, 16);
        let n_q = rng.int_inclusive(1, 16) as usize;
        let n_t = rng.int_inclusive(0, (63 / n_q) as i64) as usize;
        let query = SliceVolume::new((0..n_q).map(|_| smooth_image(&mut rng, w, h)).collect()).unwrap();
        let pair = LabeledSlice::new(smooth_image(&mut rng, w, h), random_mask(&mut rng, w, h)).unwrap();
        let policy = AugmentPolicy {
            seed: rng.next_u64(),
            ..AugmentPolicy::default()
        };
        let set = build_support_set(&[pair], n_t, n_q, &policy).unwrap();
        assert!(set.len() <= 64);
        let metric = metric_for(rng.int_inclusive(0, 3));
        let got = match_volume(&query, &set, &metric).unwrap();
        let want = brute_force_match(&query, &set, &metric);
        let got_pairs: Vec<(usize, f64)> = got.slices.iter().map(|s| (s.winner_index, s.winner_distance)).collect();
        if got_pairs != want {
            failures.push(format!("instance {inst} ({})", metric.id()));
        }
    }

    let mut nested_violations = 0;
    let mut prefix_ok = true;
    for _ in 0..20 {
        let (w, h) = (16, 16);
        let n_q = rng.int_inclusive(1, 8) as usize;
        let small = rng.int_inclusive(0, 3) as usize;
        let large = small + rng.int_inclusive(1, 3) as usize;
        let query = SliceVolume::new((0..n_q).map(|_| smooth_image(&mut rng, w, h)).collect()).unwrap();
        let pair = LabeledSlice::new(smooth_image(&mut rng, w, h), random_mask(&mut rng, w, h)).unwrap();
        let policy = AugmentPolicy {
            seed: rng.next_u64(),
            ..AugmentPolicy::default()
        };
        let a = build_support_set(std::slice::from_ref(&pair), small, n_q, &policy).unwrap();
        let b = build_support_set(std::slice::from_ref(&pair), large, n_q, &policy).unwrap();
        prefix_ok &= b.entries()[..a.len()] == *a.entries();
        let metric = metric_for(rng.int_inclusive(0, 3));
        let da = match_volume(&query, &a, &metric).unwrap().distances();
        let db = match_volume(&query, &b, &metric).unwrap().distances();
        nested_violations += da.iter().zip(&db).filter(|(x, y)| y > x).count();
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && prefix_ok && nested_violations == 0 && within("argmin", elapsed, Duration::from_secs(60));
    verdict(
        "argmin oracle",
        ok,
        format!(
            "50 instances, {} mismatches {failures:?}; 20 nested pairs, prefix {}, {nested_violations} monotonicity violations; {elapsed:.2?}",
            failures.len(),
            if prefix_ok { "stable" } else { "broken" }
        ),
    );
}

fn two_organ(seed: u64) -> Phantom {
    generate(&PhantomSpec::two_organ(64, 64, 24, seed)).unwrap()
}

#[test]
fn end_to_end_oracle_a() {
    let phantom = two_organ(11);
    let query = &phantom.volume;
    let metric = MetricConfig::lpips(Arc::new(TinyFixedExtractor::new())).unwrap();
    let backend = identity_backend();
    let mut per_class = Vec::new();
    for (&label, gt) in &phantom.masks {
        let entries = query
            .slices()
            .iter()
            .zip(gt)
            .enumerate()
            .map(|(i, (img, mask))| SupportEntry {
                image: img.clone(),
                mask: mask.clone(),
                provenance: Provenance::Original { support: i },
            })
            .collect();
        let set = AugmentedSupportSet::from_entries(entries, query.len(), 0, query.len());
        let assignment = match_volume(query, &set, &metric).unwrap();
        let result = segment_volume(query, &set, &assignment, &backend).unwrap();
        per_class.push((label, dice_volume(&result.masks, gt).unwrap()));
    }
    let grand = per_class.iter().map(|c| c.1).sum::<f64>() / per_class.len() as f64;
    verdict(
        "end-to-end oracle A",
        grand == 1.0,
        format!("identity backend, exact-copy support set: per-class Dice {per_class:?}, grand mean {grand} (expected exactly 1.0)"),
    );
}

fn support_pair(p: &Phantom, label: u32, z: usize) -> LabeledSlice {
    LabeledSlice::new(p.volume.slices()[z].clone(), p.masks[&label][z].clone()).unwrap()
}

fn middle_slice(masks: &[BinaryMask]) -> usize {
    let occupied: Vec<usize> = (0..masks.len()).filter(|&z| !masks[z].is_empty()).collect();
    (occupied[0] + occupied[occupied.len() - 1]) / 2
}

#[test]
fn end_to_end_oracle_b() {
    let start = Instant::now();
    let support = two_organ(101);
    let query = two_organ(102);
    let config = PipelineConfig {
        n_t: 2,
        policy: AugmentPolicy {
            seed: 5,
            ..AugmentPolicy::geometric_only()
        },
        metric: MetricConfig::lpips(Arc::new(TinyFixedExtractor::new())).unwrap(),
        backend: Arc::new(flood_backend(4.0)),
        keep_rows: false,
    };
    let mut scores = Vec::new();
    for (&label, gt) in &query.masks {
        let z = middle_slice(&support.masks[&label]);
        let out = run_pipeline(&[support_pair(&support, label, z)], &query.volume, &config).unwrap();
        scores.push((label, dice_volume(&out.segmentation.masks, gt).unwrap()));
    }
    let elapsed = start.elapsed();
    let ok = scores.iter().all(|s| s.1 >= 0.99) && within("oracle B", elapsed, Duration::from_secs(120));
    verdict(
        "end-to-end oracle B",
        ok,
        format!("separable phantom, noise 2, flood tol 4, N_T=2: per-organ Dice {scores:?} (threshold 0.99); {elapsed:.2?}"),
    );
}

#[test]
fn dice_unit_values() {
    let a = BinaryMask::from_fn(8, 8, |x, _| x < 4);
    let disjoint = BinaryMask::from_fn(8, 8, |x, _| x >= 4);
    // Same area as `a`, sharing half of it.
    let half = BinaryMask::from_fn(8, 8, |x, _| (2..6).contains(&x));
    let values = [
        dice(&a, &a).unwrap(),
        dice(&a, &disjoint).unwrap(),
        dice(&a, &half).unwrap(),
        dice_volume(&[a.clone(), a.clone()], &[half.clone(), half.clone()]).unwrap(),
    ];
    verdict(
        "dice unit values",
        values == [1.0, 0.0, 0.5, 0.5],
        format!("identical/disjoint/half-overlap/half-overlap volume -> {values:?}"),
    );
}

fn fss(args: &[&str]) -> i32 {
    let mut full = vec!["fss"];
    full.extend_from_slice(args);
    fss_cli::run_with_args(full)
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.starts_with("timing"));
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn report_without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    strip_timing(&mut v);
    v
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn determinism() {
    let root = tempfile::tempdir().unwrap();
    let r = |p: &str| root.path().join(p).display().to_string();
    assert_eq!(fss(&["phantom", "--out", &r("data"), "--volumes", "3", "--slices", "12", "--seed", "3"]), 0);
    for run in ["a", "b"] {
        let seg = [
            "segment", "--support", &r("data/vol00"), "--class", "1", "--query", &r("data/vol01"),
            "--backend", "flood", "--nt", "2", "--seed", "9", "--out", &r(&format!("seg-{run}")),
        ];
        assert_eq!(fss(&seg), 0);
        let ev = [
            "eval", "--dataset", &r("data"), "--folds", "3", "--backend", "flood", "--nt", "1",
            "--seed", "9", "--slice-detail", "--out", &r(&format!("report-{run}.json")),
        ];
        assert_eq!(fss(&ev), 0);
    }
    let matches_same = std::fs::read(r("seg-a/matches.json")).unwrap() == std::fs::read(r("seg-b/matches.json")).unwrap();
    let masks_a = tree_bytes(&root.path().join("seg-a/masks"));
    let masks_same = !masks_a.is_empty() && masks_a == tree_bytes(&root.path().join("seg-b/masks"));
    let support_same = tree_bytes(&root.path().join("seg-a/support_set")) == tree_bytes(&root.path().join("seg-b/support_set"));
    let report_same = report_without_timing(&root.path().join("report-a.json"))
        == report_without_timing(&root.path().join("report-b.json"));
    verdict(
        "determinism",
        matches_same && masks_same && support_same && report_same,
        format!(
            "same master seed twice: matches.json {}, masks {} ({} files), support set {}, report.json sans timing {}",
            same(matches_same),
            same(masks_same),
            masks_a.len(),
            same(support_same),
            same(report_same)
        ),
    );
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "DIFFER"
    }
}

#[test]
fn nt_ablation_direction() {
    let support = two_organ(201);
    let query = two_organ(202);
    let metric = MetricConfig::lpips(Arc::new(TinyFixedExtractor::new())).unwrap();
    let mut violations = 0;
    let mut compared = 0;
    let mut means = Vec::new();
    for (&label, masks) in &support.masks {
        let occupied: Vec<usize> = (0..masks.len()).filter(|&z| !masks[z].is_empty()).collect();
        // Off-centre: a quarter of the way into the organ's z-extent.
        let z = occupied[occupied.len() / 4];
        let pair = support_pair(&support, label, z);
        let policy = AugmentPolicy {
            seed: 17,
            ..AugmentPolicy::default()
        };
        let dist = |nt: usize| {
            let set = build_support_set(std::slice::from_ref(&pair), nt, query.volume.len(), &policy).unwrap();
            match_volume(&query.volume, &set, &metric).unwrap().distances()
        };
        let (d0, d2) = (dist(0), dist(2));
        violations += d0.iter().zip(&d2).filter(|(a, b)| b > a).count();
        compared += d0.len();
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        means.push((label, z, mean(&d0), mean(&d2)));
    }
    verdict(
        "N_T ablation direction",
        violations == 0,
        format!(
            "{compared} slices, {violations} with winner distance at N_T=2 above N_T=0; (label, support z, mean N_T=0, mean N_T=2) {means:.4?}"
        ),
    );
}
