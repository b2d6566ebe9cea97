use lsps_core::posekit::{center_pose, sample_pose, CropCube, SkeletonSpec};
use lsps_core::synthgen::*;
use proptest::prelude::*;

fn spec() -> SkeletonSpec {
    SkeletonSpec::default_hand()
}

#[test]
fn deterministic_styles_ignore_the_seed() {
    let pose = center_pose(&sample_pose(&spec(), 3).unwrap());
    let cube = CropCube::default();
    let style = DomainStyle { quantization_step: 0.01, shape_scale: 1.05, ..DomainStyle::real_without_gap() };
    let a = render_depth(&pose, &spec(), &style, &cube, 32, 1).unwrap();
    let b = render_depth(&pose, &spec(), &style, &cube, 32, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thicker_capsules_cover_more_pixels() {
    let cube = CropCube::default();
    for seed in 0..10 {
        let pose = center_pose(&sample_pose(&spec(), seed).unwrap());
        let thin = render_depth(&pose, &spec(), &DomainStyle::synthetic(), &cube, 64, seed).unwrap();
        let thick_style = DomainStyle { shape_scale: 1.1, ..DomainStyle::real_without_gap() };
        let thick = render_depth(&pose, &spec(), &thick_style, &cube, 64, seed).unwrap();
        assert!(thick.foreground_count() > thin.foreground_count());
    }
}

#[test]
fn out_of_cube_pose_is_rejected() {
    let pose = center_pose(&sample_pose(&spec(), 0).unwrap());
    let small = CropCube { center: [0.0; 3], size_mm: 40.0 };
    assert!(render_depth(&pose, &spec(), &DomainStyle::synthetic(), &small, 16, 0).is_err());
}

fn plane(z: f64) -> RawDepth {
    RawDepth { width: 20, height: 20, pixel_mm: 20.0, origin_mm: [-190.0, 190.0], depth_mm: vec![z; 400] }
}

#[test]
fn crop_normalize_examples() {
    let cube = CropCube { center: [0.0, 0.0, 500.0], size_mm: 300.0 };
    let mid = crop_normalize(&plane(500.0), &cube, 16).unwrap();
    assert!(mid.pixels().iter().all(|&v| v == 0.0));
    let near = crop_normalize(&plane(350.0), &cube, 16).unwrap();
    assert!(near.pixels().iter().all(|&v| v == -1.0));
    let clamped = crop_normalize(&plane(100.0), &cube, 16).unwrap();
    assert!(clamped.pixels().iter().all(|&v| v == -1.0));

    let far_away = RawDepth { origin_mm: [5000.0, 5000.0], ..plane(500.0) };
    assert!(crop_normalize(&far_away, &cube, 16).is_err());
}

#[test]
fn crop_normalize_of_a_render_is_identity() {
    let cube = CropCube { center: [0.0, 0.0, 500.0], size_mm: 300.0 };
    for seed in 0..5 {
        let (img, _) = render_sample(&spec(), &DomainStyle::real(), &cube, 32, seed, 0, 0).unwrap();
        let back = crop_normalize(&RawDepth::from_normalized(&img, &cube), &cube, 32).unwrap();
        assert_eq!(back, img);
    }
}

#[test]
fn label_mask_examples() {
    assert!(label_mask(50, 0.0, 1).iter().all(|&m| !m));
    assert!(label_mask(50, 100.0, 1).iter().all(|&m| m));
    let m = label_mask(4000, 25.0, 7);
    assert_eq!(m.iter().filter(|&&b| b).count(), 1000);
    assert_eq!(m, label_mask(4000, 25.0, 7));
}

#[test]
fn dataset_splits_are_distinct_and_reproducible() {
    let params = DatasetParams { n_synthetic: 6, n_real: 6, n_test: 6, label_fraction_percent: 50.0, resolution: 16, seed: 3 };
    let cube = CropCube::default();
    let a = make_dataset(&spec(), &DomainStyle::synthetic(), &DomainStyle::real(), &cube, &params).unwrap();
    let b = make_dataset(&spec(), &DomainStyle::synthetic(), &DomainStyle::real(), &cube, &params).unwrap();
    assert_eq!(a.storage_parts(), b.storage_parts());
    assert_eq!(a.labeled_indices().len(), 3);
    let (_, hidden, _) = a.storage_parts();
    assert_ne!(a.synthetic.poses[0], hidden[0]);
    assert_ne!(hidden[0], a.test.poses[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn renders_stay_in_range(seed in any::<u64>(), index in 0u64..1000, real in any::<bool>()) {
        let style = if real { DomainStyle::real() } else { DomainStyle::synthetic() };
        let (img, pv) = render_sample(&spec(), &style, &CropCube::default(), 16, seed, 1, index).unwrap();
        prop_assert!(img.pixels().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
        prop_assert!(pv.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_gap_styles_match_bitwise(seed in any::<u64>(), index in 0u64..1000) {
        let cube = CropCube::default();
        let (a, _) = render_sample(&spec(), &DomainStyle::synthetic(), &cube, 16, seed, 1, index).unwrap();
        let (b, _) = render_sample(&spec(), &DomainStyle::real_without_gap(), &cube, 16, seed, 1, index).unwrap();
        prop_assert!(a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn label_mask_counts(n in 1usize..500, pct in 0.0..=100.0f64, seed in any::<u64>()) {
        let m = label_mask(n, pct, seed);
        prop_assert_eq!(m.len(), n);
        prop_assert_eq!(m.iter().filter(|&&b| b).count(), labeled_count(n, pct));
        prop_assert_eq!(labeled_count(n, pct), (n as f64 * pct / 100.0).round() as usize);
    }
}
