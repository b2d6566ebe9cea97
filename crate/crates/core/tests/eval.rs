use lsps_core::eval::*;
use lsps_core::models::{ArchConfig, ModelBundle};
use lsps_core::posekit::{distance, normalize_pose, sample_pose, center_pose, CropCube, SkeletonSpec};
use lsps_core::synthgen::{make_dataset, DatasetArchive, DatasetParams, DomainStyle};
use lsps_core::trainer::{NullSink, TrainConfig};
use proptest::prelude::*;

fn archive() -> DatasetArchive {
    let params = DatasetParams { n_synthetic: 32, n_real: 32, n_test: 6, label_fraction_percent: 0.0, resolution: 8, seed: 9 };
    make_dataset(&SkeletonSpec::default_hand(), &DomainStyle::synthetic(), &DomainStyle::real(), &CropCube::default(), &params).unwrap()
}

#[test]
fn worked_example_strict_threshold() {
    let gt = vec![vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]];
    let pred = vec![vec![[3.0, 4.0, 0.0], [10.0, 0.0, 0.0]]];
    assert!((mean_joint_error(&pred, &gt).unwrap() - 2.5).abs() < 1e-12);
    assert_eq!(frames_within(&pred, &gt, 5.0).unwrap(), 0.0);
    assert_eq!(frames_within(&pred, &gt, 5.001).unwrap(), 1.0);
}

#[test]
fn mismatched_inputs_are_errors() {
    let a = vec![vec![[0.0; 3]]];
    assert!(mean_joint_error(&a, &[]).is_err());
    assert!(frames_within(&a, &[vec![[0.0; 3], [0.0; 3]]], 1.0).is_err());
    assert!(error_curve(&a, &a, &[2.0, 1.0]).is_err());
}

fn frames_strategy() -> impl Strategy<Value = (Vec<Vec<[f64; 3]>>, Vec<Vec<[f64; 3]>>)> {
    (1usize..6, 1usize..5).prop_flat_map(|(n, j)| {
        let f = prop::collection::vec(prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), j), n);
        (f.clone(), f)
    })
}

proptest! {
    #[test]
    fn curve_matches_brute_force((p, g) in frames_strategy(), d in prop::collection::vec(0.0..150.0f64, 1..8)) {
        let mut d = d;
        d.sort_by(f64::total_cmp);
        let curve = error_curve(&p, &g, &d).unwrap();
        for (k, &(t, frac)) in curve.iter().enumerate() {
            prop_assert_eq!(t, d[k]);
            let hits = p.iter().zip(&g).filter(|(pf, gf)| pf.iter().zip(gf.iter()).all(|(a, b)| distance(a, b) < t)).count();
            prop_assert!((frac - hits as f64 / p.len() as f64).abs() < 1e-12);
        }
        for w in curve.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn mean_error_is_mean_of_per_joint((p, g) in frames_strategy()) {
        let m = mean_joint_error(&p, &g).unwrap();
        let per = per_joint_errors(&p, &g).unwrap();
        let alt = per.iter().sum::<f64>() / per.len() as f64;
        prop_assert!((m - alt).abs() < 1e-9);
        prop_assert!(m >= 0.0);
    }
}

#[test]
fn clipping_counts_and_bounds() {
    let rows = lsps_core::tensor::Tensor::<f64>::from_vec(&[1, 6], vec![2.0, -3.0, 0.5, 1.0, -1.05, 0.0]);
    let cube = CropCube::default();
    let d = denormalize_rows(&rows, &cube);
    assert_eq!(d.clip_events, 2);
    let h = cube.size_mm / 2.0;
    assert!((d.poses[0].joints[0][0] - (1.05 * h + cube.center[0])).abs() < 1e-9);
    assert!((d.poses[0].joints[0][1] - (-1.05 * h + cube.center[1])).abs() < 1e-9);
}

#[test]
fn evaluate_composes_prediction_and_metrics() {
    let data = archive();
    let b = ModelBundle::<f64>::build(&ArchConfig::tiny(16), 2).unwrap();
    let report = evaluate_test_split(&b, &data, &default_thresholds()).unwrap();
    let spec = &data.manifest.skeleton;
    let joints = spec.eval_joints();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (img, lab) in data.test.images.iter().zip(&data.test.poses) {
        preds.push(predict_pose(&b, img, &lab.cube(), spec).unwrap().joints);
        let gt = lsps_core::posekit::denormalize_pose(lab);
        gts.push(joints.iter().map(|&j| gt.joints[j]).collect::<Vec<_>>());
    }
    assert_eq!(report.frames, data.test.images.len());
    assert!((report.mean_joint_error_mm - mean_joint_error(&preds, &gts).unwrap()).abs() < 1e-9);
    for &(d, f) in &report.frames_within {
        assert!((f - frames_within(&preds, &gts, d).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn walk_endpoints_and_fractions() {
    assert_eq!(walk_fractions(0), vec![0.0, 1.0]);
    assert_eq!(walk_fractions(1), vec![0.0, 0.5, 1.0]);
    let spec = SkeletonSpec::default_hand();
    let cube = CropCube::default();
    let ya = normalize_pose(&center_pose(&sample_pose(&spec, 1).unwrap()), &cube).unwrap();
    let yb = normalize_pose(&center_pose(&sample_pose(&spec, 2).unwrap()), &cube).unwrap();
    let b = ModelBundle::<f64>::build(&ArchConfig::tiny(16), 4).unwrap();
    let walk = latent_walk(&b, &ya, &yb, 3).unwrap();
    assert_eq!(walk.len(), 5);
    let y = b.pose_vectors(&[&ya, &yb]);
    let (mu, _) = b.encode_pose(&y).unwrap();
    assert_eq!(walk[0].z, mu.row(0).to_vec());
    assert_eq!(walk[4].z, mu.row(1).to_vec());
    let mid = latent_walk(&b, &ya, &yb, 1).unwrap();
    for ((m, a), c) in mid[1].z.iter().zip(mu.row(0)).zip(mu.row(1)) {
        assert!((m - 0.5 * (a + c)).abs() < 1e-12);
    }
    let (steps, ends) = walk_displacements(&walk);
    assert_eq!(steps.len(), 4);
    assert!(ends >= 0.0);
}

#[test]
fn prior_samples_are_deterministic() {
    let b = ModelBundle::<f32>::build(&ArchConfig::tiny(16), 4).unwrap();
    let a = sample_prior(&b, 3, 7, &CropCube::default());
    let c = sample_prior(&b, 3, 7, &CropCube::default());
    assert_eq!(a, c);
    assert_eq!(a[0].synthetic.resolution(), 8);
    let stats = bone_length_stats(&a.iter().map(|s| s.pose.clone()).collect::<Vec<_>>(), &SkeletonSpec::default_hand());
    assert!(stats.bones > 0 && stats.max_abs_mm >= stats.median_abs_mm);
}

#[test]
fn exact_skeleton_has_zero_bone_deviation() {
    let spec = SkeletonSpec::default_hand();
    let p = sample_pose(&spec, 3).unwrap();
    let s = bone_length_stats(&[p], &spec);
    assert!(s.max_abs_mm < 1e-9);
}

#[test]
fn baseline_runs_end_to_end() {
    let mut data = archive();
    let cfg = TrainConfig { phase_iterations: [2, 1, 2], batch_sizes: [4, 2, 4], log_every: 0, ..TrainConfig::desk(1) };
    let (_, r) = run_baseline::<f32, _>(BaselineKind::RealOnly, &mut data, &ArchConfig::tiny(16), &cfg, &mut NullSink).unwrap();
    assert_eq!(r.label, "real_only");
    assert!(r.mean_joint_error_mm.is_finite());
    assert_eq!(data.labeled_indices().len(), data.n_real());
}
