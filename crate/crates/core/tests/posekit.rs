use lsps_core::depth::DepthImage;
use lsps_core::posekit::*;
use lsps_core::synthgen::{render_capsules, pixel_center, Capsule, DomainStyle};
use proptest::prelude::*;

type Quat = [f64; 4];

fn q_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn q_axis(axis: usize, angle: f64) -> Quat {
    let mut q = [(angle / 2.0).cos(), 0.0, 0.0, 0.0];
    q[axis + 1] = (angle / 2.0).sin();
    q
}

fn q_rotate(q: Quat, v: Vec3) -> Vec3 {
    let r = q_mul(q_mul(q, [0.0, v[0], v[1], v[2]]), [q[0], -q[1], -q[2], -q[3]]);
    [r[1], r[2], r[3]]
}

/// Quaternion forward kinematics, written without the crate's matrices.
fn fk_oracle(spec: &SkeletonSpec, angles: &[Vec3]) -> Vec<Vec3> {
    let mut frames: Vec<Quat> = Vec::new();
    let mut joints: Vec<Vec3> = Vec::new();
    for (j, a) in angles.iter().enumerate() {
        let local = q_mul(q_axis(2, a[2]), q_mul(q_axis(1, a[1]), q_axis(0, a[0])));
        if j == 0 {
            frames.push(local);
            joints.push([0.0; 3]);
            continue;
        }
        let p = spec.parents[j];
        let f = q_mul(frames[p], local);
        let off = q_rotate(f, [spec.bone_lengths_mm[j], 0.0, 0.0]);
        joints.push([joints[p][0] + off[0], joints[p][1] + off[1], joints[p][2] + off[2]]);
        frames.push(f);
    }
    joints
}

#[test]
fn forward_kinematics_matches_quaternion_oracle() {
    let spec = SkeletonSpec::default_hand();
    for seed in 0..50 {
        let angles = sample_angles(&spec, seed);
        let pose = forward_kinematics(&spec, &angles).unwrap();
        for (a, b) in pose.joints.iter().zip(fk_oracle(&spec, &angles)) {
            assert!(distance(a, &b) < 1e-9, "seed {seed}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn planar_chain_closed_form() {
    let lengths = [0.0, 40.0, 30.0, 20.0, 15.0];
    let spec = SkeletonSpec {
        joint_count: 5,
        parents: vec![0, 0, 1, 2, 3],
        bone_lengths_mm: lengths.to_vec(),
        angle_limits_rad: vec![[[-1.0, 1.0]; 3]; 5],
        capsule_radii_mm: vec![5.0; 5],
        eval_mask: vec![true; 5],
    };
    let thetas = [0.3, -0.5, 0.9, 0.2, -0.7];
    let angles: Vec<Vec3> = thetas.iter().map(|&t| [0.0, 0.0, t]).collect();
    let pose = forward_kinematics(&spec, &angles).unwrap();
    let (mut x, mut y, mut phi) = (0.0, 0.0, thetas[0]);
    for j in 1..5 {
        phi += thetas[j];
        x += lengths[j] * phi.cos();
        y += lengths[j] * phi.sin();
        assert!(distance(&pose.joints[j], &[x, y, 0.0]) < 1e-12);
    }
}

#[test]
fn normalize_examples() {
    let cube = CropCube { center: [10.0, -20.0, 400.0], size_mm: 300.0 };
    let centered = Pose { joints: vec![cube.center; 3], handedness: Handedness::Right };
    assert!(normalize_pose(&centered, &cube).unwrap().values.iter().all(|&v| v == 0.0));
    let edge = Pose { joints: vec![[160.0, -20.0, 400.0]], handedness: Handedness::Right };
    assert_eq!(normalize_pose(&edge, &cube).unwrap().values[0], 1.0);
    let outside = Pose { joints: vec![[0.0; 3], [161.0, -20.0, 400.0]], handedness: Handedness::Right };
    assert!(normalize_pose(&outside, &cube).is_err());
}

fn sphere_scene(center: Vec3, radius: f64, res: usize) -> DepthImage {
    let cap = Capsule { a: center, b: center, radius };
    render_capsules(&[cap], &CropCube::default(), res, &DomainStyle::synthetic(), 0).unwrap()
}

fn argmin(img: &DepthImage) -> (usize, usize) {
    let res = img.resolution();
    let k = (0..res * res).min_by(|&a, &b| img.pixels()[a].total_cmp(&img.pixels()[b])).unwrap();
    (k / res, k % res)
}

#[test]
fn identity_augmentation_is_exact() {
    let spec = SkeletonSpec::default_hand();
    let pose = center_pose(&sample_pose(&spec, 4).unwrap());
    let img = sphere_scene([20.0, 10.0, 0.0], 30.0, 32);
    let (i2, p2) = augment_pair(&img, &pose, &Augmentation::IDENTITY, &CropCube::default()).unwrap();
    assert_eq!(i2, img);
    assert_eq!(p2, pose);
}

#[test]
fn half_turn_twice_restores_pose() {
    let spec = SkeletonSpec::default_hand();
    let cube = CropCube::default();
    let pose = center_pose(&sample_pose(&spec, 9).unwrap());
    let img = DepthImage::background(16);
    let half = Augmentation { rotation_deg: 180.0, translation_mm: [0.0; 3] };
    let (img, once) = augment_pair(&img, &pose, &half, &cube).unwrap();
    let (_, twice) = augment_pair(&img, &once, &half, &cube).unwrap();
    for (a, b) in pose.joints.iter().zip(&twice.joints) {
        assert!(distance(a, b) < 1e-6);
    }
}

#[test]
fn quarter_turn_moves_sphere_minimum() {
    let cube = CropCube::default();
    let res = 64;
    let center = [70.0, 0.0, 0.0];
    let img = sphere_scene(center, 25.0, res);
    let aug = Augmentation { rotation_deg: 90.0, translation_mm: [0.0; 3] };
    let rotated = augment_image(&img, &aug, &cube);
    let target = aug.apply_point(&center, &cube);
    let (r, c) = argmin(&rotated);
    let (x, y) = pixel_center(&cube, res, r, c);
    let pitch = cube.size_mm / res as f64;
    assert!((x - target[0]).abs() <= pitch && (y - target[1]).abs() <= pitch, "min at ({x}, {y}), expected {target:?}");
}

#[test]
fn flip_examples() {
    let img = sphere_scene([30.0, -15.0, 10.0], 20.0, 32);
    let pose = Pose { joints: vec![[37.0, 5.0, -2.0]], handedness: Handedness::Left };
    let (fi, fp) = flip_handedness(&img, &pose);
    assert_eq!(fp.joints[0], [-37.0, 5.0, -2.0]);
    assert_eq!(fp.handedness, Handedness::Right);
    let (bi, bp) = flip_handedness(&fi, &fp);
    assert!(bi.pixels().iter().zip(img.pixels()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(bp, pose);
    let symmetric = sphere_scene([0.0, 20.0, 0.0], 40.0, 32);
    assert_eq!(flip_handedness(&symmetric, &pose).0, symmetric);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bone_lengths_are_preserved(seed in any::<u64>()) {
        let spec = SkeletonSpec::default_hand();
        let pose = sample_pose(&spec, seed).unwrap();
        for j in 1..spec.joint_count {
            let d = distance(&pose.joints[j], &pose.joints[spec.parents[j]]);
            prop_assert!((d - spec.bone_lengths_mm[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_round_trip(seed in any::<u64>(), cx in -50.0..50.0f64, cz in 200.0..600.0f64) {
        let spec = SkeletonSpec::default_hand();
        let cube = CropCube { center: [cx, 0.0, cz], size_mm: 300.0 };
        let p = center_pose(&sample_pose(&spec, seed).unwrap());
        let p = Pose { joints: p.joints.iter().map(|j| [j[0] + cx, j[1], j[2] + cz]).collect(), ..p };
        let back = denormalize_pose(&normalize_pose(&p, &cube).unwrap());
        for (a, b) in p.joints.iter().zip(&back.joints) {
            prop_assert!(distance(a, b) < 1e-6);
        }
    }

    #[test]
    fn augmentation_commutes_with_normalization(seed in any::<u64>(), rot in -180.0..180.0f64, t in prop::array::uniform3(-10.0..10.0f64)) {
        let spec = SkeletonSpec::default_hand();
        let cube = CropCube::default();
        let pose = center_pose(&sample_pose(&spec, seed).unwrap());
        let aug = Augmentation { rotation_deg: rot, translation_mm: t };
        let (_, moved) = augment_pair(&DepthImage::background(4), &pose, &aug, &cube).unwrap();
        let before = normalize_pose(&pose, &cube).unwrap();
        let Ok(after) = normalize_pose(&moved, &cube) else { return Ok(()) };
        let (s, c) = (rot.to_radians().sin(), rot.to_radians().cos());
        let k = 2.0 / cube.size_mm;
        for (u, v) in before.values.chunks(3).zip(after.values.chunks(3)) {
            let expect = [c * u[0] - s * u[1] + t[0] * k, s * u[0] + c * u[1] + t[1] * k, u[2] + t[2] * k];
            for a in 0..3 {
                prop_assert!((expect[a] - v[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flip_commutes_with_normalization(seed in any::<u64>()) {
        let spec = SkeletonSpec::default_hand();
        let cube = CropCube::default();
        let pose = center_pose(&sample_pose(&spec, seed).unwrap());
        let (_, flipped) = flip_handedness(&DepthImage::background(4), &pose);
        let a = normalize_pose(&pose, &cube).unwrap();
        let b = normalize_pose(&flipped, &cube).unwrap();
        for (u, v) in a.values.chunks(3).zip(b.values.chunks(3)) {
            prop_assert_eq!([-u[0], u[1], u[2]], [v[0], v[1], v[2]]);
        }
    }

    #[test]
    fn pose_sampling_is_reproducible(seed in any::<u64>()) {
        let spec = SkeletonSpec::default_hand();
        prop_assert_eq!(sample_pose(&spec, seed).unwrap(), sample_pose(&spec, seed).unwrap());
    }
}
