//! Hand skeleton, forward kinematics, pose normalization and the paired
//! image/pose augmentations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthImage, BACKGROUND};
use crate::error::{Error, Result};
use crate::rng;

pub type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

/// Kinematic tree plus rendering radii.
///
/// Each non-root joint sits at `bone_length` along the local `+x` axis of its
/// own frame, which is the parent frame rotated by the joint angles
/// (`Rz · Ry · Rx`). The root sits at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSpec {
    pub joint_count: usize,
    pub parents: Vec<usize>,
    pub bone_lengths_mm: Vec<f64>,
    /// Per joint, per rotation axis (x, y, z): `[min, max]` radians.
    pub angle_limits_rad: Vec<[[f64; 2]; 3]>,
    /// Radius of the capsule ending at each joint; the root's radius is a sphere.
    pub capsule_radii_mm: Vec<f64>,
    /// Joints included in evaluation metrics.
    pub eval_mask: Vec<bool>,
}

pub type JointAngles = Vec<Vec3>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn toggled(self) -> Self {
        match self {
            Handedness::Left => Handedness::Right,
            Handedness::Right => Handedness::Left,
        }
    }
}

/// Joint positions in millimeters, in the crop-cube frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: Vec<Vec3>,
    pub handedness: Handedness,
}

/// Fixed-size box around the hand; `x` right, `y` up, `z` away from the camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropCube {
    pub center: Vec3,
    pub size_mm: f64,
}

impl Default for CropCube {
    fn default() -> Self {
        CropCube { center: [0.0; 3], size_mm: 300.0 }
    }
}

impl CropCube {
    /// Normalized depth of an absolute `z`.
    pub fn depth_to_unit(&self, z: f64) -> f64 {
        (z - self.center[2]) * 2.0 / self.size_mm
    }

    pub fn unit_to_depth(&self, d: f64) -> f64 {
        self.center[2] + d * self.size_mm / 2.0
    }
}

/// Flattened `3J` pose in `[-1, 1]` with the cube it was normalized in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseVec {
    pub values: Vec<f64>,
    pub cube_center: Vec3,
    pub cube_size: f64,
}

impl PoseVec {
    pub fn cube(&self) -> CropCube {
        CropCube { center: self.cube_center, size_mm: self.cube_size }
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = (libm::sin(a), libm::cos(a));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = (libm::sin(a), libm::cos(a));
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = (libm::sin(a), libm::cos(a));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    o
}

fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Local rotation for joint angles `(x, y, z)`, applied as `Rz · Ry · Rx`.
pub fn joint_rotation(angles: &Vec3) -> [[f64; 3]; 3] {
    mat_mul(&rot_z(angles[2]), &mat_mul(&rot_y(angles[1]), &rot_x(angles[0])))
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    libm::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]))
}

impl SkeletonSpec {
    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count;
        let bad = |m: alloc::string::String| Err(Error::InvalidSkeleton(m));
        if j < 5 {
            return bad(format!("joint_count {j} < 5"));
        }
        for (name, len) in [
            ("parents", self.parents.len()),
            ("bone_lengths_mm", self.bone_lengths_mm.len()),
            ("angle_limits_rad", self.angle_limits_rad.len()),
            ("capsule_radii_mm", self.capsule_radii_mm.len()),
            ("eval_mask", self.eval_mask.len()),
        ] {
            if len != j {
                return bad(format!("{name} has {len} entries, expected {j}"));
            }
        }
        if self.parents[0] != 0 {
            return bad("joint 0 must be the root (its own parent)".into());
        }
        for k in 1..j {
            // Parents precede children, which makes the graph a tree rooted at 0.
            if self.parents[k] >= k {
                return bad(format!("joint {k} has parent {} which does not precede it", self.parents[k]));
            }
            if !(self.bone_lengths_mm[k] > 0.0) {
                return bad(format!("joint {k} has non-positive bone length"));
            }
        }
        for (k, lim) in self.angle_limits_rad.iter().enumerate() {
            for (a, [lo, hi]) in lim.iter().enumerate() {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return bad(format!("joint {k} axis {a} has invalid limits [{lo}, {hi}]"));
                }
            }
        }
        if self.capsule_radii_mm.iter().any(|r| !(*r >= 0.0)) {
            return bad("negative capsule radius".into());
        }
        if !self.eval_mask.iter().any(|&m| m) {
            return bad("eval_mask selects no joints".into());
        }
        Ok(())
    }

    /// Indices of evaluated joints.
    pub fn eval_joints(&self) -> Vec<usize> {
        self.eval_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// Default 16-joint right hand: wrist plus three joints per finger
    /// (knuckle, middle, tip), fingers along `+y`, palm facing the camera.
    pub fn default_hand() -> Self {
        const PI_2: f64 = core::f64::consts::FRAC_PI_2;
        // (metacarpal, proximal, distal) lengths and splay for thumb..pinky.
        let fingers: [([f64; 3], f64, [f64; 3]); 5] = [
            ([45.0, 35.0, 30.0], 0.95, [11.0, 10.0, 9.0]),
            ([80.0, 45.0, 42.0], 0.22, [13.0, 9.0, 8.0]),
            ([78.0, 50.0, 46.0], 0.0, [13.0, 9.5, 8.0]),
            ([74.0, 47.0, 43.0], -0.2, [13.0, 9.0, 7.5]),
            ([68.0, 37.0, 34.0], -0.42, [12.0, 8.0, 7.0]),
        ];
        let mut parents = vec![0];
        let mut lengths = vec![0.0];
        let mut radii = vec![22.0];
        let mut limits = vec![[[-0.3, 0.3], [-0.35, 0.35], [PI_2 - 0.3, PI_2 + 0.3]]];
        for (f, (len, splay, rad)) in fingers.iter().enumerate() {
            let thumb = f == 0;
            let base = parents.len();
            parents.extend([0, base, base + 1]);
            lengths.extend_from_slice(len);
            radii.extend_from_slice(rad);
            limits.push([[0.0, 0.0], [-0.1, 0.1], [splay - 0.05, splay + 0.05]]);
            limits.push([[0.0, 0.0], if thumb { [-0.3, 0.9] } else { [-0.2, 1.3] }, [-0.25, 0.25]]);
            limits.push([[0.0, 0.0], if thumb { [0.0, 1.0] } else { [0.0, 1.2] }, [0.0, 0.0]]);
        }
        SkeletonSpec {
            joint_count: 16,
            parents,
            bone_lengths_mm: lengths,
            angle_limits_rad: limits,
            capsule_radii_mm: radii,
            eval_mask: vec![true; 16],
        }
    }
}

/// Places joints by composing parent-to-child rigid transforms down the tree.
pub fn forward_kinematics(spec: &SkeletonSpec, angles: &[Vec3]) -> Result<Pose> {
    spec.validate()?;
    if angles.len() != spec.joint_count {
        return Err(Error::Shape { context: "joint angles", expected: vec![spec.joint_count], got: vec![angles.len()] });
    }
    for (j, (a, lim)) in angles.iter().zip(&spec.angle_limits_rad).enumerate() {
        for axis in 0..3 {
            let [lo, hi] = lim[axis];
            if !(a[axis] >= lo && a[axis] <= hi) {
                return Err(Error::AngleOutOfLimits { joint: j, axis, angle: a[axis], min: lo, max: hi });
            }
        }
    }
    let mut frames: Vec<Mat3> = Vec::with_capacity(spec.joint_count);
    let mut joints: Vec<Vec3> = Vec::with_capacity(spec.joint_count);
    for j in 0..spec.joint_count {
        let local = joint_rotation(&angles[j]);
        if j == 0 {
            frames.push(local);
            joints.push([0.0; 3]);
            continue;
        }
        let p = spec.parents[j];
        let frame = mat_mul(&frames[p], &local);
        let off = mat_vec(&frame, &[spec.bone_lengths_mm[j], 0.0, 0.0]);
        let pp = joints[p];
        joints.push([pp[0] + off[0], pp[1] + off[1], pp[2] + off[2]]);
        frames.push(frame);
    }
    Ok(Pose { joints, handedness: Handedness::Right })
}

/// Angles drawn uniformly within the limits from the stream `seed`.
pub fn sample_angles(spec: &SkeletonSpec, seed: u64) -> JointAngles {
    let mut r = rng::stream(seed, &[rng::tag::POSE]);
    spec.angle_limits_rad
        .iter()
        .map(|lim| {
            let mut a = [0.0; 3];
            for axis in 0..3 {
                let [lo, hi] = lim[axis];
                let u: f64 = r.random();
                a[axis] = if hi > lo { (lo + (hi - lo) * u).clamp(lo, hi) } else { lo };
            }
            a
        })
        .collect()
}

pub fn sample_pose(spec: &SkeletonSpec, seed: u64) -> Result<Pose> {
    forward_kinematics(spec, &sample_angles(spec, seed))
}

/// Translates the pose so the center of its joint bounding box is the origin.
pub fn center_pose(pose: &Pose) -> Pose {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for j in &pose.joints {
        for a in 0..3 {
            lo[a] = lo[a].min(j[a]);
            hi[a] = hi[a].max(j[a]);
        }
    }
    let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    Pose {
        joints: pose.joints.iter().map(|j| [j[0] - c[0], j[1] - c[1], j[2] - c[2]]).collect(),
        handedness: pose.handedness,
    }
}

/// Maps joints affinely by `(p - center) * 2 / size`.
pub fn normalize_pose(pose: &Pose, cube: &CropCube) -> Result<PoseVec> {
    if !(cube.size_mm > 0.0) {
        return Err(Error::Config(format!("cube size must be positive, got {}", cube.size_mm)));
    }
    let mut values = Vec::with_capacity(pose.joints.len() * 3);
    let mut outside = Vec::new();
    for (j, p) in pose.joints.iter().enumerate() {
        let mut bad = false;
        for a in 0..3 {
            let v = (p[a] - cube.center[a]) * 2.0 / cube.size_mm;
            bad |= !(-1.0..=1.0).contains(&v);
            values.push(v);
        }
        if bad {
            outside.push(j);
        }
    }
    if !outside.is_empty() {
        return Err(Error::OutOfCube { joints: outside });
    }
    Ok(PoseVec { values, cube_center: cube.center, cube_size: cube.size_mm })
}

/// Inverse of [`normalize_pose`]. Handedness is not carried by the vector
/// form and is reported as right-handed.
pub fn denormalize_pose(v: &PoseVec) -> Pose {
    let h = v.cube_size / 2.0;
    let joints = v
        .values
        .chunks(3)
        .map(|c| [c[0] * h + v.cube_center[0], c[1] * h + v.cube_center[1], c[2] * h + v.cube_center[2]])
        .collect();
    Pose { joints, handedness: Handedness::Right }
}

/// Rigid in-plane rotation plus 3d translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub rotation_deg: f64,
    pub translation_mm: Vec3,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation { rotation_deg: 0.0, translation_mm: [0.0; 3] };

    /// Uniform rotation in `[-max_rot, max_rot]` degrees and translation in
    /// `[-max_shift, max_shift]` mm per axis.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_rot_deg: f64, max_shift_mm: f64) -> Self {
        let rotation_deg = rng::uniform(rng, -max_rot_deg, max_rot_deg);
        let mut t = [0.0; 3];
        for v in t.iter_mut() {
            *v = rng::uniform(rng, -max_shift_mm, max_shift_mm);
        }
        Augmentation { rotation_deg, translation_mm: t }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_deg.abs() <= 180.0) || self.translation_mm.iter().any(|t| !(t.abs() <= 10.0)) {
            return Err(Error::Config(format!("augmentation out of range: {self:?}")));
        }
        Ok(())
    }

    /// The transform applied to a point in the cube frame.
    pub fn apply_point(&self, p: &Vec3, cube: &CropCube) -> Vec3 {
        let th = self.rotation_deg.to_radians();
        let (s, c) = (libm::sin(th), libm::cos(th));
        let (x, y) = (p[0] - cube.center[0], p[1] - cube.center[1]);
        [
            cube.center[0] + c * x - s * y + self.translation_mm[0],
            cube.center[1] + s * x + c * y + self.translation_mm[1],
            p[2] + self.translation_mm[2],
        ]
    }
}

/// Applies the same rotation about the cube center and translation to the
/// depth map (foreground-aware bilinear resampling, background fill) and to the pose.
pub fn augment_pair(depth: &DepthImage, pose: &Pose, aug: &Augmentation, cube: &CropCube) -> Result<(DepthImage, Pose)> {
    aug.validate()?;
    let pose_out = Pose { joints: pose.joints.iter().map(|p| aug.apply_point(p, cube)).collect(), handedness: pose.handedness };
    Ok((augment_image(depth, aug, cube), pose_out))
}

/// Image half of [`augment_pair`].
pub fn augment_image(depth: &DepthImage, aug: &Augmentation, cube: &CropCube) -> DepthImage {
    if *aug == Augmentation::IDENTITY {
        return depth.clone();
    }
    let res = depth.resolution();
    let px_per_mm = res as f64 / cube.size_mm;
    let c = (res as f64 - 1.0) / 2.0;
    let th = aug.rotation_deg.to_radians();
    let (s, co) = (libm::sin(th), libm::cos(th));
    let (tx, ty) = (aug.translation_mm[0] * px_per_mm, aug.translation_mm[1] * px_per_mm);
    let dz = aug.translation_mm[2] * 2.0 / cube.size_mm;
    let mut out = vec![BACKGROUND; res * res];
    for i in 0..res {
        for j in 0..res {
            // Pixel-unit coordinates with y up.
            let (x, y) = (j as f64 - c - tx, c - i as f64 - ty);
            let (xs, ys) = (co * x + s * y, -s * x + co * y);
            if let Some(v) = depth.sample_foreground(c - ys, xs + c) {
                out[i * res + j] = (v + dz).clamp(-1.0, 1.0) as f32;
            }
        }
    }
    DepthImage::from_pixels(res, out)
}

/// Mirrors the image horizontally, negates pose `x` (the cube frame is
/// centered on the image) and toggles handedness.
pub fn flip_handedness(depth: &DepthImage, pose: &Pose) -> (DepthImage, Pose) {
    let joints = pose.joints.iter().map(|p| [-p[0], p[1], p[2]]).collect();
    (depth.mirrored(), Pose { joints, handedness: pose.handedness.toggled() })
}
