//! Procedural dual-domain depth data: an orthographic capsule z-buffer with
//! an explicit, configurable degradation model for the "real" domain, and
//! dataset assembly with a hidden-label mask.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthImage, BACKGROUND};
use crate::error::{Error, Result};
use crate::posekit::{center_pose, normalize_pose, sample_pose, CropCube, Pose, PoseVec, SkeletonSpec, Vec3};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleKind {
    Synthetic,
    Real,
}

/// Degradations separating the two domains. All depth quantities are in
/// normalized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainStyle {
    pub kind: StyleKind,
    pub noise_sigma: f64,
    pub quantization_step: f64,
    pub hole_probability: f64,
    pub shape_scale: f64,
    pub edge_jitter: u32,
}

impl DomainStyle {
    pub fn synthetic() -> Self {
        DomainStyle {
            kind: StyleKind::Synthetic,
            noise_sigma: 0.0,
            quantization_step: 0.0,
            hole_probability: 0.0,
            shape_scale: 1.0,
            edge_jitter: 0,
        }
    }

    pub fn real() -> Self {
        DomainStyle {
            kind: StyleKind::Real,
            noise_sigma: 0.02,
            quantization_step: 0.01,
            hole_probability: 0.3,
            shape_scale: 1.08,
            edge_jitter: 1,
        }
    }

    /// Real-domain style with every degradation switched off.
    pub fn real_without_gap() -> Self {
        DomainStyle { kind: StyleKind::Real, ..Self::synthetic() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_sigma >= 0.0
            && self.quantization_step >= 0.0
            && (0.0..=1.0).contains(&self.hole_probability)
            && self.shape_scale > 0.0
            && self.noise_sigma.is_finite()
            && self.quantization_step.is_finite()
            && self.shape_scale.is_finite();
        if !ok {
            return Err(Error::Config(alloc::format!("invalid domain style {self:?}")));
        }
        if self.kind == StyleKind::Synthetic
            && (self.noise_sigma != 0.0
                || self.hole_probability != 0.0
                || self.quantization_step != 0.0
                || self.shape_scale != 1.0)
        {
            return Err(Error::Config("synthetic style must have no degradations".into()));
        }
        Ok(())
    }
}

/// A segment swept by a sphere; `a == b` gives a sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    /// Depth of the first surface hit by the ray `(x, y, t)`, `t` increasing
    /// away from the camera.
    pub fn first_hit(&self, x: f64, y: f64) -> Option<f64> {
        let r2 = self.radius * self.radius;
        let sphere = |c: &Vec3| {
            let rho2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]);
            (rho2 <= r2).then(|| c[2] - libm::sqrt(r2 - rho2))
        };
        let mut best = match (sphere(&self.a), sphere(&self.b)) {
            (Some(p), Some(q)) => Some(p.min(q)),
            (p, q) => p.or(q),
        };
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1], self.b[2] - self.a[2]];
        let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if len2 > 0.0 {
            let len = libm::sqrt(len2);
            let u = [d[0] / len, d[1] / len, d[2] / len];
            let w = [x - self.a[0], y - self.a[1], -self.a[2]];
            let wu = w[0] * u[0] + w[1] * u[1] + w[2] * u[2];
            // Components of the ray direction and offset orthogonal to the axis.
            let av = [-u[2] * u[0], -u[2] * u[1], 1.0 - u[2] * u[2]];
            let bv = [w[0] - wu * u[0], w[1] - wu * u[1], w[2] - wu * u[2]];
            let qa = av[0] * av[0] + av[1] * av[1] + av[2] * av[2];
            if qa > 1e-12 {
                let qb = av[0] * bv[0] + av[1] * bv[1] + av[2] * bv[2];
                let qc = bv[0] * bv[0] + bv[1] * bv[1] + bv[2] * bv[2] - r2;
                let disc = qb * qb - qa * qc;
                if disc >= 0.0 {
                    let t = (-qb - libm::sqrt(disc)) / qa;
                    let s = (x - self.a[0]) * d[0] + (y - self.a[1]) * d[1] + (t - self.a[2]) * d[2];
                    if (0.0..=len2).contains(&s) {
                        best = Some(best.map_or(t, |b: f64| b.min(t)));
                    }
                }
            }
        }
        best
    }

    fn xy_bounds(&self) -> [f64; 4] {
        [
            self.a[0].min(self.b[0]) - self.radius,
            self.a[0].max(self.b[0]) + self.radius,
            self.a[1].min(self.b[1]) - self.radius,
            self.a[1].max(self.b[1]) + self.radius,
        ]
    }
}

/// Image-plane coordinates (mm) of a pixel center.
pub fn pixel_center(cube: &CropCube, res: usize, row: usize, col: usize) -> (f64, f64) {
    let pitch = cube.size_mm / res as f64;
    let half = cube.size_mm / 2.0;
    (cube.center[0] - half + (col as f64 + 0.5) * pitch, cube.center[1] + half - (row as f64 + 0.5) * pitch)
}

/// Noise-free orthographic z-buffer of the capsules inside the cube.
pub fn zbuffer(capsules: &[Capsule], cube: &CropCube, res: usize) -> DepthImage {
    let mut zb = vec![f64::INFINITY; res * res];
    let pitch = cube.size_mm / res as f64;
    let (left, top) = (cube.center[0] - cube.size_mm / 2.0, cube.center[1] + cube.size_mm / 2.0);
    for cap in capsules {
        let [x0, x1, y0, y1] = cap.xy_bounds();
        let c0 = libm::floor((x0 - left) / pitch).max(0.0) as usize;
        let c1 = (libm::ceil((x1 - left) / pitch).max(0.0) as usize).min(res);
        let r0 = libm::floor((top - y1) / pitch).max(0.0) as usize;
        let r1 = (libm::ceil((top - y0) / pitch).max(0.0) as usize).min(res);
        for row in r0..r1 {
            for col in c0..c1 {
                let (x, y) = pixel_center(cube, res, row, col);
                if let Some(z) = cap.first_hit(x, y) {
                    let slot = &mut zb[row * res + col];
                    *slot = slot.min(z);
                }
            }
        }
    }
    let far = cube.center[2] + cube.size_mm / 2.0;
    let pixels = zb
        .into_iter()
        .map(|z| if z.is_finite() && z < far { cube.depth_to_unit(z).clamp(-1.0, 1.0) as f32 } else { BACKGROUND })
        .collect();
    DepthImage::from_pixels(res, pixels)
}

/// Capsules of a posed skeleton with radii scaled by `shape_scale`.
pub fn pose_capsules(pose: &Pose, spec: &SkeletonSpec, shape_scale: f64) -> Vec<Capsule> {
    (0..spec.joint_count)
        .map(|j| {
            let p = spec.parents[j];
            Capsule { a: pose.joints[p], b: pose.joints[j], radius: spec.capsule_radii_mm[j] * shape_scale }
        })
        .collect()
}

/// Renders primitives and applies the style's degradations in order:
/// noise, quantization, holes, edge jitter.
pub fn render_capsules(capsules: &[Capsule], cube: &CropCube, res: usize, style: &DomainStyle, seed: u64) -> Result<DepthImage> {
    style.validate()?;
    let scaled: Vec<Capsule> = capsules.iter().map(|c| Capsule { radius: c.radius * style.shape_scale, ..*c }).collect();
    let mut img = zbuffer(&scaled, cube, res);
    degrade(&mut img, style, seed);
    Ok(img)
}

pub fn render_depth(pose: &Pose, spec: &SkeletonSpec, style: &DomainStyle, cube: &CropCube, res: usize, seed: u64) -> Result<DepthImage> {
    normalize_pose(pose, cube)?;
    render_capsules(&pose_capsules(pose, spec, 1.0), cube, res, style, seed)
}

fn degrade(img: &mut DepthImage, style: &DomainStyle, seed: u64) {
    let res = img.resolution();
    let mut r = rng::stream(seed, &[tag::RENDER]);
    let fg: Vec<bool> = img.pixels().iter().map(|&v| v < BACKGROUND).collect();
    let mut px: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();
    if style.noise_sigma > 0.0 {
        for (v, &f) in px.iter_mut().zip(&fg) {
            if f {
                *v += style.noise_sigma * rng::normal::<f64, _>(&mut r);
            }
        }
    }
    if style.quantization_step > 0.0 {
        let q = style.quantization_step;
        for (v, &f) in px.iter_mut().zip(&fg) {
            if f {
                *v = (libm::round(*v / q) * q).min(1.0 - q);
            }
        }
    }
    if style.hole_probability > 0.0 && r.random::<f64>() < style.hole_probability {
        let fg_idx: Vec<usize> = (0..px.len()).filter(|&i| fg[i]).collect();
        if !fg_idx.is_empty() {
            let holes = r.random_range(1..=3);
            for _ in 0..holes {
                let at = fg_idx[r.random_range(0..fg_idx.len())];
                let (cy, cx) = ((at / res) as f64, (at % res) as f64);
                let max_axis = (res as f64 / 8.0).max(1.5);
                let (ea, eb) = (rng::uniform(&mut r, 1.0, max_axis), rng::uniform(&mut r, 1.0, max_axis));
                let th = rng::uniform(&mut r, 0.0, core::f64::consts::PI);
                let (s, c) = (libm::sin(th), libm::cos(th));
                for (i, v) in px.iter_mut().enumerate() {
                    let (dy, dx) = ((i / res) as f64 - cy, (i % res) as f64 - cx);
                    let (u, w) = (c * dx + s * dy, -s * dx + c * dy);
                    if (u / ea) * (u / ea) + (w / eb) * (w / eb) <= 1.0 {
                        *v = BACKGROUND as f64;
                    }
                }
            }
        }
    }
    if style.edge_jitter > 0 {
        let j = style.edge_jitter as isize;
        let bg: Vec<bool> = px.iter().map(|&v| v >= BACKGROUND as f64).collect();
        for i in 0..px.len() {
            if bg[i] {
                continue;
            }
            let (row, col) = ((i / res) as isize, (i % res) as isize);
            let near_edge = (-j..=j).any(|dr| {
                (-j..=j).any(|dc| {
                    let (rr, cc) = (row + dr, col + dc);
                    rr < 0 || cc < 0 || rr >= res as isize || cc >= res as isize || bg[rr as usize * res + cc as usize]
                })
            });
            if near_edge && r.random::<bool>() {
                px[i] = BACKGROUND as f64;
            }
        }
    }
    *img = DepthImage::from_pixels(res, px.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect());
}

/// Orthographic metric depth frame. Pixel `(row, col)` images the point
/// `(origin.x + col·pitch, origin.y − row·pitch)`; non-positive or
/// non-finite depths are missing measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDepth {
    pub width: usize,
    pub height: usize,
    pub pixel_mm: f64,
    pub origin_mm: [f64; 2],
    pub depth_mm: Vec<f64>,
}

impl RawDepth {
    /// Metric frame covering exactly the cube window of a normalized image.
    pub fn from_normalized(img: &DepthImage, cube: &CropCube) -> Self {
        let res = img.resolution();
        let (x0, y0) = pixel_center(cube, res, 0, 0);
        RawDepth {
            width: res,
            height: res,
            pixel_mm: cube.size_mm / res as f64,
            origin_mm: [x0, y0],
            depth_mm: img.pixels().iter().map(|&d| cube.unit_to_depth(d as f64)).collect(),
        }
    }
}

/// Crops the cube window, clamps depth to the cube faces, resamples
/// bilinearly and maps to `[-1, 1]`.
pub fn crop_normalize(raw: &RawDepth, cube: &CropCube, out_res: usize) -> Result<DepthImage> {
    if raw.depth_mm.len() != raw.width * raw.height {
        return Err(Error::Shape { context: "raw depth", expected: vec![raw.height, raw.width], got: vec![raw.depth_mm.len()] });
    }
    let unit = |row: isize, col: isize| -> f64 {
        if row < 0 || col < 0 || row >= raw.height as isize || col >= raw.width as isize {
            return BACKGROUND as f64;
        }
        let z = raw.depth_mm[row as usize * raw.width + col as usize];
        if !(z > 0.0) || !z.is_finite() {
            return BACKGROUND as f64;
        }
        cube.depth_to_unit(z).clamp(-1.0, 1.0)
    };
    let mut any_inside = false;
    let mut pixels = Vec::with_capacity(out_res * out_res);
    for i in 0..out_res {
        for j in 0..out_res {
            let (x, y) = pixel_center(cube, out_res, i, j);
            let c = (x - raw.origin_mm[0]) / raw.pixel_mm;
            let r = (raw.origin_mm[1] - y) / raw.pixel_mm;
            any_inside |= r > -1.0 && c > -1.0 && r < raw.height as f64 && c < raw.width as f64;
            let (r0, c0) = (libm::floor(r), libm::floor(c));
            let (fr, fc) = (r - r0, c - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let top = unit(r0, c0) * (1.0 - fc) + unit(r0, c0 + 1) * fc;
            let bottom = unit(r0 + 1, c0) * (1.0 - fc) + unit(r0 + 1, c0 + 1) * fc;
            pixels.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    if !any_inside {
        return Err(Error::EmptyCrop);
    }
    Ok(DepthImage::from_pixels(out_res, pixels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    pub n_synthetic: usize,
    pub n_real: usize,
    pub n_test: usize,
    pub label_fraction_percent: f64,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams { n_synthetic: 4000, n_real: 4000, n_test: 512, label_fraction_percent: 0.0, resolution: 64, seed: 0 }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_synthetic == 0 || self.n_real == 0 || self.n_test == 0 {
            return Err(Error::Config("dataset split sizes must be positive".into()));
        }
        if !(0.0..=100.0).contains(&self.label_fraction_percent) {
            return Err(Error::Config("label fraction must be within [0, 100]".into()));
        }
        if self.resolution < 4 {
            return Err(Error::Config("resolution must be at least 4".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub params: DatasetParams,
    pub skeleton: SkeletonSpec,
    pub synthetic_style: DomainStyle,
    pub real_style: DomainStyle,
    pub cube: CropCube,
    pub labeled_count: usize,
}

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

/// Number of labeled real samples for a label fraction in percent.
pub fn labeled_count(n_real: usize, percent: f64) -> usize {
    (libm::round(percent / 100.0 * n_real as f64) as usize).min(n_real)
}

/// Uniform subset of size `round(percent · n / 100)` drawn without replacement.
pub fn label_mask(n_real: usize, percent: f64, seed: u64) -> Vec<bool> {
    let k = labeled_count(n_real, percent);
    let mut mask = vec![false; n_real];
    let mut r = rng::stream(seed, &[tag::MASK]);
    for i in index::sample(&mut r, n_real, k) {
        mask[i] = true;
    }
    mask
}

/// Counts reads of real-domain labels.
#[derive(Debug, Default)]
pub struct LabelAudit {
    reads: AtomicU64,
    touched: Vec<AtomicBool>,
}

impl LabelAudit {
    fn new(n: usize) -> Self {
        LabelAudit { reads: AtomicU64::new(0), touched: (0..n).map(|_| AtomicBool::new(false)).collect() }
    }

    fn record(&self, i: usize) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.touched[i].store(true, Ordering::Relaxed);
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn distinct(&self) -> usize {
        self.touched.iter().filter(|t| t.load(Ordering::Relaxed)).count()
    }

    /// Distinct indices read, ascending.
    pub fn touched_indices(&self) -> Vec<usize> {
        (0..self.touched.len()).filter(|&i| self.touched[i].load(Ordering::Relaxed)).collect()
    }

    pub fn reset(&self) {
        self.reads.store(0, Ordering::Relaxed);
        self.touched.iter().for_each(|t| t.store(false, Ordering::Relaxed));
    }
}

/// Labeled split: images with poses.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LabeledSplit {
    pub images: Vec<DepthImage>,
    pub poses: Vec<PoseVec>,
}

impl LabeledSplit {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Synthetic pairs, real images with hidden labels, and a test split.
///
/// Real labels are only reachable through [`DatasetArchive::real_label`],
/// which refuses unmasked indices and records every read.
#[derive(Debug)]
pub struct DatasetArchive {
    pub manifest: ArchiveManifest,
    pub synthetic: LabeledSplit,
    real_images: Vec<DepthImage>,
    real_labels_hidden: Vec<PoseVec>,
    label_mask: Vec<bool>,
    pub test: LabeledSplit,
    audit: LabelAudit,
}

impl DatasetArchive {
    pub fn from_parts(
        manifest: ArchiveManifest,
        synthetic: LabeledSplit,
        real_images: Vec<DepthImage>,
        real_labels_hidden: Vec<PoseVec>,
        label_mask: Vec<bool>,
        test: LabeledSplit,
    ) -> Result<Self> {
        let p = &manifest.params;
        let shape_err = |context, expected: usize, got: usize| Err(Error::Shape { context, expected: vec![expected], got: vec![got] });
        if synthetic.images.len() != p.n_synthetic || synthetic.poses.len() != p.n_synthetic {
            return shape_err("synthetic split", p.n_synthetic, synthetic.images.len().min(synthetic.poses.len()));
        }
        if real_images.len() != p.n_real || real_labels_hidden.len() != p.n_real || label_mask.len() != p.n_real {
            return shape_err("real split", p.n_real, real_images.len());
        }
        if test.images.len() != p.n_test || test.poses.len() != p.n_test {
            return shape_err("test split", p.n_test, test.images.len());
        }
        let labeled = label_mask.iter().filter(|&&m| m).count();
        if labeled != manifest.labeled_count {
            return shape_err("label mask", manifest.labeled_count, labeled);
        }
        let n = real_images.len();
        Ok(DatasetArchive { manifest, synthetic, real_images, real_labels_hidden, label_mask, test, audit: LabelAudit::new(n) })
    }

    pub fn resolution(&self) -> usize {
        self.manifest.params.resolution
    }

    pub fn cube(&self) -> CropCube {
        self.manifest.cube
    }

    pub fn n_real(&self) -> usize {
        self.real_images.len()
    }

    pub fn real_image(&self, i: usize) -> &DepthImage {
        &self.real_images[i]
    }

    pub fn label_mask(&self) -> &[bool] {
        &self.label_mask
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.label_mask.len()).filter(|&i| self.label_mask[i]).collect()
    }

    /// Label of real sample `i` if its mask entry is set; the read is audited.
    pub fn real_label(&self, i: usize) -> Option<&PoseVec> {
        if !self.label_mask[i] {
            return None;
        }
        self.audit.record(i);
        Some(&self.real_labels_hidden[i])
    }

    pub fn audit(&self) -> &LabelAudit {
        &self.audit
    }

    /// Redraws the label mask for a new fraction and resets the audit.
    pub fn relabel(&mut self, percent: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&percent) {
            return Err(Error::Config("label fraction must be within [0, 100]".into()));
        }
        self.label_mask = label_mask(self.real_images.len(), percent, self.manifest.params.seed);
        self.manifest.params.label_fraction_percent = percent;
        self.manifest.labeled_count = labeled_count(self.real_images.len(), percent);
        self.audit.reset();
        Ok(())
    }

    /// Raw parts for serialization. Hidden labels are exposed here only so
    /// the archive can be written to disk.
    pub fn storage_parts(&self) -> (&[DepthImage], &[PoseVec], &[bool]) {
        (&self.real_images, &self.real_labels_hidden, &self.label_mask)
    }
}

fn render_split(
    spec: &SkeletonSpec,
    style: &DomainStyle,
    cube: &CropCube,
    params: &DatasetParams,
    split: u64,
    n: usize,
) -> Result<LabeledSplit> {
    let mut out = LabeledSplit { images: Vec::with_capacity(n), poses: Vec::with_capacity(n) };
    for i in 0..n {
        let (img, pv) = render_sample(spec, style, cube, params.resolution, params.seed, split, i as u64)?;
        out.images.push(img);
        out.poses.push(pv);
    }
    Ok(out)
}

/// One sample of a split, keyed by `(seed, split, index)`.
pub fn render_sample(
    spec: &SkeletonSpec,
    style: &DomainStyle,
    cube: &CropCube,
    res: usize,
    seed: u64,
    split: u64,
    index: u64,
) -> Result<(DepthImage, PoseVec)> {
    let mut r = rng::stream(seed, &[split, index]);
    let pose_seed: u64 = r.random();
    let render_seed: u64 = r.random();
    let pose = center_pose(&sample_pose(spec, pose_seed)?);
    let pose = Pose {
        joints: pose.joints.iter().map(|j| [j[0] + cube.center[0], j[1] + cube.center[1], j[2] + cube.center[2]]).collect(),
        ..pose
    };
    let img = render_depth(&pose, spec, style, cube, res, render_seed)?;
    Ok((img, normalize_pose(&pose, cube)?))
}

/// Builds the three splits from independent seed streams.
pub fn make_dataset(
    spec: &SkeletonSpec,
    synthetic_style: &DomainStyle,
    real_style: &DomainStyle,
    cube: &CropCube,
    params: &DatasetParams,
) -> Result<DatasetArchive> {
    spec.validate()?;
    params.validate()?;
    synthetic_style.validate()?;
    real_style.validate()?;
    let synthetic = render_split(spec, synthetic_style, cube, params, tag::SPLIT_SYNTH, params.n_synthetic)?;
    let real = render_split(spec, real_style, cube, params, tag::SPLIT_REAL, params.n_real)?;
    let test = render_split(spec, real_style, cube, params, tag::SPLIT_TEST, params.n_test)?;
    let mask = label_mask(params.n_real, params.label_fraction_percent, params.seed);
    let manifest = ArchiveManifest {
        format_version: ARCHIVE_FORMAT_VERSION,
        params: params.clone(),
        skeleton: spec.clone(),
        synthetic_style: *synthetic_style,
        real_style: *real_style,
        cube: *cube,
        labeled_count: labeled_count(params.n_real, params.label_fraction_percent),
    };
    DatasetArchive::from_parts(manifest, synthetic, real.images, real.poses, mask, test)
}
