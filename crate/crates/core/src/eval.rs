//! Pose metrics, baselines and generative probes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::losses::{self, Side};
use crate::models::{Domain, ModelBundle, Net};
use crate::optim::Adam;
use crate::posekit::{distance, CropCube, Handedness, Pose, PoseVec, SkeletonSpec, Vec3};
use crate::real::Real;
use crate::rng::{self, tag};
use crate::synthgen::DatasetArchive;
use crate::tensor::Tensor;
use crate::trainer::{self, ArchiveBatches, BatchProvider, ProgressSink, ProgressRecord, TrainConfig, TrainState};

/// Decoded pose vectors are clipped to this magnitude before denormalizing.
pub const POSE_CLIP: f64 = 1.05;

/// Images per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Frames are lists of joint positions in millimeters.
pub type Frame = Vec<Vec3>;

fn check_frames(preds: &[Frame], gts: &[Frame]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Shape { context: "frame count", expected: vec![gts.len()], got: vec![preds.len()] });
    }
    for (p, g) in preds.iter().zip(gts) {
        if p.len() != g.len() {
            return Err(Error::Shape { context: "joints per frame", expected: vec![g.len()], got: vec![p.len()] });
        }
    }
    Ok(())
}

fn frame_errors<'a>(p: &'a Frame, g: &'a Frame) -> impl Iterator<Item = f64> + 'a {
    p.iter().zip(g).map(|(a, b)| distance(a, b))
}

/// Mean over joints, then over frames, of Euclidean joint errors.
pub fn mean_joint_error(preds: &[Frame], gts: &[Frame]) -> Result<f64> {
    check_frames(preds, gts)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| if p.is_empty() { 0.0 } else { frame_errors(p, g).sum::<f64>() / p.len() as f64 })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Mean error of each joint over frames.
pub fn per_joint_errors(preds: &[Frame], gts: &[Frame]) -> Result<Vec<f64>> {
    check_frames(preds, gts)?;
    let j = gts.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; j];
    for (p, g) in preds.iter().zip(gts) {
        for (a, e) in acc.iter_mut().zip(frame_errors(p, g)) {
            *a += e;
        }
    }
    let n = preds.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Largest joint error of each frame.
pub fn frame_max_errors(preds: &[Frame], gts: &[Frame]) -> Result<Vec<f64>> {
    check_frames(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(p, g)| frame_errors(p, g).fold(0.0, f64::max)).collect())
}

/// Fraction of frames whose worst joint error is strictly below `d_mm`.
pub fn frames_within(preds: &[Frame], gts: &[Frame], d_mm: f64) -> Result<f64> {
    let maxes = frame_max_errors(preds, gts)?;
    Ok(fraction_below(&maxes, d_mm))
}

fn fraction_below(maxes: &[f64], d: f64) -> f64 {
    if maxes.is_empty() {
        return 0.0;
    }
    maxes.iter().filter(|&&m| m < d).count() as f64 / maxes.len() as f64
}

/// `(d, frames_within(d))` for ascending thresholds.
pub fn error_curve(preds: &[Frame], gts: &[Frame], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Config("thresholds must be ascending".into()));
    }
    let mut maxes = frame_max_errors(preds, gts)?;
    maxes.sort_by(f64::total_cmp);
    let n = maxes.len().max(1) as f64;
    // Sorted sweep: `k` frames have max error below the current threshold.
    let mut k = 0;
    Ok(thresholds
        .iter()
        .map(|&d| {
            while k < maxes.len() && maxes[k] < d {
                k += 1;
            }
            (d, if maxes.is_empty() { 0.0 } else { k as f64 / n })
        })
        .collect())
}

/// `0, 5, ..., 80` millimeters.
pub fn default_thresholds() -> Vec<f64> {
    (0..=16).map(|i| i as f64 * 5.0).collect()
}

/// Decoded pose vectors with clipping accounted.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub poses: Vec<Pose>,
    pub clip_events: usize,
}

/// Clips to `[-POSE_CLIP, POSE_CLIP]` and maps into `cube` millimeters.
pub fn denormalize_rows<S: Real>(rows: &Tensor<S>, cube: &CropCube) -> Decoded {
    let mut clip_events = 0;
    let h = cube.size_mm / 2.0;
    let poses = (0..rows.batch())
        .map(|i| {
            let joints = rows
                .row(i)
                .chunks(3)
                .map(|c| {
                    let mut p = [0.0; 3];
                    for a in 0..3 {
                        let v = c[a].to_f64();
                        let cv = v.clamp(-POSE_CLIP, POSE_CLIP);
                        if cv != v {
                            clip_events += 1;
                        }
                        p[a] = cv * h + cube.center[a];
                    }
                    p
                })
                .collect();
            Pose { joints, handedness: Handedness::Right }
        })
        .collect();
    Decoded { poses, clip_events }
}

fn select(pose: &Pose, joints: &[usize]) -> Frame {
    joints.iter().map(|&j| pose.joints[j]).collect()
}

/// `G_y(P(x))` for a batch of images, denormalized in `cube`.
pub fn predict_poses<S: Real>(b: &ModelBundle<S>, images: &[&DepthImage], cube: &CropCube) -> Result<Decoded> {
    let mut out = Decoded { poses: Vec::with_capacity(images.len()), clip_events: 0 };
    for chunk in images.chunks(EVAL_CHUNK) {
        let x = DepthImage::batch_tensor::<S>(chunk);
        let rows = b.predict_pose_raw(&x)?;
        let d = denormalize_rows(&rows, cube);
        out.poses.extend(d.poses);
        out.clip_events += d.clip_events;
    }
    Ok(out)
}

/// Single-image prediction restricted to the skeleton's evaluation joints.
pub fn predict_pose<S: Real>(b: &ModelBundle<S>, x: &DepthImage, cube: &CropCube, spec: &SkeletonSpec) -> Result<Pose> {
    let d = predict_poses(b, &[x], cube)?;
    let joints = spec.eval_joints();
    Ok(Pose { joints: select(&d.poses[0], &joints), handedness: Handedness::Right })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_joint_error_mm: f64,
    /// `(threshold_mm, fraction)`, thresholds ascending; strict `<`.
    pub frames_within: Vec<(f64, f64)>,
    pub per_joint_errors_mm: Vec<f64>,
    pub frames: usize,
    pub clip_events: usize,
    pub split: String,
    pub config_digest: String,
    pub label: String,
    /// Percentage of real frames whose labels training could read.
    pub label_fraction_percent: f64,
}

/// Scores `b` on labeled frames.
pub fn evaluate<S: Real>(
    b: &ModelBundle<S>,
    images: &[DepthImage],
    labels: &[PoseVec],
    spec: &SkeletonSpec,
    thresholds: &[f64],
    split: &str,
) -> Result<EvalReport> {
    if images.len() != labels.len() {
        return Err(Error::Shape { context: "evaluation split", expected: vec![labels.len()], got: vec![images.len()] });
    }
    let cube = labels.first().map_or_else(CropCube::default, PoseVec::cube);
    let refs: Vec<&DepthImage> = images.iter().collect();
    let pred = predict_poses(b, &refs, &cube)?;
    let joints = spec.eval_joints();
    let preds: Vec<Frame> = pred.poses.iter().map(|p| select(p, &joints)).collect();
    let gts: Vec<Frame> = labels.iter().map(|l| select(&crate::posekit::denormalize_pose(l), &joints)).collect();
    Ok(EvalReport {
        mean_joint_error_mm: mean_joint_error(&preds, &gts)?,
        frames_within: error_curve(&preds, &gts, thresholds)?,
        per_joint_errors_mm: per_joint_errors(&preds, &gts)?,
        frames: preds.len(),
        clip_events: pred.clip_events,
        split: split.into(),
        config_digest: String::new(),
        label: String::new(),
        label_fraction_percent: 0.0,
    })
}

/// Scores on the archive's held-out real-style test split.
pub fn evaluate_test_split<S: Real>(b: &ModelBundle<S>, archive: &DatasetArchive, thresholds: &[f64]) -> Result<EvalReport> {
    evaluate(b, &archive.test.images, &archive.test.poses, &archive.manifest.skeleton, thresholds, "test")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SyntheticOnly,
    LspsSynthetic,
    /// Label fraction in percent.
    LspsSemi(f64),
    RealOnly,
}

impl BaselineKind {
    pub fn name(&self) -> String {
        match self {
            BaselineKind::SyntheticOnly => "synthetic_only".into(),
            BaselineKind::LspsSynthetic => "lsps_synthetic".into(),
            BaselineKind::LspsSemi(m) => format!("lsps_semi({m})"),
            BaselineKind::RealOnly => "real_only".into(),
        }
    }
}

/// Pairs a direct regressor learns from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressorSource {
    Synthetic,
    LabeledReal,
}

/// Trains the posterior trunk and head from scratch as a direct regressor
/// into the frozen pose latent, for the phase-3 iteration count and batch.
pub fn train_regressor<S, P, K>(b: &mut ModelBundle<S>, provider: &mut P, cfg: &TrainConfig, source: RegressorSource, sink: &mut K) -> Result<()>
where
    S: Real,
    P: BatchProvider<S> + ?Sized,
    K: ProgressSink<S> + ?Sized,
{
    let cells = b.cells(&[Net::Post]);
    let mut opt = Adam::new(cfg.adam(), cells);
    let iterations = cfg.phase_iterations[2];
    for t in 0..iterations {
        let batch = provider.depth_batch(3, t)?;
        let pairs = match source {
            RegressorSource::Synthetic => Some((&batch.x_s, &batch.y_s)),
            RegressorSource::LabeledReal => batch.labeled.as_ref().map(|(x, y)| (x, y)),
        };
        let mut g = Graph::with_trainable(&b.store, &opt.cells);
        let v = losses::loss_posterior(&mut g, b, pairs, &cfg.weights).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { phase: 3, iteration: t },
            other => other,
        })?;
        let total = g.scalar(v).to_f64();
        let grads = g.backward(v);
        if !grads.all_finite() {
            return Err(Error::Diverged { phase: 3, iteration: t });
        }
        if cfg.log_every > 0 && (t % cfg.log_every == 0 || t + 1 == iterations) {
            sink.record(&ProgressRecord { phase: 3, iteration: t, side: Side::Min, total, terms: &[("pos", total)] });
        }
        opt.step(&mut b.store, &grads);
    }
    Ok(())
}

/// Trains a fresh bundle for `kind` and scores it on the test split.
///
/// Every baseline shares the phase-1 pose model trained with the same seed,
/// the same test split and the same evaluation joints. The archive's label
/// mask is redrawn as the baseline requires.
pub fn run_baseline<S, K>(
    kind: BaselineKind,
    archive: &mut DatasetArchive,
    arch: &crate::models::ArchConfig,
    cfg: &TrainConfig,
    sink: &mut K,
) -> Result<(ModelBundle<S>, EvalReport)>
where
    S: Real,
    K: ProgressSink<S> + ?Sized,
{
    let mut cfg = cfg.clone();
    cfg.label_fraction_percent = match kind {
        BaselineKind::SyntheticOnly | BaselineKind::LspsSynthetic => 0.0,
        BaselineKind::LspsSemi(m) => m,
        BaselineKind::RealOnly => 100.0,
    };
    trainer::apply_label_fraction(archive, &cfg)?;
    let mut b = ModelBundle::<S>::build(arch, cfg.seed)?;
    let mut state = TrainState::new();
    let archive_ro: &DatasetArchive = archive;
    let mut provider = ArchiveBatches::new(archive_ro, &cfg);
    match kind {
        BaselineKind::LspsSynthetic | BaselineKind::LspsSemi(_) => {
            trainer::run_schedule(&mut b, &mut state, &mut provider, &cfg, sink, None)?;
        }
        BaselineKind::SyntheticOnly | BaselineKind::RealOnly => {
            trainer::run_schedule(&mut b, &mut state, &mut provider, &cfg, sink, Some(trainer::StopAt { phase: 2, iteration: 0 }))?;
            let source = if kind == BaselineKind::RealOnly { RegressorSource::LabeledReal } else { RegressorSource::Synthetic };
            train_regressor(&mut b, &mut provider, &cfg, source, sink)?;
        }
    }
    let mut report = evaluate_test_split(&b, archive_ro, &default_thresholds())?;
    report.label = kind.name();
    report.label_fraction_percent = cfg.label_fraction_percent;
    Ok((b, report))
}

/// One decoded point of a pose-latent trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub pose: Pose,
    pub synthetic: DepthImage,
    pub real: DepthImage,
}

fn decode_latents<S: Real>(b: &ModelBundle<S>, z: &Tensor<S>, cube: &CropCube) -> Vec<LatentSample> {
    let (y, xs, xr) = b.decode_latent_all(z);
    let poses = denormalize_rows(&y, cube).poses;
    let xs = DepthImage::from_batch(&xs);
    let xr = DepthImage::from_batch(&xr);
    poses
        .into_iter()
        .zip(xs)
        .zip(xr)
        .enumerate()
        .map(|(i, ((pose, synthetic), real))| LatentSample { z: z.row(i).iter().map(|v| v.to_f64()).collect(), pose, synthetic, real })
        .collect()
}

/// Interpolation fractions for `steps` interior points: `steps + 2` values
/// `i / (steps + 1)`, endpoints included.
pub fn walk_fractions(steps: usize) -> Vec<f64> {
    let n = steps + 1;
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

/// Linear walk between the encoder means of two poses, decoded into all
/// three domains.
pub fn latent_walk<S: Real>(b: &ModelBundle<S>, y_a: &PoseVec, y_b: &PoseVec, steps: usize) -> Result<Vec<LatentSample>> {
    let y = b.pose_vectors(&[y_a, y_b]);
    let (mu, _) = b.encode_pose(&y)?;
    let d = b.config.pose_latent_dim;
    let (a, c) = (mu.row(0), mu.row(1));
    let mut data = Vec::new();
    let fr = walk_fractions(steps);
    for &t in &fr {
        let ts = S::from_f64(t);
        // (1 - t) a + t c, written so that t = 0 and t = 1 reproduce a and c exactly.
        data.extend(a.iter().zip(c).map(|(&p, &q)| if t == 1.0 { q } else { p + ts * (q - p) }));
    }
    let z = Tensor::from_vec(&[fr.len(), d], data);
    Ok(decode_latents(b, &z, &y_a.cube()))
}

/// Mean joint displacement between consecutive walk poses, and between the
/// walk's endpoints.
pub fn walk_displacements(walk: &[LatentSample]) -> (Vec<f64>, f64) {
    let disp = |p: &Pose, q: &Pose| p.joints.iter().zip(&q.joints).map(|(a, b)| distance(a, b)).sum::<f64>() / p.joints.len().max(1) as f64;
    let steps = walk.windows(2).map(|w| disp(&w[0].pose, &w[1].pose)).collect();
    let ends = match (walk.first(), walk.last()) {
        (Some(a), Some(b)) => disp(&a.pose, &b.pose),
        _ => 0.0,
    };
    (steps, ends)
}

/// `n` draws from the pose prior decoded into all three domains.
pub fn sample_prior<S: Real>(b: &ModelBundle<S>, n: usize, seed: u64, cube: &CropCube) -> Vec<LatentSample> {
    let mut r = rng::stream(seed, &[tag::PRIOR]);
    let mut z = Tensor::<S>::zeros(&[n, b.config.pose_latent_dim]);
    rng::fill_normal(&mut r, z.data_mut());
    decode_latents(b, &z, cube)
}

/// Absolute bone-length deviations of decoded poses from the skeleton, mm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoneLengthStats {
    pub bones: usize,
    pub mean_abs_mm: f64,
    pub max_abs_mm: f64,
    pub median_abs_mm: f64,
}

pub fn bone_length_stats(poses: &[Pose], spec: &SkeletonSpec) -> BoneLengthStats {
    let mut devs = Vec::new();
    for p in poses {
        for j in 0..spec.joint_count.min(p.joints.len()) {
            let parent = spec.parents[j];
            if parent == j {
                continue;
            }
            devs.push((distance(&p.joints[j], &p.joints[parent]) - spec.bone_lengths_mm[j]).abs());
        }
    }
    if devs.is_empty() {
        return BoneLengthStats::default();
    }
    devs.sort_by(f64::total_cmp);
    BoneLengthStats {
        bones: devs.len(),
        mean_abs_mm: devs.iter().sum::<f64>() / devs.len() as f64,
        max_abs_mm: devs[devs.len() - 1],
        median_abs_mm: devs[devs.len() / 2],
    }
}

/// Cycle reconstruction error `mean|x - G_d(E_o(G_o(E_d(x))))|` with means
/// only; used as a training-progress probe.
pub fn cycle_probe<S: Real>(b: &ModelBundle<S>, x: &Tensor<S>, d: Domain) -> Result<f64> {
    let t = b.translate(x, d, d.other())?;
    let back = b.translate(&t, d.other(), d)?;
    let n = x.len().max(1) as f64;
    Ok(x.data().iter().zip(back.data()).map(|(a, c)| (a.to_f64() - c.to_f64()).abs()).sum::<f64>() / n)
}
