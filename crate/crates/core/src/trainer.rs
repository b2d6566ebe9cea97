//! Three-phase schedule: pose VAE, then the depth model and mapping with
//! alternating discriminator/generator steps, then the posterior.
//!
//! All randomness of iteration `t` in phase `p` is drawn from streams keyed
//! by `(seed, p, t)`, so a run resumed from any saved state replays the
//! uninterrupted run exactly and no RNG state needs to be stored.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph};
use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::losses::{self, Batch, LossWeights, Noise, Side, TermValues};
use crate::models::{ModelBundle, Net};
use crate::optim::{Adam, AdamConfig};
use crate::params::CellSet;
use crate::posekit::{augment_image, augment_pair, denormalize_pose, normalize_pose, Augmentation, PoseVec};
use crate::real::Real;
use crate::rng::{self, tag};
use crate::synthgen::DatasetArchive;
use crate::tensor::Tensor;

/// Index into the per-phase arrays of [`TrainConfig`].
fn slot(phase: u8) -> usize {
    (phase - 1) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub phase_iterations: [u64; 3],
    /// Phase 2 size is per domain.
    pub batch_sizes: [usize; 3],
    pub label_fraction_percent: f64,
    pub seed: u64,
    pub max_rotation_deg: f64,
    pub max_translation_mm: f64,
    /// Progress records are emitted every `log_every` iterations (0 = never).
    pub log_every: u64,
    /// Checkpoint hook interval in iterations (0 = only at phase ends).
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            phase_iterations: [20_000, 40_000, 5_000],
            batch_sizes: [128, 16, 32],
            label_fraction_percent: 0.0,
            seed,
            max_rotation_deg: 180.0,
            max_translation_mm: 10.0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }

    pub fn paper(seed: u64) -> Self {
        TrainConfig { phase_iterations: [200_000, 500_000, 50_000], ..Self::desk(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam betas must be in [0, 1) and epsilon positive");
        }
        if self.phase_iterations.iter().any(|&n| n == 0) {
            return bad("phase iterations must be positive");
        }
        if self.batch_sizes.iter().any(|&n| n == 0) {
            return bad("batch sizes must be positive");
        }
        if !(0.0..=100.0).contains(&self.label_fraction_percent) {
            return bad("label fraction must be within [0, 100]");
        }
        Augmentation { rotation_deg: self.max_rotation_deg, translation_mm: [self.max_translation_mm; 3] }.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, epsilon: self.adam_epsilon }
    }
}

/// Cells updated in each phase. Everything else is bitwise frozen.
pub fn trainable_cells<S: Real>(b: &ModelBundle<S>, phase: u8, side: Side) -> Result<CellSet> {
    Ok(match (phase, side) {
        (1, _) => b.cells(&[Net::PoseEnc, Net::PoseDec]),
        (2, Side::Max) => b.cells(&[Net::DiscS, Net::DiscR]),
        (2, Side::Min) => b.cells(&[Net::EncS, Net::EncR, Net::DecS, Net::DecR, Net::Map]),
        // Posterior head plus the real discriminator's private layers, which
        // only the feature-matching term reaches.
        (3, _) => {
            let private_r = b.cells(&[Net::DiscR]).difference(&b.cells(&[Net::DiscS]));
            b.posterior_head_cells().union(&private_r)
        }
        (p, _) => return Err(Error::UnknownPhase(p)),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub pose_steps: u64,
    pub disc_steps: u64,
    pub gen_steps: u64,
    pub post_steps: u64,
    /// Generator steps that evaluated the labeled-real mapping term.
    pub map_r_evals: u64,
    pub pos_r_evals: u64,
}

/// Resumable position in the schedule plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<S> {
    /// Current phase, `4` once the schedule is complete.
    pub phase: u8,
    /// Completed iterations of the current phase.
    pub iteration: u64,
    pub opt_min: Option<Adam<S>>,
    pub opt_max: Option<Adam<S>>,
    pub counters: StepCounters,
}

impl<S: Real> Default for TrainState<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> TrainState<S> {
    pub fn new() -> Self {
        TrainState { phase: 1, iteration: 0, opt_min: None, opt_max: None, counters: StepCounters::default() }
    }

    pub fn at_phase(phase: u8) -> Self {
        TrainState { phase, ..Self::new() }
    }

    pub fn is_complete(&self) -> bool {
        self.phase > 3
    }
}

#[derive(Clone, Debug)]
pub struct ProgressRecord<'a> {
    pub phase: u8,
    /// Zero-based index of the iteration that produced these values.
    pub iteration: u64,
    pub side: Side,
    pub total: f64,
    pub terms: &'a [(&'static str, f64)],
}

pub trait ProgressSink<S: Real> {
    fn record(&mut self, _record: &ProgressRecord<'_>) {}

    /// Called at checkpoint intervals, at phase ends and, on divergence,
    /// with the last finite state.
    fn checkpoint(&mut self, _bundle: &ModelBundle<S>, _state: &TrainState<S>) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl<S: Real> ProgressSink<S> for NullSink {}

/// Supplies the batch of iteration `t`; must be a pure function of
/// `(phase, t)` for runs to be reproducible.
pub trait BatchProvider<S> {
    /// `[B, 3J]` pose vectors.
    fn pose_batch(&mut self, iteration: u64) -> Result<Tensor<S>>;
    fn depth_batch(&mut self, phase: u8, iteration: u64) -> Result<Batch<S>>;
}

/// Where a run should pause: after `iteration` completed steps of `phase`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopAt {
    pub phase: u8,
    pub iteration: u64,
}

/// Runs from `state` to the end of the schedule, or until `stop`.
pub fn run_schedule<S, P, K>(
    bundle: &mut ModelBundle<S>,
    state: &mut TrainState<S>,
    provider: &mut P,
    cfg: &TrainConfig,
    sink: &mut K,
    stop: Option<StopAt>,
) -> Result<()>
where
    S: Real,
    P: BatchProvider<S> + ?Sized,
    K: ProgressSink<S> + ?Sized,
{
    cfg.validate()?;
    while !state.is_complete() {
        let phase = state.phase;
        let until = match stop {
            Some(s) if s.phase == phase => s.iteration.min(cfg.phase_iterations[slot(phase)]),
            Some(s) if s.phase < phase => return Ok(()),
            _ => cfg.phase_iterations[slot(phase)],
        };
        train_phase(bundle, state, provider, cfg, sink, until)?;
        if state.iteration < cfg.phase_iterations[slot(phase)] {
            return Ok(());
        }
        state.phase += 1;
        state.iteration = 0;
        state.opt_min = None;
        state.opt_max = None;
    }
    Ok(())
}

/// Advances the current phase of `state` to `until` completed iterations.
pub fn train_phase<S, P, K>(
    bundle: &mut ModelBundle<S>,
    state: &mut TrainState<S>,
    provider: &mut P,
    cfg: &TrainConfig,
    sink: &mut K,
    until: u64,
) -> Result<()>
where
    S: Real,
    P: BatchProvider<S> + ?Sized,
    K: ProgressSink<S> + ?Sized,
{
    let phase = state.phase;
    if !(1..=3).contains(&phase) {
        return Err(Error::UnknownPhase(phase));
    }
    let total = cfg.phase_iterations[slot(phase)];
    if state.opt_min.is_none() {
        state.opt_min = Some(Adam::new(cfg.adam(), trainable_cells(bundle, phase, Side::Min)?));
    }
    if phase == 2 && state.opt_max.is_none() {
        state.opt_max = Some(Adam::new(cfg.adam(), trainable_cells(bundle, phase, Side::Max)?));
    }
    while state.iteration < until.min(total) {
        let t = state.iteration;
        let log = cfg.log_every > 0 && (t % cfg.log_every == 0 || t + 1 == total);
        let outcome = match phase {
            1 => step_pose(bundle, state, provider, cfg, sink, t, log),
            2 => step_depth(bundle, state, provider, cfg, sink, t, log),
            _ => step_posterior(bundle, state, provider, cfg, sink, t, log),
        };
        if let Err(e) = outcome {
            return Err(match e {
                Error::NonFinite(_) | Error::Diverged { .. } => {
                    sink.checkpoint(bundle, state)?;
                    Error::Diverged { phase, iteration: t }
                }
                other => other,
            });
        }
        state.iteration += 1;
        let done = state.iteration == total;
        if done || (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) {
            sink.checkpoint(bundle, state)?;
        }
    }
    Ok(())
}

/// Reparameterization noise of one step.
pub fn iteration_noise(cfg: &TrainConfig, phase: u8, t: u64, side: Side) -> Noise {
    let mut r = rng::stream(cfg.seed, &[tag::LATENT, phase as u64, t, side as u64]);
    Noise::seeded(rand::RngCore::next_u64(&mut r))
}

/// Evaluates an objective and its gradients over `trainable`.
fn objective<S, F>(bundle: &ModelBundle<S>, trainable: &CellSet, f: F) -> Result<(f64, TermValues, Gradients<S>)>
where
    S: Real,
    F: FnOnce(&mut Graph<'_, S>) -> Result<(crate::autodiff::Var, TermValues)>,
{
    let mut g = Graph::with_trainable(&bundle.store, trainable);
    let (v, terms) = f(&mut g)?;
    let total = g.scalar(v).to_f64();
    let grads = g.backward(v);
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((total, terms, grads))
}

fn emit<S: Real, K: ProgressSink<S> + ?Sized>(sink: &mut K, log: bool, phase: u8, t: u64, side: Side, total: f64, terms: &TermValues) {
    if log {
        sink.record(&ProgressRecord { phase, iteration: t, side, total, terms });
    }
}

fn step_pose<S, P, K>(b: &mut ModelBundle<S>, st: &mut TrainState<S>, p: &mut P, cfg: &TrainConfig, sink: &mut K, t: u64, log: bool) -> Result<()>
where
    S: Real,
    P: BatchProvider<S> + ?Sized,
    K: ProgressSink<S> + ?Sized,
{
    let y = p.pose_batch(t)?;
    let opt = st.opt_min.as_mut().expect("optimizer initialized");
    let noise = iteration_noise(cfg, 1, t, Side::Min);
    let (total, terms, grads) = objective(b, &opt.cells, |g| losses::loss_vae_pose_terms(g, b, &y, &cfg.weights, noise))?;
    emit(sink, log, 1, t, Side::Min, total, &terms);
    opt.step(&mut b.store, &grads);
    st.counters.pose_steps += 1;
    Ok(())
}

fn step_depth<S, P, K>(b: &mut ModelBundle<S>, st: &mut TrainState<S>, p: &mut P, cfg: &TrainConfig, sink: &mut K, t: u64, log: bool) -> Result<()>
where
    S: Real,
    P: BatchProvider<S> + ?Sized,
    K: ProgressSink<S> + ?Sized,
{
    let batch = p.depth_batch(2, t)?;
    for side in [Side::Max, Side::Min] {
        let opt = match side {
            Side::Max => st.opt_max.as_mut(),
            Side::Min => st.opt_min.as_mut(),
        }
        .expect("optimizer initialized");
        let noise = iteration_noise(cfg, 2, t, side);
        let (total, terms, grads) = objective(b, &opt.cells, |g| losses::total_objective(g, b, &batch, &cfg.weights, 2, side, noise))?;
        emit(sink, log, 2, t, side, total, &terms);
        opt.step(&mut b.store, &grads);
        match side {
            Side::Max => st.counters.disc_steps += 1,
            Side::Min => {
                st.counters.gen_steps += 1;
                if terms.iter().any(|(n, _)| *n == "map_r") {
                    st.counters.map_r_evals += 1;
                }
            }
        }
    }
    Ok(())
}

fn step_posterior<S, P, K>(b: &mut ModelBundle<S>, st: &mut TrainState<S>, p: &mut P, cfg: &TrainConfig, sink: &mut K, t: u64, log: bool) -> Result<()>
where
    S: Real,
    P: BatchProvider<S> + ?Sized,
    K: ProgressSink<S> + ?Sized,
{
    let batch = p.depth_batch(3, t)?;
    let opt = st.opt_min.as_mut().expect("optimizer initialized");
    let noise = iteration_noise(cfg, 3, t, Side::Min);
    let (total, terms, grads) = objective(b, &opt.cells, |g| losses::total_objective(g, b, &batch, &cfg.weights, 3, Side::Min, noise))?;
    emit(sink, log, 3, t, Side::Min, total, &terms);
    opt.step(&mut b.store, &grads);
    st.counters.post_steps += 1;
    if terms.iter().any(|(n, _)| *n == "pos_r") {
        st.counters.pos_r_evals += 1;
    }
    Ok(())
}

/// Draws augmented batches from a [`DatasetArchive`]. Labeled real samples
/// are only ever read through the archive's audited accessor.
pub struct ArchiveBatches<'a> {
    archive: &'a DatasetArchive,
    cfg: TrainConfig,
    labeled: Vec<usize>,
}

/// Sub-stream slots of one iteration.
mod slot_tag {
    pub const SYNTH: u64 = 1;
    pub const REAL: u64 = 2;
    pub const LABELED: u64 = 3;
    pub const POSE: u64 = 4;
}

impl<'a> ArchiveBatches<'a> {
    pub fn new(archive: &'a DatasetArchive, cfg: &TrainConfig) -> Self {
        ArchiveBatches { archive, cfg: cfg.clone(), labeled: archive.labeled_indices() }
    }

    pub fn archive(&self) -> &DatasetArchive {
        self.archive
    }

    fn indices(&self, phase: u8, t: u64, which: u64, n: usize, pool: usize) -> Vec<usize> {
        let mut r = rng::stream(self.cfg.seed, &[tag::BATCH, phase as u64, t, which]);
        (0..n).map(|_| rand::Rng::random_range(&mut r, 0..pool)).collect()
    }

    fn augmentation(&self, phase: u8, t: u64, which: u64, i: usize) -> Augmentation {
        let mut r = rng::stream(self.cfg.seed, &[tag::AUGMENT, phase as u64, t, which, i as u64]);
        Augmentation::sample(&mut r, self.cfg.max_rotation_deg, self.cfg.max_translation_mm)
    }

    /// Jointly augmented pair; falls back to the unaugmented pair when the
    /// transform would move a joint outside the cube.
    fn pair(&self, img: &DepthImage, pose: &PoseVec, aug: &Augmentation) -> Result<(DepthImage, PoseVec)> {
        let cube = pose.cube();
        let (ai, ap) = augment_pair(img, &denormalize_pose(pose), aug, &cube)?;
        match normalize_pose(&ap, &cube) {
            Ok(v) => Ok((ai, v)),
            Err(Error::OutOfCube { .. }) => Ok((img.clone(), pose.clone())),
            Err(e) => Err(e),
        }
    }

    fn pose_only(&self, pose: &PoseVec, aug: &Augmentation) -> PoseVec {
        let cube = pose.cube();
        let p = denormalize_pose(pose);
        let moved = crate::posekit::Pose { joints: p.joints.iter().map(|j| aug.apply_point(j, &cube)).collect(), handedness: p.handedness };
        normalize_pose(&moved, &cube).unwrap_or_else(|_| pose.clone())
    }

    fn pose_rows<S: Real>(rows: &[PoseVec]) -> Tensor<S> {
        let d = rows.first().map_or(0, |r| r.values.len());
        let data = rows.iter().flat_map(|r| r.values.iter().map(|&v| S::from_f64(v))).collect();
        Tensor::from_vec(&[rows.len(), d], data)
    }

    fn images<S: Real>(imgs: &[DepthImage]) -> Tensor<S> {
        let refs: Vec<&DepthImage> = imgs.iter().collect();
        DepthImage::batch_tensor(&refs)
    }

    /// Synthetic pairs for `phase`, iteration `t`.
    fn synthetic<S: Real>(&self, phase: u8, t: u64, n: usize) -> Result<(Tensor<S>, Tensor<S>)> {
        let syn = &self.archive.synthetic;
        let idx = self.indices(phase, t, slot_tag::SYNTH, n, syn.len());
        let mut imgs = Vec::with_capacity(n);
        let mut poses = Vec::with_capacity(n);
        for (i, &k) in idx.iter().enumerate() {
            let aug = self.augmentation(phase, t, slot_tag::SYNTH, i);
            let (im, p) = self.pair(&syn.images[k], &syn.poses[k], &aug)?;
            imgs.push(im);
            poses.push(p);
        }
        Ok((Self::images(&imgs), Self::pose_rows(&poses)))
    }

    fn real<S: Real>(&self, phase: u8, t: u64, n: usize) -> Tensor<S> {
        let idx = self.indices(phase, t, slot_tag::REAL, n, self.archive.n_real());
        let cube = self.archive.cube();
        let imgs: Vec<DepthImage> = idx
            .iter()
            .enumerate()
            .map(|(i, &k)| augment_image(self.archive.real_image(k), &self.augmentation(phase, t, slot_tag::REAL, i), &cube))
            .collect();
        Self::images(&imgs)
    }

    fn labeled<S: Real>(&self, phase: u8, t: u64, n: usize) -> Result<Option<(Tensor<S>, Tensor<S>)>> {
        if self.labeled.is_empty() {
            return Ok(None);
        }
        let picks = self.indices(phase, t, slot_tag::LABELED, n, self.labeled.len());
        let mut imgs = Vec::with_capacity(n);
        let mut poses = Vec::with_capacity(n);
        for (i, &p) in picks.iter().enumerate() {
            let k = self.labeled[p];
            let label = self.archive.real_label(k).ok_or(Error::EmptyLabeledSet("real"))?;
            let aug = self.augmentation(phase, t, slot_tag::LABELED, i);
            let (im, pv) = self.pair(self.archive.real_image(k), label, &aug)?;
            imgs.push(im);
            poses.push(pv);
        }
        Ok(Some((Self::images(&imgs), Self::pose_rows(&poses))))
    }
}

impl ArchiveBatches<'_> {
    /// Phase-1 batch for iteration `t`; a pure function of `(seed, t)`.
    pub fn make_pose_batch<S: Real>(&self, t: u64) -> Result<Tensor<S>> {
        let syn = &self.archive.synthetic;
        let n = self.cfg.batch_sizes[0];
        let idx = self.indices(1, t, slot_tag::POSE, n, syn.len());
        let rows: Vec<PoseVec> =
            idx.iter().enumerate().map(|(i, &k)| self.pose_only(&syn.poses[k], &self.augmentation(1, t, slot_tag::POSE, i))).collect();
        Ok(Self::pose_rows(&rows))
    }

    /// Phase-2/3 batch for iteration `t`; a pure function of `(seed, phase, t)`.
    pub fn make_depth_batch<S: Real>(&self, phase: u8, t: u64) -> Result<Batch<S>> {
        if !(2..=3).contains(&phase) {
            return Err(Error::UnknownPhase(phase));
        }
        let n = self.cfg.batch_sizes[slot(phase)];
        let (x_s, y_s) = self.synthetic(phase, t, n)?;
        Ok(Batch { x_s, y_s, x_r: self.real(phase, t, n), labeled: self.labeled(phase, t, n)? })
    }
}

impl<S: Real> BatchProvider<S> for ArchiveBatches<'_> {
    fn pose_batch(&mut self, t: u64) -> Result<Tensor<S>> {
        self.make_pose_batch(t)
    }

    fn depth_batch(&mut self, phase: u8, t: u64) -> Result<Batch<S>> {
        self.make_depth_batch(phase, t)
    }
}

/// Short human-readable summary of a progress record.
pub fn format_record(r: &ProgressRecord<'_>) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = write!(s, "phase {} iter {} {:?} total {:.6}", r.phase, r.iteration, r.side, r.total);
    for (k, v) in r.terms {
        let _ = write!(s, " {k}={v:.6}");
    }
    s
}

/// Redraws the archive's label mask when it differs from the configured fraction.
pub fn apply_label_fraction(archive: &mut DatasetArchive, cfg: &TrainConfig) -> Result<()> {
    if archive.manifest.params.label_fraction_percent != cfg.label_fraction_percent {
        archive.relabel(cfg.label_fraction_percent)?;
    }
    Ok(())
}
