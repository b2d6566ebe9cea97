//! Subcommand implementations. Each returns the text printed on success.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lsps_core::depth::DepthImage;
use lsps_core::eval::{self, BaselineKind, EvalReport};
use lsps_core::models::{Domain, ModelBundle};
use lsps_core::posekit::CropCube;
use lsps_core::synthgen::{make_dataset, render_depth, DatasetArchive, DomainStyle};
use lsps_core::trainer::{self, ArchiveBatches, StopAt, TrainState};

use crate::archive::{load_archive, save_archive};
use crate::binio::write_file;
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::loader::{workers_from_env, Prefetcher};
use crate::output::{gnuplot_script, read_pgm_tiles, write_curve_csv, write_pairs_csv, write_pgm_grid, write_pose_csv};
use crate::progress::{phase_checkpoint_name, RunSink};
use crate::report::{collect_reports, format_table, label_fraction_points, table_rows, REPORT_FILE};

pub fn gen_data(config: &Path, out: &Path, force: bool) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let archive = make_dataset(&cfg.skeleton, &cfg.synthetic_style, &cfg.real_style, &cfg.cube, &cfg.dataset)?;
    save_archive(&archive, out, force)?;
    let p = &archive.manifest.params;
    Ok(format!(
        "synthetic {} real {} test {} labeled {} resolution {}\n",
        p.n_synthetic, p.n_real, p.n_test, archive.manifest.labeled_count, p.resolution
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseSel {
    One,
    Two,
    Three,
    All,
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub archive: &'a Path,
    pub out: &'a Path,
    pub phase: PhaseSel,
    pub resume: Option<&'a Path>,
    pub verbose: bool,
}

/// Loads the archive and applies the configured label fraction in memory.
fn training_archive(dir: &Path, cfg: &RunConfig) -> Result<DatasetArchive> {
    let mut archive = load_archive(dir)?;
    if archive.manifest.params.resolution != cfg.arch.image_resolution {
        return Err(Error::Config(format!(
            "archive resolution {} does not match arch.image_resolution {}",
            archive.manifest.params.resolution, cfg.arch.image_resolution
        )));
    }
    trainer::apply_label_fraction(&mut archive, &cfg.train)?;
    Ok(archive)
}

pub fn train(a: &TrainArgs<'_>) -> Result<String> {
    let cfg = RunConfig::load(a.config)?;
    let workers = workers_from_env().map_err(Error::Usage)?;
    let digest = cfg.digest();
    let (mut bundle, mut state) = match (a.resume, a.phase) {
        (Some(path), _) => {
            let c = load_checkpoint(path, Some(&digest))?;
            (c.bundle, c.state)
        }
        (None, PhaseSel::One | PhaseSel::All) => (ModelBundle::<f32>::build(&cfg.arch, cfg.train.seed)?, TrainState::new()),
        (None, sel) => {
            let prior = if sel == PhaseSel::Two { 1 } else { 2 };
            let path = a.out.join(phase_checkpoint_name(prior));
            if !path.is_file() {
                return Err(Error::Usage(format!(
                    "phase {} needs the phase-{prior} checkpoint {} (run that phase first or pass --resume)",
                    prior + 1,
                    path.display()
                )));
            }
            let c = load_checkpoint(&path, Some(&digest))?;
            (c.bundle, c.state)
        }
    };
    let target = match a.phase {
        PhaseSel::One => 1,
        PhaseSel::Two => 2,
        PhaseSel::Three => 3,
        PhaseSel::All => 3,
    };
    if a.phase != PhaseSel::All && state.phase > target {
        return Err(Error::Usage(format!("checkpoint is already past phase {target}")));
    }
    let archive = training_archive(a.archive, &cfg)?;
    std::fs::create_dir_all(a.out).map_err(Error::io(a.out))?;
    let mut sink = RunSink::open(a.out, &cfg.train)?;
    sink.echo = a.verbose;
    let mut provider = Prefetcher::<f32>::new(ArchiveBatches::new(&archive, &cfg.train), workers, cfg.train.phase_iterations);
    let stop = (a.phase != PhaseSel::All).then_some(StopAt { phase: target + 1, iteration: 0 });
    let result = trainer::run_schedule(&mut bundle, &mut state, &mut provider, &cfg.train, &mut sink, stop);
    sink.flush()?;
    if let Some(e) = sink.failure.take() {
        return Err(e);
    }
    result?;
    let c = &state.counters;
    Ok(format!(
        "phase {} complete; steps pose {} disc {} gen {} post {}; labeled reads {}\n",
        target, c.pose_steps, c.disc_steps, c.gen_steps, c.post_steps, archive.audit().reads()
    ))
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub archive: &'a Path,
    pub out: &'a Path,
    pub baseline: Option<BaselineKind>,
    /// Images in the optional prediction grid.
    pub grid: usize,
}

fn lsps_label(m: f64) -> String {
    if m == 0.0 {
        BaselineKind::LspsSynthetic.name()
    } else {
        BaselineKind::LspsSemi(m).name()
    }
}

pub fn evaluate(a: &EvalArgs<'_>) -> Result<EvalReport> {
    let cfg = a.config.map(RunConfig::load).transpose()?;
    std::fs::create_dir_all(a.out).map_err(Error::io(a.out))?;
    let thresholds = cfg.as_ref().map_or_else(eval::default_thresholds, |c| c.eval.thresholds_mm.clone());
    let (bundle, report, archive) = match (a.checkpoint, a.baseline) {
        (Some(path), None) => {
            let Checkpoint { manifest, bundle, .. } = load_checkpoint(path, cfg.as_ref().map(|c| c.digest()).as_deref())?;
            let archive = load_archive(a.archive)?;
            let mut r = eval::evaluate_test_split(&bundle, &archive, &thresholds)?;
            r.config_digest = manifest.config_digest;
            r.label = lsps_label(manifest.train.label_fraction_percent);
            r.label_fraction_percent = manifest.train.label_fraction_percent;
            (bundle, r, archive)
        }
        (None, Some(kind)) => {
            let cfg = cfg.ok_or_else(|| Error::Usage("--baseline requires --config".into()))?;
            let mut archive = load_archive(a.archive)?;
            let mut train = cfg.train.clone();
            train.log_every = 0;
            let (bundle, _) = eval::run_baseline::<f32, _>(kind, &mut archive, &cfg.arch, &train, &mut lsps_core::trainer::NullSink)?;
            save_checkpoint(&a.out.join("model.ckpt"), &bundle, &TrainState::at_phase(4), &train)?;
            let mut r = eval::evaluate_test_split(&bundle, &archive, &thresholds)?;
            r.config_digest = cfg.digest();
            r.label = kind.name();
            r.label_fraction_percent = archive.manifest.params.label_fraction_percent;
            (bundle, r, archive)
        }
        _ => return Err(Error::Usage("pass exactly one of --checkpoint or --baseline".into())),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out.join(REPORT_FILE), json.as_bytes())?;
    write_curve_csv(&a.out.join("curve.csv"), &report.frames_within)?;
    if a.grid > 0 {
        let n = a.grid.min(archive.test.images.len());
        let inputs: Vec<DepthImage> = archive.test.images[..n].to_vec();
        let refs: Vec<&DepthImage> = inputs.iter().collect();
        let cube = archive.cube();
        let pred = eval::predict_poses(&bundle, &refs, &cube)?;
        let m = &archive.manifest;
        let render = |p| render_depth(p, &m.skeleton, &DomainStyle::synthetic(), &cube, m.params.resolution, 0);
        let drawn: Vec<DepthImage> =
            pred.poses.iter().map(|p| render(p).unwrap_or_else(|_| DepthImage::background(m.params.resolution))).collect();
        write_pgm_grid(&a.out.join("predictions.pgm"), &[inputs, drawn])?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    S2R,
    R2S,
    ReconS,
    ReconR,
}

impl Direction {
    pub fn domains(self) -> (Domain, Domain) {
        match self {
            Direction::S2R => (Domain::Synthetic, Domain::Real),
            Direction::R2S => (Domain::Real, Domain::Synthetic),
            Direction::ReconS => (Domain::Synthetic, Domain::Synthetic),
            Direction::ReconR => (Domain::Real, Domain::Real),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::S2R => "s2r",
            Direction::R2S => "r2s",
            Direction::ReconS => "recon-s",
            Direction::ReconR => "recon-r",
        }
    }
}

pub struct TranslateArgs<'a> {
    pub checkpoint: &'a Path,
    pub archive: Option<&'a Path>,
    pub input_pgm: Option<&'a Path>,
    pub direction: Direction,
    pub count: usize,
    pub out: &'a Path,
}

fn take_range<T: Clone>(items: &[T], count: usize, what: &str) -> Result<Vec<T>> {
    if count == 0 || count > items.len() {
        return Err(Error::Usage(format!("--count {count} out of range: {what} has {} images", items.len())));
    }
    Ok(items[..count].to_vec())
}

/// Writes `translate_<dir>.pgm` (inputs over outputs) and
/// `translate_<dir>_out.pgm` (outputs only, loadable with `--input-pgm`).
pub fn translate(a: &TranslateArgs<'_>) -> Result<String> {
    let c = load_checkpoint(a.checkpoint, None)?;
    let res = c.bundle.config.image_resolution;
    let (from, to) = a.direction.domains();
    let inputs = match (a.input_pgm, a.archive) {
        (Some(p), None) => take_range(&read_pgm_tiles(p, res)?, a.count, "input grid")?,
        (None, Some(dir)) => {
            let archive = load_archive(dir)?;
            match from {
                Domain::Synthetic => take_range(&archive.synthetic.images, a.count, "synthetic split")?,
                Domain::Real => {
                    let all: Vec<DepthImage> = (0..archive.n_real()).map(|i| archive.real_image(i).clone()).collect();
                    take_range(&all, a.count, "real split")?
                }
            }
        }
        _ => return Err(Error::Usage("pass exactly one of --archive or --input-pgm".into())),
    };
    let refs: Vec<&DepthImage> = inputs.iter().collect();
    let x = DepthImage::batch_tensor::<f32>(&refs);
    let y = c.bundle.translate(&x, from, to)?;
    let outputs = DepthImage::from_batch(&y);
    std::fs::create_dir_all(a.out).map_err(Error::io(a.out))?;
    let name = a.direction.name();
    write_pgm_grid(&a.out.join(format!("translate_{name}.pgm")), &[inputs, outputs.clone()])?;
    write_pgm_grid(&a.out.join(format!("translate_{name}_out.pgm")), &[outputs])?;
    Ok(format!("translated {} images ({name})\n", a.count))
}

pub struct WalkArgs<'a> {
    pub checkpoint: &'a Path,
    pub archive: &'a Path,
    pub from: usize,
    pub to: usize,
    pub steps: usize,
    pub out: &'a Path,
}

pub fn walk(a: &WalkArgs<'_>) -> Result<String> {
    let c = load_checkpoint(a.checkpoint, None)?;
    let archive = load_archive(a.archive)?;
    let poses = &archive.synthetic.poses;
    for idx in [a.from, a.to] {
        if idx >= poses.len() {
            return Err(Error::Usage(format!("pose index {idx} out of range (synthetic split has {})", poses.len())));
        }
    }
    let walk = eval::latent_walk(&c.bundle, &poses[a.from], &poses[a.to], a.steps)?;
    let (steps, ends) = eval::walk_displacements(&walk);
    std::fs::create_dir_all(a.out).map_err(Error::io(a.out))?;
    let syn = walk.iter().map(|s| s.synthetic.clone()).collect();
    let real = walk.iter().map(|s| s.real.clone()).collect();
    write_pgm_grid(&a.out.join("walk.pgm"), &[syn, real])?;
    write_pose_csv(&a.out.join("walk_poses.csv"), &walk.iter().map(|s| s.pose.clone()).collect::<Vec<_>>())?;
    let max_step = steps.iter().copied().fold(0.0, f64::max);
    Ok(format!("walk {} columns; max step {max_step:.3} mm; endpoint distance {ends:.3} mm\n", walk.len()))
}

pub struct SampleArgs<'a> {
    pub checkpoint: &'a Path,
    pub n: usize,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn sample(a: &SampleArgs<'_>) -> Result<String> {
    if a.n == 0 {
        return Err(Error::Usage("--n must be positive".into()));
    }
    let c = load_checkpoint(a.checkpoint, None)?;
    let samples = eval::sample_prior(&c.bundle, a.n, a.seed, &CropCube::default());
    std::fs::create_dir_all(a.out).map_err(Error::io(a.out))?;
    let syn = samples.iter().map(|s| s.synthetic.clone()).collect();
    let real = samples.iter().map(|s| s.real.clone()).collect();
    write_pgm_grid(&a.out.join("samples.pgm"), &[syn, real])?;
    let poses: Vec<_> = samples.into_iter().map(|s| s.pose).collect();
    write_pose_csv(&a.out.join("sample_poses.csv"), &poses)?;
    let spec = lsps_core::posekit::SkeletonSpec::default_hand();
    let mut s = format!("sampled {} poses\n", a.n);
    if spec.joint_count * 3 == c.bundle.config.pose_dim {
        let st = eval::bone_length_stats(&poses, &spec);
        let _ = writeln!(s, "bone length deviation mm: mean {:.3} median {:.3} max {:.3}", st.mean_abs_mm, st.median_abs_mm, st.max_abs_mm);
    }
    Ok(s)
}

pub struct ReportArgs<'a> {
    pub run_dir: &'a Path,
    pub within_mm: f64,
    pub gnuplot: bool,
}

/// Writes `summary.txt`, `label_fraction.csv` and optionally `curves.gp`.
pub fn report(a: &ReportArgs<'_>) -> Result<String> {
    let found = collect_reports(a.run_dir)?;
    if found.is_empty() {
        return Err(Error::Usage(format!("no {REPORT_FILE} under {}", a.run_dir.display())));
    }
    let reports: Vec<EvalReport> = found.iter().map(|(_, r)| r.clone()).collect();
    let table = format_table(&table_rows(&reports, a.within_mm), a.within_mm);
    write_file(&a.run_dir.join("summary.txt"), table.as_bytes())?;
    write_pairs_csv(&a.run_dir.join("label_fraction.csv"), ("label_fraction_percent", "mean_error_mm"), &label_fraction_points(&reports))?;
    if a.gnuplot {
        let series: Vec<(String, String)> = found
            .iter()
            .map(|(p, r)| {
                let csv = p.with_file_name("curve.csv");
                let rel: PathBuf = csv.strip_prefix(a.run_dir).map(Path::to_path_buf).unwrap_or(csv);
                (r.label.clone(), rel.display().to_string())
            })
            .collect();
        let script = gnuplot_script("Frames within distance", "max joint error threshold (mm)", "fraction of frames", "curves.png", &series);
        write_file(&a.run_dir.join("curves.gp"), script.as_bytes())?;
    }
    Ok(table)
}
