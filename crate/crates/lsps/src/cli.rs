//! Command-line grammar.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use lsps_core::eval::BaselineKind;

use crate::commands::{self, Direction, PhaseSel};
use crate::error::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lsps", version, about = "Shared-latent-space hand pose estimation from depth images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    SyntheticOnly,
    LspsSynthetic,
    LspsSemi,
    RealOnly,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    S2r,
    R2s,
    ReconS,
    ReconR,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a dataset archive.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run training phases, writing checkpoints and loss.csv into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        phase: PhaseArg,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Score a checkpoint, or train and score a baseline, on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Required with --baseline; with --checkpoint, enforces a matching digest.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        /// Label percentage for lsps-semi.
        #[arg(long)]
        labels: Option<f64>,
        /// Test images in predictions.pgm (0 = none).
        #[arg(long, default_value_t = 0)]
        grid: usize,
    },
    /// Translate or reconstruct depth images.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "input_pgm")]
        archive: Option<PathBuf>,
        /// Grid of tiles produced by an earlier translate.
        #[arg(long)]
        input_pgm: Option<PathBuf>,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate between two synthetic poses in the pose latent space.
    Walk {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        /// Interior points between the endpoints.
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode draws from the pose prior.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate report.json files under a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 40.0)]
        within_mm: f64,
        /// Also write a gnuplot script for the error curves.
        #[arg(long)]
        gnuplot: bool,
    },
}

fn baseline(kind: BaselineArg, labels: Option<f64>) -> Result<BaselineKind> {
    match (kind, labels) {
        (BaselineArg::LspsSemi, Some(m)) => Ok(BaselineKind::LspsSemi(m)),
        (BaselineArg::LspsSemi, None) => Err(Error::Usage("--baseline lsps-semi requires --labels".into())),
        (_, Some(_)) => Err(Error::Usage("--labels applies only to lsps-semi".into())),
        (BaselineArg::SyntheticOnly, None) => Ok(BaselineKind::SyntheticOnly),
        (BaselineArg::LspsSynthetic, None) => Ok(BaselineKind::LspsSynthetic),
        (BaselineArg::RealOnly, None) => Ok(BaselineKind::RealOnly),
    }
}

/// Runs one command and returns its stdout text.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenData { config, out, force } => commands::gen_data(&config, &out, force),
        Command::Train { config, archive, out, phase, resume, verbose } => {
            let phase = match phase {
                PhaseArg::One => PhaseSel::One,
                PhaseArg::Two => PhaseSel::Two,
                PhaseArg::Three => PhaseSel::Three,
                PhaseArg::All => PhaseSel::All,
            };
            commands::train(&commands::TrainArgs { config: &config, archive: &archive, out: &out, phase, resume: resume.as_deref(), verbose })
        }
        Command::Eval { checkpoint, config, archive, out, baseline: kind, labels, grid } => {
            let kind = match kind {
                Some(k) => Some(baseline(k, labels)?),
                None if labels.is_some() => return Err(Error::Usage("--labels requires --baseline lsps-semi".into())),
                None => None,
            };
            let r = commands::evaluate(&commands::EvalArgs {
                checkpoint: checkpoint.as_deref(),
                config: config.as_deref(),
                archive: &archive,
                out: &out,
                baseline: kind,
                grid,
            })?;
            Ok(format!("{}: mean joint error {:.3} mm over {} frames ({} clip events)\n", r.label, r.mean_joint_error_mm, r.frames, r.clip_events))
        }
        Command::Translate { checkpoint, archive, input_pgm, direction, count, out } => {
            let direction = match direction {
                DirectionArg::S2r => Direction::S2R,
                DirectionArg::R2s => Direction::R2S,
                DirectionArg::ReconS => Direction::ReconS,
                DirectionArg::ReconR => Direction::ReconR,
            };
            commands::translate(&commands::TranslateArgs {
                checkpoint: &checkpoint,
                archive: archive.as_deref(),
                input_pgm: input_pgm.as_deref(),
                direction,
                count,
                out: &out,
            })
        }
        Command::Walk { checkpoint, archive, from, to, steps, out } => {
            commands::walk(&commands::WalkArgs { checkpoint: &checkpoint, archive: &archive, from, to, steps, out: &out })
        }
        Command::Sample { checkpoint, n, seed, out } => commands::sample(&commands::SampleArgs { checkpoint: &checkpoint, n, seed, out: &out }),
        Command::Report { run_dir, within_mm, gnuplot } => commands::report(&commands::ReportArgs { run_dir: &run_dir, within_mm, gnuplot }),
    }
}
