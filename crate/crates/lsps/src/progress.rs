//! Training progress log and checkpoint hook.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lsps_core::models::ModelBundle;
use lsps_core::trainer::{ProgressRecord, ProgressSink, TrainConfig, TrainState};

use crate::checkpoint::save_checkpoint;
use crate::error::Error;

pub const LOSS_CSV: &str = "loss.csv";
pub const LATEST: &str = "latest.ckpt";

pub fn phase_checkpoint_name(phase: u8) -> String {
    format!("phase{phase}.ckpt")
}

/// Appends `phase,iteration,side,term,value,wall_s` rows and writes
/// `latest.ckpt` at every checkpoint hook, plus `phase{p}.ckpt` when a
/// phase completes.
pub struct RunSink {
    dir: PathBuf,
    train: TrainConfig,
    log: BufWriter<File>,
    start: Instant,
    pub echo: bool,
    /// First I/O failure; the trainer's record hook cannot return errors.
    pub failure: Option<Error>,
}

impl RunSink {
    pub fn open(dir: &Path, train: &TrainConfig) -> crate::error::Result<Self> {
        let path = dir.join(LOSS_CSV);
        let fresh = !path.exists();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(Error::io(&path))?;
        let mut log = BufWriter::new(file);
        if fresh {
            writeln!(log, "phase,iteration,side,term,value,wall_s").map_err(Error::io(&path))?;
        }
        Ok(RunSink { dir: dir.into(), train: train.clone(), log, start: Instant::now(), echo: false, failure: None })
    }

    pub fn flush(&mut self) -> crate::error::Result<()> {
        let path = self.dir.join(LOSS_CSV);
        self.log.flush().map_err(Error::io(path))
    }
}

impl ProgressSink<f32> for RunSink {
    fn record(&mut self, r: &ProgressRecord<'_>) {
        let wall = self.start.elapsed().as_secs_f64();
        let side = format!("{:?}", r.side).to_lowercase();
        let rows = std::iter::once(("total", r.total)).chain(r.terms.iter().copied());
        for (term, value) in rows {
            if let Err(e) = writeln!(self.log, "{},{},{side},{term},{value},{wall:.3}", r.phase, r.iteration) {
                self.failure.get_or_insert(Error::Io { path: self.dir.join(LOSS_CSV), source: e });
            }
        }
        if self.echo {
            eprintln!("{}", lsps_core::trainer::format_record(r));
        }
    }

    fn checkpoint(&mut self, b: &ModelBundle<f32>, s: &TrainState<f32>) -> lsps_core::error::Result<()> {
        let mut save = |name: String| {
            save_checkpoint(&self.dir.join(&name), b, s, &self.train).map_err(|e| {
                let msg = format!("checkpoint write failed: {e}");
                self.failure.get_or_insert(e);
                lsps_core::error::Error::Config(msg)
            })
        };
        save(LATEST.to_string())?;
        let phase = s.phase;
        if (1..=3).contains(&phase) && s.iteration == self.train.phase_iterations[phase as usize - 1] {
            save(phase_checkpoint_name(phase))?;
        }
        let _ = self.log.flush();
        Ok(())
    }
}
