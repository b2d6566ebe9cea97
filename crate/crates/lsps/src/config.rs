//! Run configuration: one JSON document per experiment.

use std::path::Path;

use lsps_core::models::ArchConfig;
use lsps_core::posekit::{CropCube, SkeletonSpec};
use lsps_core::synthgen::{DatasetParams, DomainStyle};
use lsps_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Ascending thresholds for the frames-within curve, mm.
    pub thresholds_mm: Vec<f64>,
    /// Threshold reported in the summary table column.
    pub table_threshold_mm: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { thresholds_mm: lsps_core::eval::default_thresholds(), table_threshold_mm: 40.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub skeleton: SkeletonSpec,
    pub cube: CropCube,
    pub dataset: DatasetParams,
    pub synthetic_style: DomainStyle,
    pub real_style: DomainStyle,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
}

impl RunConfig {
    /// Desk-scale defaults: 4000/4000/512 frames at 64×64.
    pub fn desk(seed: u64) -> Self {
        let skeleton = SkeletonSpec::default_hand();
        let j = skeleton.joint_count;
        RunConfig {
            schema_version: SCHEMA_VERSION,
            cube: CropCube::default(),
            dataset: DatasetParams { n_synthetic: 4000, n_real: 4000, n_test: 512, label_fraction_percent: 0.0, resolution: 64, seed },
            synthetic_style: DomainStyle::synthetic(),
            real_style: DomainStyle::real(),
            arch: ArchConfig::desk(j),
            train: TrainConfig::desk(seed),
            skeleton,
            eval: EvalOptions::default(),
        }
    }

    /// Res-8 configuration that trains in seconds; used by tests and demos.
    pub fn tiny(seed: u64) -> Self {
        let mut c = Self::desk(seed);
        c.dataset = DatasetParams { n_synthetic: 48, n_real: 48, n_test: 8, label_fraction_percent: 0.0, resolution: 8, seed };
        c.arch = ArchConfig::tiny(c.skeleton.joint_count);
        c.train.phase_iterations = [4, 4, 3];
        c.train.batch_sizes = [8, 2, 4];
        c.train.log_every = 1;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.skeleton.validate()?;
        self.dataset.validate()?;
        self.synthetic_style.validate()?;
        self.real_style.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if self.arch.pose_dim != 3 * self.skeleton.joint_count {
            return Err(Error::Config(format!("arch.pose_dim {} != 3 × {} joints", self.arch.pose_dim, self.skeleton.joint_count)));
        }
        if self.arch.image_resolution != self.dataset.resolution {
            return Err(Error::Config(format!(
                "arch.image_resolution {} != dataset.resolution {}",
                self.arch.image_resolution, self.dataset.resolution
            )));
        }
        let t = &self.eval.thresholds_mm;
        if t.is_empty() || t.windows(2).any(|w| !(w[0] < w[1])) || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("eval.thresholds_mm must be finite and strictly ascending".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| match e.classify() {
            serde_json::error::Category::Io => Error::Json { path: path.into(), source: e },
            _ => Error::Config(format!("{}: {e}", path.display())),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Digest over everything that determines trained parameters.
    pub fn digest(&self) -> String {
        model_digest(&self.arch, &self.train)
    }
}

/// sha256 over the canonical JSON of the architecture and the training
/// settings that affect parameters. Logging and checkpoint cadence are
/// excluded so that they can change between a run and its resume.
pub fn model_digest(arch: &ArchConfig, train: &TrainConfig) -> String {
    let mut t = train.clone();
    t.log_every = 0;
    t.checkpoint_every = 0;
    let body = serde_json::to_vec(&(arch, &t)).expect("config serializes");
    hex::encode(Sha256::digest(&body))
}
