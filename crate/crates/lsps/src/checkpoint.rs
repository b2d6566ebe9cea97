//! Checkpoint container.
//!
//! Layout: `LSPSCKPT`, u32 version, u64 manifest length, manifest JSON,
//! parameter tensors (f32le, manifest order), optimizer moments (f32le,
//! `m` then `v` per entry, manifest order), then sha256 of all preceding
//! bytes. Shared cells are stored once under their canonical name.

use std::collections::BTreeMap;
use std::path::Path;

use lsps_core::models::{ArchConfig, ModelBundle};
use lsps_core::optim::{Adam, AdamConfig, Moments};
use lsps_core::params::{CellId, CellSet};
use lsps_core::tensor::Tensor;
use lsps_core::trainer::{StepCounters, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{f32_bytes, parse_f32, read_file, write_file};
use crate::config::model_digest;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSPSCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub config: AdamConfig,
    pub step: u64,
    /// Canonical names of the cells this optimizer updates.
    pub cells: Vec<String>,
    /// Cells with stored moments, a subset of `cells`.
    pub moments: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub phase: u8,
    pub iteration: u64,
    pub counters: StepCounters,
    pub config_digest: String,
    pub tensors: Vec<TensorEntry>,
    pub opt_min: Option<OptimizerEntry>,
    pub opt_max: Option<OptimizerEntry>,
}

pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub bundle: ModelBundle<f32>,
    pub state: TrainState<f32>,
}

fn optimizer_entry(b: &ModelBundle<f32>, opt: &Adam<f32>) -> OptimizerEntry {
    let name = |id: CellId| b.store.canonical_name(id).to_string();
    OptimizerEntry {
        config: opt.config,
        step: opt.step,
        cells: opt.cells.ids().map(name).collect(),
        moments: opt.moments.keys().map(|&id| name(id)).collect(),
    }
}

/// Serializes `(bundle, state)` into checkpoint bytes.
pub fn encode(bundle: &ModelBundle<f32>, state: &TrainState<f32>, train: &TrainConfig) -> Vec<u8> {
    let store = &bundle.store;
    let tensors: Vec<TensorEntry> =
        store.cells().map(|(id, t)| TensorEntry { name: store.canonical_name(id).to_string(), shape: t.shape().to_vec() }).collect();
    let manifest = CheckpointManifest {
        arch: bundle.config.clone(),
        train: train.clone(),
        init_seed: bundle.init_seed,
        phase: state.phase,
        iteration: state.iteration,
        counters: state.counters,
        config_digest: model_digest(&bundle.config, train),
        tensors,
        opt_min: state.opt_min.as_ref().map(|o| optimizer_entry(bundle, o)),
        opt_max: state.opt_max.as_ref().map(|o| optimizer_entry(bundle, o)),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in store.cells() {
        out.extend(f32_bytes(t.data().iter().copied()));
    }
    for opt in [&state.opt_min, &state.opt_max].into_iter().flatten() {
        for m in opt.moments.values() {
            out.extend(f32_bytes(m.m.iter().copied()));
            out.extend(f32_bytes(m.v.iter().copied()));
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::format(self.path, "unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        parse_f32(self.path, raw, n)
    }
}

/// Parses checkpoint bytes. When `expected_digest` is given, a checkpoint
/// built from a different configuration is refused.
pub fn decode(path: &Path, bytes: &[u8], expected_digest: Option<&str>) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(Error::Checksum { path: path.into() });
    }
    let (body, sum) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Checksum { path: path.into() });
    }
    let mut r = Reader { path, bytes: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, format!("checkpoint version {version} unsupported (expected {VERSION})")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let manifest: CheckpointManifest =
        serde_json::from_slice(r.take(len)?).map_err(|source| Error::Json { path: path.into(), source })?;
    let digest = model_digest(&manifest.arch, &manifest.train);
    if digest != manifest.config_digest {
        return Err(Error::format(path, "stored config digest does not match stored config"));
    }
    if let Some(expected) = expected_digest {
        if expected != digest {
            return Err(Error::DigestMismatch { expected: expected.into(), found: digest });
        }
    }
    let mut bundle = ModelBundle::<f32>::build(&manifest.arch, manifest.init_seed)?;
    if manifest.tensors.len() != bundle.store.cell_count() {
        return Err(Error::format(path, format!("{} tensors stored, architecture has {}", manifest.tensors.len(), bundle.store.cell_count())));
    }
    let lookup = |name: &str, store: &lsps_core::params::ParamStore<f32>| {
        store.lookup(name).filter(|&id| store.canonical_name(id) == name).ok_or_else(|| Error::format(path, format!("unknown tensor {name}")))
    };
    for e in &manifest.tensors {
        let id = lookup(&e.name, &bundle.store)?;
        if bundle.store.get(id).shape() != e.shape.as_slice() {
            return Err(Error::format(path, format!("tensor {} has shape {:?}, expected {:?}", e.name, e.shape, bundle.store.get(id).shape())));
        }
        let n = e.shape.iter().product();
        *bundle.store.get_mut(id) = Tensor::from_vec(&e.shape, r.f32s(n)?);
    }
    let cell_count = bundle.store.cell_count();
    let optimizer = |entry: &Option<OptimizerEntry>, r: &mut Reader<'_>| -> Result<Option<Adam<f32>>> {
        let Some(e) = entry else { return Ok(None) };
        let mut ids = Vec::with_capacity(e.cells.len());
        for name in &e.cells {
            ids.push(lookup(name, &bundle.store)?);
        }
        let mut moments = BTreeMap::new();
        for name in &e.moments {
            let id = lookup(name, &bundle.store)?;
            let n = bundle.store.get(id).len();
            moments.insert(id, Moments { m: r.f32s(n)?, v: r.f32s(n)? });
        }
        let mut opt = Adam::new(e.config, CellSet::from_cells(cell_count, ids));
        opt.step = e.step;
        opt.moments = moments;
        Ok(Some(opt))
    };
    let opt_min = optimizer(&manifest.opt_min, &mut r)?;
    let opt_max = optimizer(&manifest.opt_max, &mut r)?;
    if r.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after optimizer state"));
    }
    let state = TrainState { phase: manifest.phase, iteration: manifest.iteration, opt_min, opt_max, counters: manifest.counters };
    Ok(Checkpoint { manifest, bundle, state })
}

pub fn save_checkpoint(path: &Path, bundle: &ModelBundle<f32>, state: &TrainState<f32>, train: &TrainConfig) -> Result<()> {
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    write_file(&tmp, &encode(bundle, state, train))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path, expected_digest: Option<&str>) -> Result<Checkpoint> {
    decode(path, &read_file(path)?, expected_digest)
}
