//! Order-preserving parallel batch delivery.

use std::collections::BTreeMap;

use lsps_core::error::Result;
use lsps_core::losses::Batch;
use lsps_core::real::Real;
use lsps_core::tensor::Tensor;
use lsps_core::trainer::{ArchiveBatches, BatchProvider};

pub const WORKERS_ENV: &str = "LSPS_NUM_WORKERS";

/// Worker count from `LSPS_NUM_WORKERS`, defaulting to 1.
pub fn workers_from_env() -> std::result::Result<usize, String> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Pose(u64),
    Depth(u8, u64),
}

enum Item<S> {
    Pose(Tensor<S>),
    Depth(Batch<S>),
}

struct Source<'a> {
    inner: ArchiveBatches<'a>,
    workers: usize,
    phase_iterations: [u64; 3],
}

impl Source<'_> {
    fn build<S: Real>(&self, key: Key) -> Result<Item<S>> {
        Ok(match key {
            Key::Pose(t) => Item::Pose(self.inner.make_pose_batch(t)?),
            Key::Depth(p, t) => Item::Depth(self.inner.make_depth_batch(p, t)?),
        })
    }

    fn next_keys(&self, key: Key) -> Vec<Key> {
        let (phase, t) = match key {
            Key::Pose(t) => (1, t),
            Key::Depth(p, t) => (p, t),
        };
        let end = self.phase_iterations.get(phase as usize - 1).copied().unwrap_or(t + 1).max(t + 1);
        let n = (self.workers as u64).min(end - t);
        (t..t + n).map(|i| if phase == 1 { Key::Pose(i) } else { Key::Depth(phase, i) }).collect()
    }

    fn fetch<S: Real>(&self, key: Key, cache: &mut BTreeMap<Key, Item<S>>) -> Result<Item<S>> {
        if let Some(item) = cache.remove(&key) {
            return Ok(item);
        }
        if self.workers == 1 {
            return self.build(key);
        }
        let keys = self.next_keys(key);
        let built: Vec<(Key, Result<Item<S>>)> = std::thread::scope(|s| {
            let handles: Vec<_> = keys.iter().map(|&k| (k, s.spawn(move || self.build::<S>(k)))).collect();
            handles.into_iter().map(|(k, h)| (k, h.join().expect("batch worker panicked"))).collect()
        });
        let mut first = None;
        for (k, item) in built {
            if k == key {
                first = Some(item);
            } else if let Ok(item) = item {
                cache.insert(k, item);
            }
        }
        first.expect("requested key is always built")
    }
}

/// Builds upcoming batches on `workers` threads and hands them out in
/// iteration order. Every batch is a pure function of its key, so the
/// delivered sequence is identical for any worker count.
pub struct Prefetcher<'a, S> {
    batches: Source<'a>,
    cache: BTreeMap<Key, Item<S>>,
}

impl<'a, S: Real> Prefetcher<'a, S> {
    pub fn new(inner: ArchiveBatches<'a>, workers: usize, phase_iterations: [u64; 3]) -> Self {
        Prefetcher { batches: Source { inner, workers: workers.max(1), phase_iterations }, cache: BTreeMap::new() }
    }

    pub fn archive(&self) -> &lsps_core::synthgen::DatasetArchive {
        self.batches.inner.archive()
    }
}

impl<S: Real> BatchProvider<S> for Prefetcher<'_, S> {
    fn pose_batch(&mut self, t: u64) -> Result<Tensor<S>> {
        match self.batches.fetch(Key::Pose(t), &mut self.cache)? {
            Item::Pose(x) => Ok(x),
            Item::Depth(_) => unreachable!("pose key yields pose batch"),
        }
    }

    fn depth_batch(&mut self, phase: u8, t: u64) -> Result<Batch<S>> {
        if !(2..=3).contains(&phase) {
            return Err(lsps_core::error::Error::UnknownPhase(phase));
        }
        match self.batches.fetch(Key::Depth(phase, t), &mut self.cache)? {
            Item::Depth(b) => Ok(b),
            Item::Pose(_) => unreachable!("depth key yields depth batch"),
        }
    }
}
