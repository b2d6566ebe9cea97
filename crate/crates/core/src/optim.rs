//! Adam over a subset of parameter cells.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::params::{CellId, CellSet, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates for one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub cells: CellSet,
    pub moments: BTreeMap<CellId, Moments<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(config: AdamConfig, cells: CellSet) -> Self {
        Adam { config, step: 0, cells, moments: BTreeMap::new() }
    }

    /// One update of every owned cell. Cells with no gradient this step are
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
        let bc1 = S::from_f64(1.0 - libm::pow(c.beta1, self.step as f64));
        let bc2 = S::from_f64(1.0 - libm::pow(c.beta2, self.step as f64));
        let lr = S::from_f64(c.learning_rate);
        let eps = S::from_f64(c.epsilon);
        let ids: Vec<CellId> = self.cells.ids().collect();
        for id in ids {
            let param = store.get_mut(id);
            let n = param.len();
            let mom = self
                .moments
                .entry(id)
                .or_insert_with(|| Moments { m: alloc::vec![S::ZERO; n], v: alloc::vec![S::ZERO; n] });
            let g = grads.cell(id).map(|t| t.data());
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(S::ZERO, |g| g[k]);
                mom.m[k] = b1 * mom.m[k] + (S::ONE - b1) * gk;
                mom.v[k] = b2 * mom.v[k] + (S::ONE - b2) * gk * gk;
                let mhat = mom.m[k] / bc1;
                let vhat = mom.v[k] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
