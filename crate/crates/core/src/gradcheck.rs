//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only evaluates the scalar objective on perturbed parameter
//! copies; it never touches the reverse pass it is checking.

use alloc::vec::Vec;

use crate::autodiff::Gradients;
use crate::params::{CellId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Elements whose analytic gradient magnitude is at most this are skipped.
    pub min_magnitude: f64,
    pub rel_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, min_magnitude: 1e-6, rel_tolerance: 1e-3 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    /// `(cell, element, analytic, numeric)` of the largest relative error.
    pub worst: Option<(CellId, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failures += other.failures;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = libm::fabs(a - b);
    let m = libm::fmax(libm::fabs(a), libm::fabs(b));
    if m == 0.0 {
        0.0
    } else {
        d / m
    }
}

/// Compares every element of `cells` against central differences of `f`.
///
/// Cells without an analytic gradient are treated as zero gradient; their
/// elements are still checked numerically so a missing gradient path is
/// reported as a failure when the numeric derivative is significant.
pub fn check_cells<F>(
    store: &mut ParamStore<f64>,
    cells: &[CellId],
    analytic: &Gradients<f64>,
    cfg: GradCheckConfig,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let mut report = GradCheckReport::default();
    for &cell in cells {
        let len = store.get(cell).len();
        let zeros: Vec<f64>;
        let grad: &[f64] = match analytic.cell(cell) {
            Some(g) => g.data(),
            None => {
                zeros = alloc::vec![0.0; len];
                &zeros
            }
        };
        for e in 0..len {
            let orig = store.get(cell).data()[e];
            store.get_mut(cell).data_mut()[e] = orig + cfg.step;
            let up = f(store);
            store.get_mut(cell).data_mut()[e] = orig - cfg.step;
            let down = f(store);
            store.get_mut(cell).data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = grad[e];
            if libm::fabs(a) <= cfg.min_magnitude && libm::fabs(numeric) <= cfg.min_magnitude {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let err = rel_err(a, numeric);
            if err > cfg.rel_tolerance {
                report.failures += 1;
            }
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = libm::fmax(err, report.max_rel_err);
                report.worst = Some((cell, e, a, numeric));
            }
        }
    }
    report
}
