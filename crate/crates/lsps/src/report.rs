//! Aggregation of evaluation reports into summary tables.

use std::path::{Path, PathBuf};

use lsps_core::eval::EvalReport;

use crate::binio::read_file;
use crate::error::{Error, Result};

/// File name used for every evaluation report.
pub const REPORT_FILE: &str = "report.json";

/// Every `report.json` under `dir` at any depth, sorted by path.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, EvalReport)>> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths)?;
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let r = serde_json::from_slice(&read_file(&p)?).map_err(|source| Error::Json { path: p.clone(), source })?;
            Ok((p, r))
        })
        .collect()
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let p = entry.map_err(Error::io(dir))?.path();
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fraction of frames within `d` read off a report's curve.
pub fn within_at(r: &EvalReport, d: f64) -> Option<f64> {
    r.frames_within.iter().find(|(t, _)| *t == d).map(|&(_, f)| f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub runs: usize,
    pub mean_error_mm: f64,
    pub within_pct: Option<f64>,
}

/// One row per label, medians over repeated runs, in first-seen order.
pub fn table_rows(reports: &[EvalReport], threshold_mm: f64) -> Vec<TableRow> {
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&EvalReport> = reports.iter().filter(|r| r.label == label).collect();
            let mut errs: Vec<f64> = group.iter().map(|r| r.mean_joint_error_mm).collect();
            let mut within: Vec<f64> = group.iter().filter_map(|r| within_at(r, threshold_mm)).collect();
            TableRow {
                label: label.to_string(),
                runs: group.len(),
                mean_error_mm: median(&mut errs),
                within_pct: (within.len() == group.len()).then(|| 100.0 * median(&mut within)),
            }
        })
        .collect()
}

pub fn format_table(rows: &[TableRow], threshold_mm: f64) -> String {
    let head_within = format!("% frames within {threshold_mm}mm");
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Method".len());
    let mut s = format!("{:<width$}  {:>24}  {:>24}  runs\n", "Method", "Joint mean error (mm)", head_within);
    for r in rows {
        let within = r.within_pct.map_or("n/a".to_string(), |w| format!("{w:.2}"));
        s.push_str(&format!("{:<width$}  {:>24.2}  {:>24}  {}\n", r.label, r.mean_error_mm, within, r.runs));
    }
    s
}

/// `(label fraction %, median mean error)` for the shared-latent models,
/// ascending in the label fraction.
pub fn label_fraction_points(reports: &[EvalReport]) -> Vec<(f64, f64)> {
    let lsps: Vec<&EvalReport> = reports.iter().filter(|r| r.label.starts_with("lsps")).collect();
    let mut fractions: Vec<f64> = lsps.iter().map(|r| r.label_fraction_percent).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    fractions
        .into_iter()
        .map(|m| {
            let mut errs: Vec<f64> = lsps.iter().filter(|r| r.label_fraction_percent == m).map(|r| r.mean_joint_error_mm).collect();
            (m, median(&mut errs))
        })
        .collect()
}
