//! Side-by-side comparison of two finished runs' metric tables.

use std::fmt::Write as _;
use std::path::Path;

use metrics::MetricReport;

use crate::error::{PipelineError, Result};
use crate::stages::RunPaths;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricDelta {
    pub name: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Comparison {
    pub deltas: Vec<MetricDelta>,
    /// Metric names present in one run but not the other.
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.deltas {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:+.6}", d.name, d.a, d.b, d.b - d.a);
        }
        for n in &self.only_in_a {
            let _ = writeln!(out, "{n}\tonly-in-first");
        }
        for n in &self.only_in_b {
            let _ = writeln!(out, "{n}\tonly-in-second");
        }
        out
    }
}

fn load_metrics(run_dir: &Path) -> Result<MetricReport> {
    let path = RunPaths::new(run_dir).metrics_file();
    let text = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::Config(format!("no metrics table at {}: {e}", path.display()))
    })?;
    Ok(MetricReport::from_text(&text)?)
}

/// Compares the metric tables of two run directories. Metrics are matched
/// by name in the order they appear in the first run.
pub fn compare_runs(run_a: &Path, run_b: &Path) -> Result<Comparison> {
    let a = load_metrics(run_a)?;
    let b = load_metrics(run_b)?;
    let mut cmp = Comparison::default();
    for (name, value) in &a.entries {
        match b.get(name) {
            Some(v) => cmp.deltas.push(MetricDelta {
                name: name.clone(),
                a: *value,
                b: v,
            }),
            None => cmp.only_in_a.push(name.clone()),
        }
    }
    for (name, _) in &b.entries {
        if a.get(name).is_none() {
            cmp.only_in_b.push(name.clone());
        }
    }
    Ok(cmp)
}
