//! Canonical metric reports: one `metric<TAB>value` line per entry, values
//! printed with 6 decimal places.

use std::fmt::Write as _;

use crate::error::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, name: &str, value: f64) {
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.entries {
            writeln!(out, "{name}\t{value:.6}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (name, value) = line
                .split_once('\t')
                .ok_or_else(|| MetricsError::Invalid(format!("report line {}: no tab", i + 1)))?;
            let value: f64 = value
                .parse()
                .map_err(|_| MetricsError::Invalid(format!("report line {}: bad value", i + 1)))?;
            entries.push((name.to_string(), value));
        }
        Ok(MetricReport { entries })
    }
}
