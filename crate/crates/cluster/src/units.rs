//! Unit files: one utterance per line, utterance ID followed by
//! space-separated integer labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{ClusterError, Result};

pub fn write_units(path: &Path, units: &[(String, Vec<usize>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (utt, labels) in units {
        write!(w, "{utt}")?;
        for l in labels {
            write!(w, " {l}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_units(path: &Path) -> Result<Vec<(String, Vec<usize>)>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let utt = parts
            .next()
            .ok_or_else(|| ClusterError::UnitFile {
                line: i + 1,
                reason: "missing utterance ID".into(),
            })?
            .to_string();
        let labels = parts
            .map(|p| {
                p.parse::<usize>().map_err(|_| ClusterError::UnitFile {
                    line: i + 1,
                    reason: format!("bad label `{p}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((utt, labels));
    }
    Ok(out)
}

/// Cluster purity of unit labels against gold classes: for each unit, count
/// its most frequent gold class; purity = sum of those counts / total frames.
pub fn purity(units: &[(String, Vec<usize>)], gold: &[(String, Vec<usize>)]) -> Result<f64> {
    let gold_map: std::collections::HashMap<&str, &Vec<usize>> =
        gold.iter().map(|(u, l)| (u.as_str(), l)).collect();
    let mut table: std::collections::HashMap<(usize, usize), usize> = Default::default();
    let mut total = 0usize;
    for (utt, labels) in units {
        let g = gold_map
            .get(utt.as_str())
            .ok_or_else(|| ClusterError::Invalid(format!("no gold labels for `{utt}`")))?;
        if g.len() != labels.len() {
            return Err(ClusterError::LabelLengthMismatch {
                utt: utt.clone(),
                labels: labels.len(),
                frames: g.len(),
            });
        }
        for (&u, &c) in labels.iter().zip(g.iter()) {
            *table.entry((u, c)).or_default() += 1;
            total += 1;
        }
    }
    let mut best: std::collections::HashMap<usize, usize> = Default::default();
    for (&(u, _), &n) in &table {
        let e = best.entry(u).or_default();
        if n > *e {
            *e = n;
        }
    }
    Ok(best.values().sum::<usize>() as f64 / total.max(1) as f64)
}
