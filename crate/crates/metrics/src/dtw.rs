//! Frame-sequence distance: DTW over angular frame distances, minimized over
//! alignment paths after averaging each path's cost by its length.

use crate::error::{MetricsError, Result};

const NORM_FLOOR: f64 = 1e-12;

/// Angular distance arccos(cos θ)/π in [0, 1]; zero-norm frames get an
/// epsilon floor so the distance stays defined.
pub fn angular_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    // acos amplifies rounding near +-1 to ~1e-8; snap so identical
    // directions get exactly zero
    if cos > 1.0 - 1e-12 {
        return 0.0;
    }
    if cos < -1.0 + 1e-12 {
        return 1.0;
    }
    cos.acos() / std::f64::consts::PI
}

/// Minimum over all monotone alignment paths of (sum of frame distances on
/// the path) / (path length). Symmetric; 0 for identical sequences.
pub fn dtw_distance(seq_a: &[Vec<f64>], seq_b: &[Vec<f64>]) -> Result<f64> {
    if seq_a.is_empty() || seq_b.is_empty() {
        return Err(MetricsError::Empty("DTW over an empty sequence".into()));
    }
    let d = seq_a[0].len();
    for f in seq_a.iter().chain(seq_b) {
        if f.len() != d {
            return Err(MetricsError::DimensionMismatch(d, f.len()));
        }
    }
    let (ta, tb) = (seq_a.len(), seq_b.len());
    let frame: Vec<Vec<f64>> = seq_a
        .iter()
        .map(|fa| seq_b.iter().map(|fb| angular_distance(fa, fb)).collect())
        .collect();
    // best[i][j][l] = minimal path sum ending at (i, j) with exactly l+1 steps
    let max_len = ta + tb - 1;
    let mut best = vec![vec![vec![f64::INFINITY; max_len]; tb]; ta];
    best[0][0][0] = frame[0][0];
    for i in 0..ta {
        for j in 0..tb {
            for l in 1..max_len {
                let mut m = f64::INFINITY;
                if i > 0 {
                    m = m.min(best[i - 1][j][l - 1]);
                }
                if j > 0 {
                    m = m.min(best[i][j - 1][l - 1]);
                }
                if i > 0 && j > 0 {
                    m = m.min(best[i - 1][j - 1][l - 1]);
                }
                if m.is_finite() {
                    best[i][j][l] = best[i][j][l].min(m + frame[i][j]);
                }
            }
        }
    }
    let mut out = f64::INFINITY;
    for (l, &sum) in best[ta - 1][tb - 1].iter().enumerate() {
        if sum.is_finite() {
            out = out.min(sum / (l + 1) as f64);
        }
    }
    Ok(out)
}
