//! Score-based metrics: paired accuracy (spot-the-word / acceptability),
//! Spearman rank correlation, and mean-pooled word embeddings.

use crate::error::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusPair {
    pub id: String,
    /// Score of the real word / grammatical sentence.
    pub positive: f64,
    /// Score of the non-word / ungrammatical sentence.
    pub negative: f64,
}

/// Fraction of pairs where the positive member outscores the negative; ties
/// count half.
pub fn pair_accuracy(pairs: &[StimulusPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("no stimulus pairs".into()));
    }
    if let Some(p) = pairs
        .iter()
        .find(|p| !p.positive.is_finite() || !p.negative.is_finite())
    {
        return Err(MetricsError::Invalid(format!(
            "non-finite score in pair `{}`",
            p.id
        )));
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            if p.positive > p.negative {
                1.0
            } else if p.positive == p.negative {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Average ranks with ties sharing their mean rank.
fn mean_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let mean = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRecord {
    pub model: f64,
    pub human: f64,
}

/// Spearman's rho: Pearson correlation of mean ranks.
pub fn spearman_rho(records: &[SimilarityRecord]) -> Result<f64> {
    if records.len() < 3 {
        return Err(MetricsError::Empty(format!(
            "need >= 3 records, got {}",
            records.len()
        )));
    }
    let model: Vec<f64> = records.iter().map(|r| r.model).collect();
    let human: Vec<f64> = records.iter().map(|r| r.human).collect();
    for (name, col) in [("model", &model), ("human", &human)] {
        if col.iter().all(|&v| v == col[0]) {
            return Err(MetricsError::Undefined(format!(
                "{name} scores are all identical"
            )));
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::Invalid(format!("non-finite {name} score")));
        }
    }
    let rm = mean_ranks(&model);
    let rh = mean_ranks(&human);
    let n = records.len() as f64;
    let mean_m = rm.iter().sum::<f64>() / n;
    let mean_h = rh.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_m = 0.0;
    let mut var_h = 0.0;
    for (m, h) in rm.iter().zip(&rh) {
        cov += (m - mean_m) * (h - mean_h);
        var_m += (m - mean_m) * (m - mean_m);
        var_h += (h - mean_h) * (h - mean_h);
    }
    Ok(cov / (var_m.sqrt() * var_h.sqrt()))
}

/// Mean pooling over frames.
pub fn word_embedding(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(MetricsError::Empty("no frames to pool".into()));
    }
    let d = features[0].len();
    let mut out = vec![0.0; d];
    for f in features {
        if f.len() != d {
            return Err(MetricsError::DimensionMismatch(d, f.len()));
        }
        for (o, &v) in out.iter_mut().zip(f) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= features.len() as f64;
    }
    Ok(out)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}
