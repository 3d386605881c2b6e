//! ABX discriminability: over all valid (a, x, b) triples, how often the
//! same-category pair (a, x) is closer than the cross-category pair (b, x).
//! Ties count half. Scores are symmetrized over (A, B) and (B, A), averaged
//! per speaker condition, then per category pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::dtw::dtw_distance;
use crate::error::{MetricsError, Result};

#[derive(Debug, Clone)]
pub struct AbxItem {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub category: String,
    pub speaker: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbxMode {
    /// a, b and x all from the same speaker.
    Within,
    /// a and b from one speaker, x from a different one.
    Across,
}

impl AbxMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "within" => Ok(AbxMode::Within),
            "across" => Ok(AbxMode::Across),
            other => Err(MetricsError::Invalid(format!("unknown ABX mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AbxReport {
    /// Mean over category pairs of the per-pair symmetrized error.
    pub error: f64,
    /// (category A, category B, symmetrized error).
    pub per_pair: Vec<(String, String, f64)>,
    /// Category pairs with no valid triples under the speaker mode.
    pub skipped: Vec<(String, String)>,
}

/// Asymmetric error ê(A, B): mean over triples (a, x from A, a != x; b from B)
/// of 1[d(b,x) < d(a,x)] + 1/2·1[d(b,x) = d(a,x)]. `None` when no triple is
/// valid.
fn e_hat(
    a_pool: &[usize],
    x_pool: &[usize],
    b_pool: &[usize],
    dist: &mut dyn FnMut(usize, usize) -> f64,
) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &x in x_pool {
        for &a in a_pool {
            if a == x {
                continue;
            }
            let dax = dist(a, x);
            for &b in b_pool {
                let dbx = dist(b, x);
                if dbx < dax {
                    total += 1.0;
                } else if dbx == dax {
                    total += 0.5;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        None
    } else {
        Some(total / count as f64)
    }
}

/// ABX with an arbitrary item-pair distance (indices into `items`).
pub fn abx_error_with(
    items: &[AbxItem],
    mode: AbxMode,
    dist: &mut dyn FnMut(usize, usize) -> f64,
) -> Result<AbxReport> {
    let categories: BTreeSet<&str> = items.iter().map(|i| i.category.as_str()).collect();
    let speakers: BTreeSet<&str> = items.iter().map(|i| i.speaker.as_str()).collect();
    if categories.len() < 2 {
        return Err(MetricsError::Invalid(
            "ABX needs at least two categories".into(),
        ));
    }
    let cats: Vec<&str> = categories.into_iter().collect();
    let spkrs: Vec<&str> = speakers.iter().copied().collect();
    let cat_id: BTreeMap<&str, usize> = cats.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let spk_id: BTreeMap<&str, usize> = spkrs.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    // (category, speaker) -> item indices
    let mut pools: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); spkrs.len()]; cats.len()];
    for (i, item) in items.iter().enumerate() {
        pools[cat_id[item.category.as_str()]][spk_id[item.speaker.as_str()]].push(i);
    }
    let pool = |c: &str, s: &str| pools[cat_id[c]][spk_id[s]].as_slice();
    let mut per_pair = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..cats.len() {
        for j in i + 1..cats.len() {
            let (ca, cb) = (cats[i], cats[j]);
            // per speaker condition: symmetrized mean of both directions
            let mut condition_scores = Vec::new();
            match mode {
                AbxMode::Within => {
                    for &s in &speakers {
                        let ab = e_hat(pool(ca, s), pool(ca, s), pool(cb, s), dist);
                        let ba = e_hat(pool(cb, s), pool(cb, s), pool(ca, s), dist);
                        if let (Some(ab), Some(ba)) = (ab, ba) {
                            condition_scores.push((ab + ba) / 2.0);
                        }
                    }
                }
                AbxMode::Across => {
                    for &s_ab in &speakers {
                        for &s_x in &speakers {
                            if s_ab == s_x {
                                continue;
                            }
                            let ab = e_hat(pool(ca, s_ab), pool(ca, s_x), pool(cb, s_ab), dist);
                            let ba = e_hat(pool(cb, s_ab), pool(cb, s_x), pool(ca, s_ab), dist);
                            if let (Some(ab), Some(ba)) = (ab, ba) {
                                condition_scores.push((ab + ba) / 2.0);
                            }
                        }
                    }
                }
            }
            if condition_scores.is_empty() {
                skipped.push((ca.to_string(), cb.to_string()));
            } else {
                let mean = condition_scores.iter().sum::<f64>() / condition_scores.len() as f64;
                per_pair.push((ca.to_string(), cb.to_string(), mean));
            }
        }
    }
    if per_pair.is_empty() {
        return Err(MetricsError::Invalid(
            "no category pair has valid ABX triples".into(),
        ));
    }
    let error = per_pair.iter().map(|(_, _, e)| e).sum::<f64>() / per_pair.len() as f64;
    Ok(AbxReport {
        error,
        per_pair,
        skipped,
    })
}

/// ABX over DTW distances of the item features, cached per item pair.
pub fn abx_error(items: &[AbxItem], mode: AbxMode) -> Result<AbxReport> {
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut failure = None;
    let mut dist = |i: usize, j: usize| -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        if let Some(&d) = cache.get(&key) {
            return d;
        }
        match dtw_distance(&items[key.0].features, &items[key.1].features) {
            Ok(d) => {
                cache.insert(key, d);
                d
            }
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let report = abx_error_with(items, mode, &mut dist)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
