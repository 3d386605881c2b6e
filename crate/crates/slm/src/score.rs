//! Pseudo-log-likelihood scoring: mask each position in turn and accumulate
//! the log-probability of the true unit.

use crate::config::SlmConfig;
use crate::error::{Result, SlmError};
use crate::mask::wrap;
use crate::model::SlmModel;

#[derive(Debug, Clone)]
pub struct ScoredSequence {
    pub units: Vec<usize>,
    /// Sum of per-position log-probabilities; always <= 0.
    pub pll: f64,
    pub per_position: Vec<f64>,
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|&v| (v - mx).exp()).sum();
    (logits[target] - mx) - denom.ln()
}

/// Core scoring loop over an arbitrary conditional model: `predict(tokens, i)`
/// returns vocabulary logits for the masked position `i`. Positions are scored
/// independently, so their order cannot change the total.
pub fn pseudo_prob_with<F>(cfg: &SlmConfig, units: &[usize], mut predict: F) -> Result<ScoredSequence>
where
    F: FnMut(&[usize], usize) -> Vec<f64>,
{
    if units.is_empty() {
        return Err(SlmError::Invalid("cannot score an empty sequence".into()));
    }
    if let Some(&bad) = units.iter().find(|&&u| u >= cfg.k) {
        return Err(SlmError::UnknownUnit { unit: bad, k: cfg.k });
    }
    let tokens = wrap(cfg, units);
    let mut per_position = Vec::with_capacity(units.len());
    for (i, &unit) in units.iter().enumerate() {
        let mut masked = tokens.clone();
        masked[i + 1] = cfg.mask_id();
        let logits = predict(&masked, i + 1);
        per_position.push(log_softmax_at(&logits, unit));
    }
    Ok(ScoredSequence {
        units: units.to_vec(),
        pll: per_position.iter().sum(),
        per_position,
    })
}

/// One forward pass per position, eval mode.
pub fn pseudo_prob(model: &SlmModel, units: &[usize]) -> Result<ScoredSequence> {
    let mut err = None;
    let scored = pseudo_prob_with(&model.config, units, |tokens, i| {
        match model.logits(tokens) {
            Ok(t) => t.row(i).to_vec(),
            Err(e) => {
                let v = model.config.vocab();
                err.get_or_insert(e);
                vec![0.0; v]
            }
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(scored),
    }
}
