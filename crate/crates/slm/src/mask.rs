//! Span masking over unit sequences: spans with geometric lengths are planted
//! so the expected masked fraction equals the configured rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SlmConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    /// BOS + units (with MASK substitutions) + EOS.
    pub tokens: Vec<usize>,
    /// (position in `tokens`, original unit) for every masked position.
    pub targets: Vec<(usize, usize)>,
}

/// Wraps `units` with BOS/EOS without masking anything.
pub fn wrap(cfg: &SlmConfig, units: &[usize]) -> Vec<usize> {
    let mut tokens = Vec::with_capacity(units.len() + 2);
    tokens.push(cfg.bos_id());
    tokens.extend_from_slice(units);
    tokens.push(cfg.eos_id());
    tokens
}

fn mask_one(cfg: &SlmConfig, units: &[usize], rng: &mut ChaCha8Rng) -> MaskedSequence {
    let mut tokens = wrap(cfg, units);
    let n = units.len();
    // spans with geometric lengths are planted at random starts until the
    // masked-token budget rate*n is spent; the final span is clamped to the
    // budget so the realized fraction tracks the rate tightly
    let budget = ((cfg.mask_rate * n as f64).round() as usize).min(n);
    let continue_p = 1.0 - 1.0 / cfg.mean_span;
    let mut masked = vec![false; n];
    let mut count = 0;
    while count < budget {
        let start = rng.gen_range(0..n);
        let mut len = 1;
        while rng.gen::<f64>() < continue_p {
            len += 1;
        }
        for i in start..(start + len).min(n) {
            if count == budget {
                break;
            }
            if !masked[i] {
                masked[i] = true;
                count += 1;
            }
        }
    }
    let mut targets = Vec::with_capacity(count);
    for (i, &m) in masked.iter().enumerate() {
        if m {
            targets.push((i + 1, units[i]));
            tokens[i + 1] = cfg.mask_id();
        }
    }
    MaskedSequence { tokens, targets }
}

/// Masks every sequence with an independent seeded stream; empty sequences
/// are skipped.
pub fn mask_batch(cfg: &SlmConfig, sequences: &[Vec<usize>], seed: u64) -> Vec<MaskedSequence> {
    sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5851f42d ^ (i as u64) << 1));
            mask_one(cfg, s, &mut rng)
        })
        .collect()
}
