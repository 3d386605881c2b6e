//! Negative sampling for the contrastive loss: for every valid (t, k) the
//! candidate set holds `n` indices drawn uniformly from the other time steps
//! of the same utterance, with the positive z_{t+k} appended last.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Index of the positive within each candidate row: always the last slot.
#[derive(Debug, Clone)]
pub struct NegativeSet {
    /// Valid (t, k) pairs, k 1-based; positions with t + k > T - 1 are dropped.
    pub positions: Vec<(usize, usize)>,
    /// One row per position: `n_negatives` sampled indices then the positive.
    pub candidates: Vec<Vec<usize>>,
    pub n_negatives: usize,
}

impl NegativeSet {
    pub fn positive_slot(&self) -> usize {
        self.n_negatives
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Draws the negative sets for one utterance of `t_len` frames. A degenerate
/// utterance (fewer than 2 frames) yields an empty set; the caller skips it.
/// Candidate rows are grouped by k (k outer, t inner) so per-step prediction
/// rows can be gathered in one pass.
pub fn sample_negatives(
    t_len: usize,
    horizon: usize,
    n_negatives: usize,
    rng: &mut ChaCha8Rng,
) -> NegativeSet {
    let mut positions = Vec::new();
    let mut candidates = Vec::new();
    if t_len >= 2 {
        for k in 1..=horizon {
            for t in 0..t_len.saturating_sub(k) {
                let positive = t + k;
                let mut row = Vec::with_capacity(n_negatives + 1);
                for _ in 0..n_negatives {
                    // uniform over {0..t_len-1} \ {positive}
                    let mut idx = rng.gen_range(0..t_len - 1);
                    if idx >= positive {
                        idx += 1;
                    }
                    row.push(idx);
                }
                row.push(positive);
                positions.push((t, k));
                candidates.push(row);
            }
        }
    }
    NegativeSet {
        positions,
        candidates,
        n_negatives,
    }
}
