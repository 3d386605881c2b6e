//! The NCE contrastive objective: mean over valid (t, k) of the negative log
//! softmax score of the positive among {positive} union N_t, scores being dot
//! products z^T h_k(c_t).

use std::rc::Rc;

use nn_core::{Graph, NnError, NodeId, Result};

use crate::negatives::NegativeSet;

/// Builds the loss node. `preds[k-1]` holds h_k outputs, one row per frame;
/// `z` holds the embeddings the candidates index into.
pub fn nce_loss(
    g: &mut Graph,
    z: NodeId,
    preds: &[NodeId],
    negatives: &NegativeSet,
) -> Result<NodeId> {
    if negatives.is_empty() {
        return Err(NnError::InvalidConfig(
            "no valid prediction positions (utterance too short)".into(),
        ));
    }
    // positions are grouped by k; gather each step's prediction rows
    let mut per_k_rows: Vec<NodeId> = Vec::new();
    let mut i = 0;
    while i < negatives.positions.len() {
        let k = negatives.positions[i].1;
        let mut ts = Vec::new();
        while i < negatives.positions.len() && negatives.positions[i].1 == k {
            ts.push(negatives.positions[i].0);
            i += 1;
        }
        per_k_rows.push(g.gather_rows(preds[k - 1], Rc::new(ts)));
    }
    let pred_rows = if per_k_rows.len() == 1 {
        per_k_rows[0]
    } else {
        g.concat_rows(&per_k_rows)
    };
    let scores = g.dot_scores(pred_rows, z, Rc::new(negatives.candidates.clone()));
    if !g.value(scores).all_finite() {
        return Err(NnError::NonFiniteValue("nce candidate scores".into()));
    }
    let targets = vec![negatives.positive_slot(); negatives.positions.len()];
    Ok(g.cross_entropy_mean(scores, Rc::new(targets)))
}
