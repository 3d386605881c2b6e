//! MLM objective: mean cross-entropy over masked target positions only.

use std::rc::Rc;

use nn_core::{Bound, Graph, Mode, NodeId};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SlmError};
use crate::mask::MaskedSequence;
use crate::model::SlmModel;

/// Builds the loss node for one masked sequence; positions without targets
/// contribute nothing.
pub fn mlm_loss(
    model: &SlmModel,
    g: &mut Graph,
    bound: &mut Bound,
    masked: &MaskedSequence,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    if masked.targets.is_empty() {
        return Err(SlmError::NoTargets);
    }
    let logits = model.forward(g, bound, &masked.tokens, mode, rng)?;
    let positions: Vec<usize> = masked.targets.iter().map(|&(p, _)| p).collect();
    let units: Vec<usize> = masked.targets.iter().map(|&(_, u)| u).collect();
    let target_logits = g.gather_rows(logits, Rc::new(positions));
    Ok(g.cross_entropy_mean(target_logits, Rc::new(units)))
}
