//! MLM training loop over unit sequences.

use std::collections::HashMap;

use nn_core::{Adam, Bound, Graph, HasParams, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SlmConfig;
use crate::error::Result;
use crate::loss::mlm_loss;
use crate::mask::mask_batch;
use crate::model::SlmModel;

#[derive(Debug, Clone)]
pub struct SlmTrainOptions {
    pub epochs: usize,
    /// Sequences whose gradients are averaged into one Adam step.
    pub batch: usize,
    pub lr: f64,
}

impl Default for SlmTrainOptions {
    fn default() -> Self {
        SlmTrainOptions {
            epochs: 8,
            batch: 4,
            lr: 2e-4,
        }
    }
}

pub struct SlmOutcome {
    pub model: SlmModel,
    /// Mean MLM loss per epoch.
    pub loss_trace: Vec<f64>,
}

pub fn train_slm(
    sequences: &[Vec<usize>],
    config: &SlmConfig,
    seed: u64,
    opts: &SlmTrainOptions,
) -> Result<SlmOutcome> {
    config.validate()?;
    let mut model = SlmModel::new(config.clone(), seed)?;
    let mut opt = Adam::new(opts.lr, (0.9, 0.999), 1e-8);
    // clip to positional capacity (minus BOS/EOS)
    let usable: Vec<Vec<usize>> = sequences
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s[..s.len().min(config.max_len - 2)].to_vec())
        .collect();
    if usable.is_empty() {
        return Err(crate::error::SlmError::Invalid(
            "no nonempty training sequences".into(),
        ));
    }
    let mut loss_trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ (0xa076_1d64 + epoch as u64));
        let mut order: Vec<usize> = (0..usable.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, order_rng.gen_range(0..=i));
        }
        let masked = mask_batch(config, &usable, seed ^ (0x94d0_49bb + epoch as u64));
        let mut epoch_loss = 0.0;
        let mut terms = 0usize;
        for chunk in order.chunks(opts.batch) {
            let mut grad_sum: HashMap<String, Tensor> = HashMap::new();
            let mut used = 0usize;
            for &i in chunk {
                let m = &masked[i];
                if m.targets.is_empty() {
                    continue;
                }
                let mut g = Graph::new();
                let mut bound = Bound::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((epoch as u64) << 32) ^ i as u64);
                let loss = mlm_loss(&model, &mut g, &mut bound, m, Mode::Train, &mut rng)?;
                epoch_loss += g.value(loss).item();
                terms += 1;
                used += 1;
                let grads = g.backward(loss);
                for (name, grad) in bound.named_grads(&grads) {
                    match grad_sum.get_mut(&name) {
                        Some(acc) => acc.add_assign(&grad),
                        None => {
                            grad_sum.insert(name, grad);
                        }
                    }
                }
            }
            if used == 0 {
                continue;
            }
            for grad in grad_sum.values_mut() {
                grad.scale_assign(1.0 / used as f64);
            }
            opt.step(&mut model.params_mut(), &grad_sum)?;
        }
        loss_trace.push(epoch_loss / terms.max(1) as f64);
    }
    Ok(SlmOutcome { model, loss_trace })
}
