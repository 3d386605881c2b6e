//! CPC training loop: fixed-length waveform crops, per-batch RNG streams
//! keyed by (seed, batch index), Adam updates, divergence detection.

use std::collections::HashMap;

use nn_core::{Adam, Bound, HasParams, Mode, NnError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::CpcConfig;
use crate::loss::nce_loss;
use crate::model::CpcModel;
use crate::negatives::sample_negatives;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged: loss above {threshold:.4} for 3 consecutive epochs; trace: {trace:?}")]
    Diverged { threshold: f64, trace: Vec<f64> },
    #[error("dataset has no window of {window} samples")]
    DatasetTooSmall { window: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Training crop length in samples (128 frames at the default schedule).
    pub window: usize,
    /// Random crops drawn per epoch.
    pub windows_per_epoch: usize,
    /// Crops whose gradients are averaged into one Adam step.
    pub batch: usize,
    pub lr: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            window: 20480,
            windows_per_epoch: 64,
            batch: 4,
            lr: 2e-4,
        }
    }
}

pub struct TrainOutcome {
    pub model: CpcModel,
    /// Mean NCE loss per epoch.
    pub loss_trace: Vec<f64>,
}

fn smoothed(trace: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = trace.first().copied().unwrap_or(0.0);
    for &v in trace {
        acc = 0.5 * acc + 0.5 * v;
        out.push(acc);
    }
    out
}

pub fn train_cpc(
    waveforms: &[Vec<f64>],
    config: &CpcConfig,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    train_cpc_with_probe(waveforms, config, seed, opts, |_, _| Ok(()))
}

/// As `train_cpc`, with a callback invoked after every epoch; errors from
/// the probe abort training. Used to inspect model internals mid-training.
pub fn train_cpc_with_probe(
    waveforms: &[Vec<f64>],
    config: &CpcConfig,
    seed: u64,
    opts: &TrainOptions,
    mut probe: impl FnMut(usize, &CpcModel) -> Result<(), NnError>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let usable: Vec<&Vec<f64>> = waveforms.iter().filter(|w| w.len() >= opts.window).collect();
    if usable.is_empty() {
        return Err(TrainError::DatasetTooSmall {
            window: opts.window,
        });
    }
    let mut model = CpcModel::new(config.clone(), seed)?;
    let mut opt = Adam::new(opts.lr, (0.9, 0.999), 1e-8);
    let divergence_threshold = ((config.negatives + 1) as f64).ln() + 1.0;
    let mut loss_trace = Vec::with_capacity(opts.epochs);
    let mut high_epochs = 0usize;
    let mut batch_index = 0u64;
    for epoch in 0..opts.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b9 + epoch as u64));
        let mut epoch_loss = 0.0;
        let mut window_count = 0usize;
        let mut done = 0usize;
        while done < opts.windows_per_epoch {
            let batch_n = opts.batch.min(opts.windows_per_epoch - done);
            let mut grad_sum: HashMap<String, Tensor> = HashMap::new();
            for wi in 0..batch_n {
                let utt = usable[epoch_rng.gen_range(0..usable.len())];
                let start = epoch_rng.gen_range(0..=utt.len() - opts.window);
                let crop = &utt[start..start + opts.window];
                // per-crop stream so load order cannot change results
                let mut crop_rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (batch_index << 8) ^ wi as u64);
                let mut g = nn_core::Graph::new();
                let mut bound = Bound::new();
                let (z, _c, preds) =
                    model.forward(&mut g, &mut bound, crop, Mode::Train, &mut crop_rng)?;
                let t_len = g.value(z).rows();
                let negatives = sample_negatives(
                    t_len,
                    config.prediction_steps,
                    config.negatives,
                    &mut crop_rng,
                );
                if negatives.is_empty() {
                    continue;
                }
                let loss = nce_loss(&mut g, z, &preds, &negatives)?;
                epoch_loss += g.value(loss).item();
                window_count += 1;
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
            for grad in grad_sum.values_mut() {
                grad.scale_assign(1.0 / batch_n as f64);
            }
            opt.step(&mut model.params_mut(), &grad_sum)?;
            batch_index += 1;
            done += batch_n;
        }
        let mean_loss = epoch_loss / window_count.max(1) as f64;
        loss_trace.push(mean_loss);
        if mean_loss > divergence_threshold {
            high_epochs += 1;
            if high_epochs >= 3 {
                return Err(TrainError::Diverged {
                    threshold: divergence_threshold,
                    trace: loss_trace,
                });
            }
        } else {
            high_epochs = 0;
        }
        probe(epoch, &model)?;
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Exponentially smoothed loss trace, for the monotone-descent check.
pub fn smoothed_trace(trace: &[f64]) -> Vec<f64> {
    smoothed(trace)
}
