//! The deep-cluster stage: a freshly initialized copy of the acoustic network
//! trained to classify first-round pseudo-labels frame by frame, and the
//! second clustering round over its aggregator features.

use std::collections::HashMap;
use std::rc::Rc;

use cpc::{CpcBase, CpcConfig};
use nn_core::{Adam, Bound, Checkpoint, Graph, HasParams, Initializer, Linear, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ClusterError, Result};
use crate::kmeans::{assign, kmeans_fit, KMeansModel};

#[derive(Debug, Clone)]
pub struct DcConfig {
    /// Architecture of the classifier body; same shape as the first-round
    /// network unless the hidden-size override is set upstream.
    pub cpc: CpcConfig,
    /// Number of pseudo-label classes.
    pub k: usize,
}

impl DcConfig {
    pub fn descriptor(&self) -> String {
        format!("dc-config-v1\nk={}\n{}", self.k, self.cpc.descriptor())
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("dc-config-v1") {
            return Err(ClusterError::Invalid("bad classifier descriptor".into()));
        }
        let k_line = lines.next().unwrap_or("");
        let k = k_line
            .strip_prefix("k=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ClusterError::Invalid(format!("bad k line `{k_line}`")))?;
        let rest: String = lines.collect::<Vec<_>>().join("\n");
        let cpc = CpcConfig::from_descriptor(&rest)?;
        Ok(DcConfig { cpc, k })
    }
}

/// Encoder + aggregator + linear classifier over k pseudo-label classes.
pub struct DcModel {
    pub config: DcConfig,
    pub base: CpcBase,
    pub classifier: Linear,
}

impl DcModel {
    pub fn new(config: DcConfig, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let base = CpcBase::new(&config.cpc, &mut init)?;
        let mut classifier = Linear::new("dc.cls", config.cpc.ar_hidden, config.k, &mut init)?;
        // small output scale keeps untrained logits near uniform, so the
        // initial CE starts at ln(k)
        classifier.w.scale_assign(0.1);
        Ok(DcModel {
            config,
            base,
            classifier,
        })
    }

    /// Aggregator features (pre-classifier), deterministic.
    pub fn features(&self, waveform: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let z = self.base.encode(&mut g, &mut bound, waveform)?;
        let c = self.base.aggregate(&mut g, &mut bound, z);
        Ok(g.value(c).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.config.descriptor(),
            self.params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = DcConfig::from_descriptor(&ckpt.descriptor)?;
        let mut model = DcModel::new(config, 0)?;
        model.load_params(&ckpt.params)?;
        Ok(model)
    }
}

impl HasParams for DcModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.base.params();
        p.extend(self.classifier.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.base.params_mut();
        p.extend(self.classifier.params_mut());
        p
    }
}

#[derive(Debug, Clone)]
pub struct DcTrainOptions {
    pub epochs: usize,
    /// Training crop length in encoder frames.
    pub crop_frames: usize,
    pub crops_per_epoch: usize,
    pub lr: f64,
}

impl Default for DcTrainOptions {
    fn default() -> Self {
        DcTrainOptions {
            epochs: 8,
            crop_frames: 128,
            crops_per_epoch: 64,
            lr: 2e-4,
        }
    }
}

pub struct DcOutcome {
    pub model: DcModel,
    /// Mean CE per epoch.
    pub loss_trace: Vec<f64>,
    /// Frame accuracy on the training data after the final epoch.
    pub train_accuracy: f64,
}

/// Frame-wise cross-entropy on a single utterance (or crop); returns the loss
/// node so callers can also read the value.
pub fn dc_loss(
    model: &DcModel,
    g: &mut Graph,
    bound: &mut Bound,
    waveform: &[f64],
    labels: &[usize],
) -> Result<nn_core::NodeId> {
    let z = model.base.encode(g, bound, waveform)?;
    let c = model.base.aggregate(g, bound, z);
    let logits = model.classifier.forward(g, bound, c);
    let frames = g.value(logits).rows();
    if frames != labels.len() {
        return Err(ClusterError::LabelLengthMismatch {
            utt: "<crop>".into(),
            labels: labels.len(),
            frames,
        });
    }
    Ok(g.cross_entropy_mean(logits, Rc::new(labels.to_vec())))
}

pub fn train_deep_cluster(
    waveforms: &[(String, Vec<f64>)],
    pseudo_labels: &HashMap<String, Vec<usize>>,
    config: &DcConfig,
    seed: u64,
    opts: &DcTrainOptions,
) -> Result<DcOutcome> {
    let mut model = DcModel::new(config.clone(), seed)?;
    // validate alignment up front, naming the offending utterance
    for (utt, wave) in waveforms {
        let frames = model.base.out_frames(wave.len())?;
        let labels = pseudo_labels
            .get(utt)
            .ok_or_else(|| ClusterError::Invalid(format!("no labels for utterance `{utt}`")))?;
        if labels.len() != frames {
            return Err(ClusterError::LabelLengthMismatch {
                utt: utt.clone(),
                labels: labels.len(),
                frames,
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= config.k) {
            return Err(ClusterError::Invalid(format!(
                "utterance `{utt}`: label {bad} outside [0, {})",
                config.k
            )));
        }
    }
    let down = config.cpc.downsampling();
    let mut opt = Adam::new(opts.lr, (0.9, 0.999), 1e-8);
    let mut loss_trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xd1b54a32 + epoch as u64));
        let mut epoch_loss = 0.0;
        for _ in 0..opts.crops_per_epoch {
            let (utt, wave) = &waveforms[rng.gen_range(0..waveforms.len())];
            let labels = &pseudo_labels[utt];
            let crop_frames = opts.crop_frames.min(labels.len());
            let f0 = rng.gen_range(0..=labels.len() - crop_frames);
            let crop = &wave[f0 * down..(f0 + crop_frames) * down];
            let crop_labels = &labels[f0..f0 + crop_frames];
            let mut g = Graph::new();
            let mut bound = Bound::new();
            let loss = dc_loss(&model, &mut g, &mut bound, crop, crop_labels)?;
            epoch_loss += g.value(loss).item();
            let grads = g.backward(loss);
            let grad_map: HashMap<String, Tensor> = bound.named_grads(&grads).into_iter().collect();
            opt.step(&mut model.params_mut(), &grad_map)?;
        }
        loss_trace.push(epoch_loss / opts.crops_per_epoch as f64);
    }
    // training-set frame accuracy
    let mut correct = 0usize;
    let mut total = 0usize;
    for (utt, wave) in waveforms {
        let feats = model.features(wave)?;
        let labels = &pseudo_labels[utt];
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let c = g.input(feats);
        let out = model.classifier.forward(&mut g, &mut bound, c);
        let logits = g.value(out).clone();
        for (t, &gold) in labels.iter().enumerate() {
            let row = logits.row(t);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == gold {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(DcOutcome {
        model,
        loss_trace,
        train_accuracy: correct as f64 / total.max(1) as f64,
    })
}

/// Second clustering round over the classifier's aggregator features.
pub fn second_round(
    model: &DcModel,
    waveforms: &[(String, Vec<f64>)],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(KMeansModel, Vec<(String, Vec<usize>)>)> {
    let mut per_utt = Vec::with_capacity(waveforms.len());
    let mut all_rows: Vec<Vec<f64>> = Vec::new();
    for (utt, wave) in waveforms {
        let feats = model.features(wave)?;
        for t in 0..feats.rows() {
            all_rows.push(feats.row(t).to_vec());
        }
        per_utt.push((utt.clone(), feats));
    }
    let stacked = Tensor::from_rows(&all_rows);
    let km = kmeans_fit(&stacked, k, iters, seed)?;
    let labeled = per_utt
        .into_iter()
        .map(|(utt, feats)| Ok((utt.clone(), assign(&km, &feats)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((km, labeled))
}
