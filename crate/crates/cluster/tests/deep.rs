//! Deep-cluster stage contracts: untrained CE level, gradient check, random
//! reinitialization, alignment errors, checkpointing, and second-round
//! determinism.

use std::cell::RefCell;
use std::collections::HashMap;

use cluster::{dc_loss, second_round, train_deep_cluster, DcConfig, DcModel, DcTrainOptions};
use cpc::{CpcConfig, CpcModel, HeadKind};
use nn_core::gradcheck::gradcheck;
use nn_core::{Bound, Graph, HasParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_cpc() -> CpcConfig {
    CpcConfig {
        encoder_channels: 4,
        ar_layers: 1,
        ar_hidden: 4,
        head_hidden: 4,
        head_heads: 2,
        head_ffn: 6,
        conformer_kernel: 3,
        prediction_steps: 2,
        negatives: 4,
        ..CpcConfig::desk(HeadKind::Transformer)
    }
}

fn wave(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

#[test]
fn untrained_ce_is_near_ln_k() {
    let cfg = DcConfig {
        cpc: CpcConfig::desk(HeadKind::Transformer),
        k: 50,
    };
    let model = DcModel::new(cfg, 11).unwrap();
    let w = wave(160 * 60, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<usize> = (0..60).map(|_| rng.gen_range(0..50)).collect();
    let mut g = Graph::new();
    let mut bound = Bound::new();
    let loss = dc_loss(&model, &mut g, &mut bound, &w, &labels).unwrap();
    let expected = 50.0_f64.ln();
    let got = g.value(loss).item();
    assert!(
        (got - expected).abs() / expected < 0.02,
        "untrained CE {got} not within 2% of ln(50) = {expected}"
    );
}

#[test]
fn ce_gradient_passes_gradcheck() {
    let cfg = DcConfig { cpc: toy_cpc(), k: 3 };
    let model = RefCell::new(DcModel::new(cfg, 5).unwrap());
    let w: Vec<f64> = (0..480).map(|i| ((i * 11 % 17) as f64 / 17.0) - 0.5).collect();
    let labels = vec![0, 2, 1];
    let params: Vec<(String, Tensor)> = model
        .borrow()
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut frag = |ps: &[(String, Tensor)], want: bool| {
        model.borrow_mut().load_params(ps).unwrap();
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let m = model.borrow();
        let loss = dc_loss(&m, &mut g, &mut bound, &w, &labels).unwrap();
        let lv = g.value(loss).item();
        if want {
            let grads = g.backward(loss);
            let map: HashMap<String, Tensor> = bound.named_grads(&grads).into_iter().collect();
            (lv, Some(map))
        } else {
            (lv, None)
        }
    };
    let report = gradcheck(&mut frag, &params, 1e-4, 1e-5);
    assert!(report.passed(), "worst: {:?}", report.worst);
}

#[test]
fn reinitialized_weights_differ_from_first_round() {
    let cpc_cfg = toy_cpc();
    let first = CpcModel::new(cpc_cfg.clone(), 7).unwrap();
    let dc = DcModel::new(DcConfig { cpc: cpc_cfg, k: 4 }, 8).unwrap();
    let first_params: HashMap<String, Tensor> = first
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    // biases and norm gains are constant-initialized, so compare only the
    // randomly initialized weight matrices
    let mut shared = 0;
    let mut differing = 0;
    for (name, t) in dc.params() {
        let random_init = t.data().iter().any(|&v| v != t.data()[0]);
        if !random_init {
            continue;
        }
        if let Some(ft) = first_params.get(&name) {
            shared += 1;
            if ft.data() != t.data() {
                differing += 1;
            }
        }
    }
    assert!(shared > 0, "architectures share no parameter names");
    assert_eq!(differing, shared, "some weights were warm-started");
}

#[test]
fn label_length_mismatch_lists_both_lengths() {
    let cfg = DcConfig { cpc: toy_cpc(), k: 3 };
    // 480 samples -> 3 frames, but give 5 labels
    let waves = vec![("utt-x".to_string(), wave(480, 1))];
    let mut labels = HashMap::new();
    labels.insert("utt-x".to_string(), vec![0usize, 1, 2, 0, 1]);
    let err = match train_deep_cluster(&waves, &labels, &cfg, 1, &DcTrainOptions::default()) {
        Err(e) => e,
        Ok(_) => panic!("expected mismatch error"),
    };
    let msg = err.to_string();
    assert!(msg.contains("utt-x") && msg.contains('5') && msg.contains('3'), "{msg}");
}

#[test]
fn training_reduces_loss_on_separable_labels() {
    // two label classes tied to signal amplitude; a few epochs should beat
    // the untrained CE of ln(2)
    let cfg = DcConfig { cpc: toy_cpc(), k: 2 };
    let mut waves = Vec::new();
    let mut labels = HashMap::new();
    for i in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let amp = if i % 2 == 0 { 0.05 } else { 0.8 };
        let w: Vec<f64> = (0..1600).map(|_| rng.gen_range(-amp..amp)).collect();
        let utt = format!("utt-{i}");
        waves.push((utt.clone(), w));
        labels.insert(utt, vec![(i % 2) as usize; 10]);
    }
    let opts = DcTrainOptions {
        epochs: 6,
        crop_frames: 10,
        crops_per_epoch: 16,
        lr: 1e-3,
    };
    let out = train_deep_cluster(&waves, &labels, &cfg, 3, &opts).unwrap();
    let first = out.loss_trace.first().unwrap();
    let last = out.loss_trace.last().unwrap();
    assert!(last < first, "loss did not fall: {:?}", out.loss_trace);
    assert!(out.train_accuracy > 0.5, "accuracy {}", out.train_accuracy);
}

#[test]
fn checkpoint_round_trip_preserves_features() {
    let cfg = DcConfig { cpc: toy_cpc(), k: 5 };
    let model = DcModel::new(cfg, 13).unwrap();
    let ckpt = model.to_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dc.ckpt");
    ckpt.save(&path).unwrap();
    let back = DcModel::from_checkpoint(&nn_core::Checkpoint::load(&path).unwrap()).unwrap();
    let w = wave(800, 21);
    let a = model.features(&w).unwrap();
    let b = back.features(&w).unwrap();
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        // stored as f32
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn second_round_is_deterministic_and_in_range() {
    let cfg = DcConfig { cpc: toy_cpc(), k: 4 };
    let model = DcModel::new(cfg, 17).unwrap();
    let waves: Vec<(String, Vec<f64>)> = (0..3)
        .map(|i| (format!("utt-{i}"), wave(1600, 40 + i as u64)))
        .collect();
    let (_, units_a) = second_round(&model, &waves, 4, 150, 5).unwrap();
    let (_, units_b) = second_round(&model, &waves, 4, 150, 5).unwrap();
    assert_eq!(units_a, units_b);
    for (_, labels) in &units_a {
        assert_eq!(labels.len(), 10);
        assert!(labels.iter().all(|&l| l < 4));
    }
}
