//! Training-loop contracts: untrained loss level, determinism, feature file IO.

use cpc::{
    extract_features, nce_loss, read_feature_file, sample_negatives, train_cpc,
    write_feature_file, CpcConfig, CpcModel, FeatureLayer, HeadKind, TrainOptions,
};
use nn_core::{Bound, Graph, HasParams, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> CpcConfig {
    CpcConfig {
        encoder_channels: 8,
        ar_layers: 1,
        ar_hidden: 8,
        head_hidden: 8,
        head_heads: 2,
        head_ffn: 16,
        conformer_kernel: 4,
        prediction_steps: 2,
        negatives: 128,
        ..CpcConfig::desk(HeadKind::Transformer)
    }
}

fn synth_wave(len: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = 0.01 + rng.gen::<f64>() * 0.05;
    (0..len).map(|i| (i as f64 * f).sin() * 0.5).collect()
}

#[test]
fn untrained_loss_is_near_ln_candidate_count() {
    let model = CpcModel::new(tiny_config(), 123).unwrap();
    let wave = synth_wave(20 * 160, 5);
    let mut g = Graph::new();
    let mut bound = Bound::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (z, _c, preds) = model
        .forward(&mut g, &mut bound, &wave, Mode::Eval, &mut rng)
        .unwrap();
    let t_len = g.value(z).rows();
    let negatives = sample_negatives(t_len, 2, 128, &mut rng);
    let loss = nce_loss(&mut g, z, &preds, &negatives).unwrap();
    let expected = 129.0_f64.ln();
    let got = g.value(loss).item();
    assert!(
        (got - expected).abs() / expected < 0.02,
        "untrained loss {got} not within 2% of ln(129) = {expected}"
    );
}

#[test]
fn identical_seeds_give_identical_traces() {
    let waves: Vec<Vec<f64>> = (0..3).map(|i| synth_wave(4000, i)).collect();
    let opts = TrainOptions {
        epochs: 2,
        window: 1600,
        windows_per_epoch: 4,
        batch: 2,
        lr: 2e-4,
    };
    let cfg = tiny_config();
    let a = train_cpc(&waves, &cfg, 7, &opts).unwrap();
    let b = train_cpc(&waves, &cfg, 7, &opts).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    // checkpoints agree parameter-by-parameter
    for ((na, ta), (nb, tb)) in a.model.params().iter().zip(b.model.params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
    // and a different seed gives a different trace
    let c = train_cpc(&waves, &cfg, 8, &opts).unwrap();
    assert_ne!(a.loss_trace, c.loss_trace);
}

#[test]
fn feature_files_round_trip() {
    let model = CpcModel::new(tiny_config(), 3).unwrap();
    let wave = synth_wave(3200, 2);
    let feats = extract_features(&model, &wave, FeatureLayer::C).unwrap();
    assert_eq!(feats.shape(), &[20, 8]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("utt0.feat");
    write_feature_file(&path, &feats).unwrap();
    let back = read_feature_file(&path).unwrap();
    assert_eq!(back.shape(), feats.shape());
    // f32 round trip
    for (a, b) in feats.data().iter().zip(back.data()) {
        assert_eq!(*a as f32, *b as f32);
    }
}

#[test]
fn too_small_dataset_is_reported() {
    let waves = vec![synth_wave(100, 1)];
    let opts = TrainOptions {
        window: 1600,
        ..Default::default()
    };
    let err = match train_cpc(&waves, &tiny_config(), 1, &opts) {
        Err(e) => e,
        Ok(_) => panic!("expected dataset-too-small error"),
    };
    assert!(err.to_string().contains("no window"));
}
