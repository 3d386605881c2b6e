//! Release gates for the whole stack, run end to end in a fixed order. Each
//! gate prints one PASS/FAIL line; the test fails if any gate fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines
//! as they complete. The full suite trains several models and takes on the
//! order of twenty minutes on a desktop CPU.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cluster::{dc_loss, kmeans_fit, DcConfig, DcModel};
use cpc::{
    nce_loss, sample_negatives, train_cpc_with_probe, CpcConfig, CpcModel, HeadBlock, HeadKind,
    TrainOptions,
};
use metrics::{
    abx_error_with, angular_distance, dtw_distance, pair_accuracy, spearman_rho, AbxItem, AbxMode,
    MetricReport, SimilarityRecord, StimulusPair,
};
use nn_core::gradcheck::gradcheck;
use nn_core::{
    Activation, Bound, ChannelNorm, Conv1d, ConvModule, Ffn, Graph, HasParams, Initializer,
    LayerNorm, Linear, Lstm, Mhsa, Mode, NodeId, Tensor,
};
use pipeline::{
    generate_synth, read_wav, run_pipeline, RunConfig, SynthSpec, BASELINE_STAGES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slm::{mlm_loss, mask_batch, SlmConfig, SlmModel};

// ABX ceilings for gate 4, frozen after the single calibration run of the
// default configuration (seed 7: baseline 0.0261/0.3370, deep cluster
// 0.0126/0.2445). Within-speaker clears chance (0.5) by more than 10x;
// across-speaker cannot at this scale — aggregator features keep pitch, and
// pitch is the speaker — so its ceiling records the calibrated margin.
const ABX_WITHIN_MAX: f64 = 0.05;
const ABX_ACROSS_MAX: f64 = 0.40;

// ---------------------------------------------------------------- gate 1 --

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Gradchecks `mean(forward(x)^2)` w.r.t. all layer parameters and the input.
fn check_layer<L, F>(layer: &RefCell<L>, forward: F, input: Tensor) -> Result<(), String>
where
    L: HasParams,
    F: Fn(&L, &mut Graph, &mut Bound, NodeId) -> NodeId,
{
    let mut params: Vec<(String, Tensor)> = layer
        .borrow()
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    params.push(("input".to_string(), input));
    let mut frag = |ps: &[(String, Tensor)], want_grads: bool| {
        layer.borrow_mut().load_params(ps).unwrap();
        let inp = ps.iter().find(|(n, _)| n == "input").unwrap().1.clone();
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let x = bound.bind(&mut g, "input", &inp);
        let l = layer.borrow();
        let y = forward(&l, &mut g, &mut bound, x);
        let yy = g.mul(y, y);
        let loss = g.mean_all(yy);
        let lv = g.value(loss).item();
        if want_grads {
            let grads = g.backward(loss);
            let map: HashMap<String, Tensor> = bound.named_grads(&grads).into_iter().collect();
            (lv, Some(map))
        } else {
            (lv, None)
        }
    };
    let report = gradcheck(&mut frag, &params, 1e-4, 1e-5);
    if report.passed() {
        Ok(())
    } else {
        Err(format!("worst: {:?}", report.worst))
    }
}

fn toy_cpc(head: HeadKind) -> CpcConfig {
    CpcConfig {
        encoder_channels: 4,
        encoder_kernels: vec![10, 8, 4, 4, 4],
        encoder_strides: vec![5, 4, 2, 2, 2],
        encoder_paddings: vec![3, 2, 1, 1, 1],
        ar_layers: 1,
        ar_hidden: 4,
        head_kind: head,
        head_hidden: 4,
        head_heads: 2,
        head_ffn: 6,
        conformer_kernel: 3,
        prediction_steps: 2,
        negatives: 4,
        head_dropout: 0.1,
        output_dropout: 0.5,
    }
}

/// NCE through encoder, aggregator, and one full prediction head.
fn check_cpc_head(head: HeadKind, seed: u64) -> Result<(), String> {
    let model = RefCell::new(CpcModel::new(toy_cpc(head), seed).unwrap());
    let wave: Vec<f64> = (0..480).map(|i| ((i * 7 % 23) as f64 / 23.0) - 0.5).collect();
    let negatives = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_negatives(3, 2, 4, &mut rng)
    };
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
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = model.borrow();
        let (z, _c, preds) = m
            .forward(&mut g, &mut bound, &wave, Mode::Eval, &mut rng)
            .unwrap();
        let loss = nce_loss(&mut g, z, &preds, &negatives).unwrap();
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
    if report.passed() {
        Ok(())
    } else {
        Err(format!("{head:?} head: worst {:?}", report.worst))
    }
}

fn check_mlm_gradient() -> Result<(), String> {
    let cfg = SlmConfig {
        layers: 1,
        heads: 2,
        hidden: 8,
        ffn: 12,
        max_len: 32,
        ..SlmConfig::desk(6)
    };
    let model = RefCell::new(SlmModel::new(cfg.clone(), 9).unwrap());
    let units = vec![1usize, 4, 0, 3, 5];
    let mut tokens = slm::wrap(&cfg, &units);
    tokens[2] = cfg.mask_id();
    tokens[5] = cfg.mask_id();
    let masked = slm::MaskedSequence {
        tokens,
        targets: vec![(2, 4), (5, 3)],
    };
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
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = model.borrow();
        let loss = mlm_loss(&m, &mut g, &mut bound, &masked, Mode::Eval, &mut rng).unwrap();
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
    if report.passed() {
        Ok(())
    } else {
        Err(format!("masked LM: worst {:?}", report.worst))
    }
}

fn check_dc_gradient() -> Result<(), String> {
    let cfg = DcConfig {
        cpc: toy_cpc(HeadKind::Transformer),
        k: 3,
    };
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
    if report.passed() {
        Ok(())
    } else {
        Err(format!("deep-cluster CE: worst {:?}", report.worst))
    }
}

fn gate_gradients() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut init = Initializer::new(1);
    let layer = RefCell::new(Linear::new("fc", 3, 4, &mut init).unwrap());
    let inp = random_tensor(&mut rng, vec![5, 3]);
    check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp).map_err(|e| format!("linear: {e}"))?;

    let mut init = Initializer::new(2);
    let layer = RefCell::new(Conv1d::new("c", 2, 3, 3, 2, 1, 1, &mut init).unwrap());
    let inp = random_tensor(&mut rng, vec![6, 2]);
    check_layer(&layer, |l, g, b, x| l.forward(g, b, x).unwrap(), inp)
        .map_err(|e| format!("conv1d: {e}"))?;

    let mut init = Initializer::new(3);
    let layer = RefCell::new(Lstm::new("l", 3, 3, 2, &mut init).unwrap());
    let inp = random_tensor(&mut rng, vec![4, 3]);
    check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp).map_err(|e| format!("lstm: {e}"))?;

    for (seed, causal) in [(4u64, false), (5u64, true)] {
        let mut init = Initializer::new(seed);
        let layer = RefCell::new(Mhsa::new("a", 4, 2, causal, &mut init).unwrap());
        let inp = random_tensor(&mut rng, vec![4, 4]);
        check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp)
            .map_err(|e| format!("attention (causal={causal}): {e}"))?;
    }

    for (seed, act) in [(6u64, Activation::Relu), (7u64, Activation::Swish)] {
        let mut init = Initializer::new(seed);
        let layer = RefCell::new(Ffn::new("f", 3, 5, act, &mut init).unwrap());
        let inp = random_tensor(&mut rng, vec![4, 3]);
        check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp)
            .map_err(|e| format!("ffn ({act:?}): {e}"))?;
    }

    let mut init = Initializer::new(8);
    let layer = RefCell::new(LayerNorm::new("ln", 4, &mut init).unwrap());
    let inp = random_tensor(&mut rng, vec![3, 4]);
    check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp)
        .map_err(|e| format!("layer norm: {e}"))?;

    let mut init = Initializer::new(9);
    let layer = RefCell::new(ChannelNorm::new("cn", 3, &mut init).unwrap());
    let inp = random_tensor(&mut rng, vec![5, 3]);
    check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp)
        .map_err(|e| format!("channel norm: {e}"))?;

    let mut init = Initializer::new(10);
    let layer = RefCell::new(ConvModule::new("cm", 4, 3, &mut init).unwrap());
    let inp = random_tensor(&mut rng, vec![5, 4]);
    check_layer(&layer, |l, g, b, x| l.forward(g, b, x), inp)
        .map_err(|e| format!("conv module: {e}"))?;

    check_cpc_head(HeadKind::Transformer, 31)?;
    check_cpc_head(HeadKind::Conformer, 37)?;
    check_mlm_gradient()?;
    check_dc_gradient()?;

    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 60.0 {
        return Err(format!("suite took {elapsed:.1} s (budget 60 s)"));
    }
    Ok(format!("all ops and both heads at 1e-4 in {elapsed:.1} s"))
}

// ---------------------------------------------------------------- gate 2 --

fn gate_untrained_losses() -> Result<String, String> {
    // contrastive loss: 128 negatives + the positive = 129 candidates
    let model = CpcModel::new(
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
        },
        123,
    )
    .unwrap();
    let wave: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..20 * 160).map(|_| rng.gen_range(-0.5..0.5)).collect()
    };
    let mut g = Graph::new();
    let mut bound = Bound::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (z, _c, preds) = model
        .forward(&mut g, &mut bound, &wave, Mode::Eval, &mut rng)
        .unwrap();
    let t_len = g.value(z).rows();
    let negatives = sample_negatives(t_len, 2, 128, &mut rng);
    let loss = nce_loss(&mut g, z, &preds, &negatives).unwrap();
    let nce = g.value(loss).item();
    let want = 129.0_f64.ln();
    if (nce - want).abs() / want >= 0.02 {
        return Err(format!("contrastive loss {nce:.4} vs ln(129) = {want:.4}"));
    }

    // masked LM: vocabulary = 50 units + 4 specials
    let cfg = SlmConfig::desk(50);
    let model = SlmModel::new(cfg.clone(), 42).unwrap();
    let seqs: Vec<Vec<usize>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..4)
            .map(|_| (0..60).map(|_| rng.gen_range(0..50)).collect())
            .collect()
    };
    let batch = mask_batch(&cfg, &seqs, 3);
    let mut total = 0.0;
    let mut n = 0;
    for m in &batch {
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = mlm_loss(&model, &mut g, &mut bound, m, Mode::Eval, &mut rng).unwrap();
        total += g.value(loss).item() * m.targets.len() as f64;
        n += m.targets.len();
    }
    let mlm = total / n as f64;
    let want = (cfg.vocab() as f64).ln();
    if (mlm - want).abs() / want >= 0.02 {
        return Err(format!("masked-LM loss {mlm:.4} vs ln({}) = {want:.4}", cfg.vocab()));
    }

    // deep-cluster CE over 50 pseudo-labels
    let dc = DcModel::new(
        DcConfig {
            cpc: CpcConfig::desk(HeadKind::Transformer),
            k: 50,
        },
        11,
    )
    .unwrap();
    let w: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..160 * 60).map(|_| rng.gen_range(-0.5..0.5)).collect()
    };
    let labels: Vec<usize> = {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..60).map(|_| rng.gen_range(0..50)).collect()
    };
    let mut g = Graph::new();
    let mut bound = Bound::new();
    let loss = dc_loss(&dc, &mut g, &mut bound, &w, &labels).unwrap();
    let ce = g.value(loss).item();
    let want = 50.0_f64.ln();
    if (ce - want).abs() / want >= 0.02 {
        return Err(format!("deep-cluster CE {ce:.4} vs ln(50) = {want:.4}"));
    }

    Ok(format!(
        "NCE {nce:.3}~ln129, MLM {mlm:.3}~ln54, CE {ce:.3}~ln50"
    ))
}

// ---------------------------------------------------------------- gate 3 --

/// All monotone alignment paths from (0,0) to (ta-1, tb-1); minimal
/// path-averaged cost.
fn exhaustive_dtw(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, sum: f64, len: usize, best: &mut f64) {
        let sum = sum + angular_distance(&a[i], &b[j]);
        let len = len + 1;
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(sum / len as f64);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, sum, len, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, sum, len, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, sum, len, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, 0, &mut best);
    best
}

fn make_items(n_a: usize, n_b: usize, speakers: &[&str], rng: &mut ChaCha8Rng) -> Vec<AbxItem> {
    let mut items = Vec::new();
    for i in 0..n_a {
        items.push(AbxItem {
            id: format!("a{i}"),
            features: vec![vec![0.0]],
            category: "A".into(),
            speaker: speakers[rng.gen_range(0..speakers.len())].into(),
        });
    }
    for i in 0..n_b {
        items.push(AbxItem {
            id: format!("b{i}"),
            features: vec![vec![0.0]],
            category: "B".into(),
            speaker: speakers[rng.gen_range(0..speakers.len())].into(),
        });
    }
    items
}

/// Straight-line reimplementation: enumerate triples per speaker condition,
/// score with the half-count tie rule, symmetrize directions, average over
/// conditions.
fn brute_force_abx(items: &[AbxItem], mode: AbxMode, d: &[Vec<f64>]) -> Option<f64> {
    let speakers: std::collections::BTreeSet<&str> =
        items.iter().map(|i| i.speaker.as_str()).collect();
    let idx = |cat: &str, spk: &str| -> Vec<usize> {
        items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.category == cat && it.speaker == spk)
            .map(|(i, _)| i)
            .collect()
    };
    let e_dir = |a_pool: &[usize], x_pool: &[usize], b_pool: &[usize]| -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0;
        for &x in x_pool {
            for &a in a_pool {
                if a == x {
                    continue;
                }
                for &b in b_pool {
                    sum += if d[b][x] < d[a][x] {
                        1.0
                    } else if d[b][x] == d[a][x] {
                        0.5
                    } else {
                        0.0
                    };
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    };
    let mut conditions = Vec::new();
    match mode {
        AbxMode::Within => {
            for &s in &speakers {
                let (a, b) = (idx("A", s), idx("B", s));
                if let (Some(ab), Some(ba)) = (e_dir(&a, &a, &b), e_dir(&b, &b, &a)) {
                    conditions.push((ab + ba) / 2.0);
                }
            }
        }
        AbxMode::Across => {
            for &s1 in &speakers {
                for &s2 in &speakers {
                    if s1 == s2 {
                        continue;
                    }
                    let (a1, b1) = (idx("A", s1), idx("B", s1));
                    let (a2, b2) = (idx("A", s2), idx("B", s2));
                    if let (Some(ab), Some(ba)) = (e_dir(&a1, &a2, &b1), e_dir(&b1, &b2, &a1)) {
                        conditions.push((ab + ba) / 2.0);
                    }
                }
            }
        }
    }
    (!conditions.is_empty()).then(|| conditions.iter().sum::<f64>() / conditions.len() as f64)
}

/// Classic rank-difference formula; valid when all values are distinct.
fn spearman_formula(model: &[f64], human: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = (pos + 1) as f64;
        }
        r
    };
    let rm = rank(model);
    let rh = rank(human);
    let n = model.len() as f64;
    let d2: f64 = rm.iter().zip(&rh).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn gate_oracles() -> Result<String, String> {
    // ABX vs exhaustive triple enumeration, 1000 random instances
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut abx_checked = 0;
    for case in 0..1000 {
        let n_a = rng.gen_range(2..=6);
        let n_b = rng.gen_range(1..=6);
        let speakers: &[&str] = if case % 2 == 0 {
            &["s1", "s2"]
        } else {
            &["s1", "s2", "s3"]
        };
        let items = make_items(n_a, n_b, speakers, &mut rng);
        let n = items.len();
        // symmetric distances quantized to force ties through the tie rule
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = (rng.gen_range(0..8) as f64) / 8.0;
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        for &mode in &[AbxMode::Within, AbxMode::Across] {
            let want = brute_force_abx(&items, mode, &d);
            let got = abx_error_with(&items, mode, &mut |i, j| d[i][j]);
            match want {
                Some(w) => {
                    let g = got.map_err(|e| format!("case {case}: {e}"))?.error;
                    if g != w {
                        return Err(format!("abx case {case}: {g} vs oracle {w}"));
                    }
                    abx_checked += 1;
                }
                None => {
                    if got.is_ok() {
                        return Err(format!("abx case {case}: expected undefined"));
                    }
                }
            }
        }
    }

    // DTW vs exhaustive path enumeration for lengths <= 5
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for case in 0..300 {
        let la = rng.gen_range(1..=5);
        let lb = rng.gen_range(1..=5);
        let a: Vec<Vec<f64>> = (0..la)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..lb)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let got = dtw_distance(&a, &b).unwrap();
        let want = exhaustive_dtw(&a, &b);
        if (got - want).abs() >= 1e-12 {
            return Err(format!("dtw case {case} ({la}x{lb}): {got} vs {want}"));
        }
    }

    // Spearman vs the rank-difference formula on tie-free columns
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..300 {
        let n = rng.gen_range(3..20);
        let model: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let human: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let records: Vec<SimilarityRecord> = model
            .iter()
            .zip(&human)
            .map(|(&m, &h)| SimilarityRecord { model: m, human: h })
            .collect();
        let got = spearman_rho(&records).map_err(|e| format!("case {case}: {e}"))?;
        let want = spearman_formula(&model, &human);
        if (got - want).abs() >= 1e-12 {
            return Err(format!("spearman case {case}: {got} vs {want}"));
        }
    }

    // k-means inertia is nonincreasing on every run
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for case in 0..40 {
        let n = rng.gen_range(20..120);
        let d = rng.gen_range(2..6);
        let feats = random_tensor(&mut rng, vec![n, d]);
        let k = rng.gen_range(2..8);
        let m = kmeans_fit(&feats, k, 50, case).map_err(|e| format!("kmeans {case}: {e}"))?;
        for w in m.inertia_trace.windows(2) {
            if w[1] > w[0] {
                return Err(format!("kmeans case {case}: inertia rose {} -> {}", w[0], w[1]));
            }
        }
    }

    Ok(format!(
        "abx exact on {abx_checked} conditions, dtw/spearman/inertia oracles clean"
    ))
}

// ------------------------------------------------------- gates 4, 6, 7 ----

fn desk_config(out_dir: &Path, deep: bool) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.out_dir = out_dir.to_path_buf();
    if !deep {
        cfg.stages = BASELINE_STAGES.iter().map(|s| s.to_string()).collect();
    }
    cfg
}

struct PipelineRuns {
    baseline: MetricReport,
    deep: MetricReport,
    deep_bytes: Vec<u8>,
    repeat_bytes: Vec<u8>,
    elapsed_s: f64,
}

fn run_pipelines(root: &Path) -> Result<PipelineRuns, String> {
    let start = Instant::now();
    let read_report = |dir: &Path| -> Result<(MetricReport, Vec<u8>), String> {
        let path = dir.join("report").join("metrics.tsv");
        let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let report = MetricReport::from_text(&String::from_utf8_lossy(&bytes))
            .map_err(|e| e.to_string())?;
        Ok((report, bytes))
    };

    let base_dir = root.join("baseline");
    run_pipeline(&desk_config(&base_dir, false)).map_err(|e| format!("baseline run: {e}"))?;
    let (baseline, _) = read_report(&base_dir)?;

    let deep_dir = root.join("deep");
    run_pipeline(&desk_config(&deep_dir, true)).map_err(|e| format!("deep-cluster run: {e}"))?;
    let (deep, deep_bytes) = read_report(&deep_dir)?;
    // the runtime budget covers the baseline-vs-deep comparison; the repeat
    // run below only serves the determinism gate
    let elapsed_s = start.elapsed().as_secs_f64();

    let repeat_dir = root.join("deep-repeat");
    run_pipeline(&desk_config(&repeat_dir, true)).map_err(|e| format!("repeat run: {e}"))?;
    let (_, repeat_bytes) = read_report(&repeat_dir)?;

    Ok(PipelineRuns {
        baseline,
        deep,
        deep_bytes,
        repeat_bytes,
        elapsed_s,
    })
}

fn gate_deep_cluster_claim(runs: &PipelineRuns) -> Result<String, String> {
    let get = |r: &MetricReport, k: &str| -> Result<f64, String> {
        r.get(k).ok_or_else(|| format!("metric `{k}` missing"))
    };
    let bw = get(&runs.baseline, "abx-within")?;
    let ba = get(&runs.baseline, "abx-across")?;
    let dw = get(&runs.deep, "abx-within")?;
    let da = get(&runs.deep, "abx-across")?;
    if !(dw < bw) {
        return Err(format!("within: deep {dw:.4} not < baseline {bw:.4}"));
    }
    if !(da < ba) {
        return Err(format!("across: deep {da:.4} not < baseline {ba:.4}"));
    }
    for (name, v, max) in [
        ("baseline within", bw, ABX_WITHIN_MAX),
        ("deep within", dw, ABX_WITHIN_MAX),
        ("baseline across", ba, ABX_ACROSS_MAX),
        ("deep across", da, ABX_ACROSS_MAX),
    ] {
        if v > max {
            return Err(format!("{name} {v:.4} above ceiling {max}"));
        }
    }
    let budget = 30.0 * 60.0;
    if runs.elapsed_s > budget {
        return Err(format!("runtime {:.0} s over the {budget:.0} s budget", runs.elapsed_s));
    }
    Ok(format!(
        "within {dw:.4}<{bw:.4}, across {da:.4}<{ba:.4}, {:.0} s total",
        runs.elapsed_s
    ))
}

fn gate_pair_significance(runs: &PipelineRuns) -> Result<String, String> {
    let mut details = Vec::new();
    for (acc_key, n_key) in [
        ("lexical-accuracy", "lexical-accuracy-pairs"),
        ("syntactic-accuracy", "syntactic-accuracy-pairs"),
    ] {
        let acc = runs
            .deep
            .get(acc_key)
            .ok_or_else(|| format!("metric `{acc_key}` missing"))?;
        let n = runs
            .deep
            .get(n_key)
            .ok_or_else(|| format!("metric `{n_key}` missing"))?;
        if n < 500.0 {
            return Err(format!("{acc_key}: only {n} pairs (need >= 500)"));
        }
        // binomial null at p = 0.5: sigma = 0.5 / sqrt(n)
        let threshold = 0.5 + 5.0 * 0.5 / n.sqrt();
        if acc <= threshold {
            return Err(format!(
                "{acc_key} {acc:.4} <= 5-sigma threshold {threshold:.4} (n = {n})"
            ));
        }
        details.push(format!("{acc_key} {acc:.3} > {threshold:.3}"));
    }
    Ok(details.join(", "))
}

fn gate_determinism(runs: &PipelineRuns) -> Result<String, String> {
    if runs.deep_bytes != runs.repeat_bytes {
        return Err("metric reports differ between identically seeded runs".into());
    }
    Ok(format!(
        "two runs byte-identical ({} bytes)",
        runs.deep_bytes.len()
    ))
}

// ---------------------------------------------------------------- gate 5 --

/// Elementwise max abs difference between `want` and `got`.
fn max_abs_diff(want: &[f64], got: &[f64]) -> f64 {
    want.iter()
        .zip(got)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Checks the Conformer block identities on one waveform: each branch output
/// must recombine into the next residual stream exactly as documented.
fn check_decomposition(model: &CpcModel, wave: &[f64]) -> Result<(), String> {
    let mut g = Graph::new();
    let mut bound = Bound::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_z, c, _preds) = model
        .forward(&mut g, &mut bound, wave, Mode::Eval, &mut rng)
        .unwrap();
    let head_in = match &model.head.in_proj {
        Some(p) => p.forward(&mut g, &mut bound, c),
        None => c,
    };
    let block = match &model.head.block {
        HeadBlock::Conformer(b) => b,
        HeadBlock::Transformer(_) => return Err("expected a Conformer head".into()),
    };
    let tr = block.forward_detailed(&mut g, &mut bound, head_in, Mode::Eval, &mut rng);

    // final combine + norm: rebuild the pre-norm sum and push it through the
    // block's own norm for comparison against the block output
    let half2 = g.scale(tr.ffn2_out, 0.5);
    let pre = g.add(tr.after_conv, half2);
    let rebuilt = block.ln.forward(&mut g, &mut bound, pre);

    fn val(g: &Graph, n: NodeId) -> Vec<f64> {
        g.value(n).data().to_vec()
    }
    let combine = |x: &[f64], y: &[f64], s: f64| -> Vec<f64> {
        x.iter().zip(y).map(|(a, b)| a + s * b).collect()
    };
    let checks = [
        ("half-step ffn", combine(&val(&g, tr.input), &val(&g, tr.ffn1_out), 0.5), val(&g, tr.after_ffn1)),
        ("attention", combine(&val(&g, tr.after_ffn1), &val(&g, tr.mhsa_out), 1.0), val(&g, tr.after_mhsa)),
        ("convolution", combine(&val(&g, tr.after_mhsa), &val(&g, tr.conv_out), 1.0), val(&g, tr.after_conv)),
    ];
    for (name, want, got) in &checks {
        let d = max_abs_diff(want, got);
        if d > 1e-6 {
            return Err(format!("{name} residual off by {d:.2e}"));
        }
    }
    let d = max_abs_diff(&val(&g, rebuilt), &val(&g, tr.output));
    if d > 1e-6 {
        return Err(format!("final norm step off by {d:.2e}"));
    }
    Ok(())
}

fn gate_head_parity(scratch: &Path) -> Result<String, String> {
    // small shared corpus so both heads see identical data
    let spec = SynthSpec {
        phones: 6,
        speakers: 2,
        train_seconds: 60.0,
        abx_items_per_cell: 1,
        lexicon_words: 8,
        lexical_pairs: 10,
        syntactic_pairs: 10,
        simi_pairs: 5,
        seed: 21,
        ..SynthSpec::default()
    };
    let out = generate_synth(&spec, &scratch.join("head-parity")).map_err(|e| e.to_string())?;
    let waves: Vec<Vec<f64>> = out
        .train
        .entries
        .iter()
        .map(|e| read_wav(&e.audio))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let probe_wave = waves[0].clone();

    let opts = TrainOptions {
        epochs: 6,
        window: 6400,
        windows_per_epoch: 24,
        batch: 4,
        lr: 2e-3,
    };
    let decomp_fail = RefCell::new(None::<String>);
    let conformer = train_cpc_with_probe(
        &waves,
        &CpcConfig::desk(HeadKind::Conformer),
        13,
        &opts,
        |epoch, model| {
            if let Err(e) = check_decomposition(model, &probe_wave) {
                *decomp_fail.borrow_mut() = Some(format!("epoch {epoch}: {e}"));
            }
            Ok(())
        },
    )
    .map_err(|e| e.to_string())?;
    if let Some(e) = decomp_fail.into_inner() {
        return Err(e);
    }
    let transformer = train_cpc_with_probe(
        &waves,
        &CpcConfig::desk(HeadKind::Transformer),
        13,
        &opts,
        |_, _| Ok(()),
    )
    .map_err(|e| e.to_string())?;

    let cf = *conformer.loss_trace.last().unwrap();
    let tf = *transformer.loss_trace.last().unwrap();
    let rel = (cf - tf).abs() / tf;
    if rel >= 0.10 {
        return Err(format!(
            "final losses {cf:.4} (conformer) vs {tf:.4} (transformer): {:.1}% apart",
            rel * 100.0
        ));
    }
    Ok(format!(
        "losses {cf:.3} vs {tf:.3} ({:.1}% apart), decomposition at 1e-6 every epoch",
        rel * 100.0
    ))
}

// ---------------------------------------------------------------- gate 8 --

fn monotone(case: u64, x: f64) -> f64 {
    match case % 4 {
        0 => x.exp(),
        1 => x * x * x + 2.0 * x,
        2 => x.atan(),
        _ => 3.0 * x + 1.0,
    }
}

fn gate_invariances() -> Result<String, String> {
    // ABX under strictly monotone distance transforms
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..1000u64 {
        let n_a = rng.gen_range(2..=5);
        let n_b = rng.gen_range(1..=5);
        let items = make_items(n_a, n_b, &["s1", "s2"], &mut rng);
        let n = items.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = (rng.gen_range(0..6) as f64) / 6.0;
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        for &mode in &[AbxMode::Within, AbxMode::Across] {
            let plain = abx_error_with(&items, mode, &mut |i, j| d[i][j]);
            let warped = abx_error_with(&items, mode, &mut |i, j| monotone(case, d[i][j]));
            match (plain, warped) {
                (Ok(p), Ok(w)) => {
                    if (p.error - w.error).abs() >= 1e-12 {
                        return Err(format!("abx case {case}: {} vs {}", p.error, w.error));
                    }
                }
                (Err(_), Err(_)) => {}
                _ => return Err(format!("abx case {case}: definedness changed")),
            }
        }
    }

    // paired accuracy under strictly monotone score transforms
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for case in 0..1000u64 {
        let n = rng.gen_range(1..40);
        let pairs: Vec<StimulusPair> = (0..n)
            .map(|i| StimulusPair {
                id: format!("p{i}"),
                // quantized so ties occur
                positive: (rng.gen_range(-4i32..=4) as f64) / 4.0,
                negative: (rng.gen_range(-4i32..=4) as f64) / 4.0,
            })
            .collect();
        let warped: Vec<StimulusPair> = pairs
            .iter()
            .map(|p| StimulusPair {
                id: p.id.clone(),
                positive: monotone(case, p.positive),
                negative: monotone(case, p.negative),
            })
            .collect();
        let a = pair_accuracy(&pairs).map_err(|e| e.to_string())?;
        let b = pair_accuracy(&warped).map_err(|e| e.to_string())?;
        if (a - b).abs() >= 1e-12 {
            return Err(format!("pair case {case}: {a} vs {b}"));
        }
    }

    // Spearman under independent monotone transforms of each column
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..1000u64 {
        let n = rng.gen_range(3..30);
        let records: Vec<SimilarityRecord> = (0..n)
            .map(|_| SimilarityRecord {
                model: (rng.gen_range(-8i32..=8) as f64) / 8.0,
                human: (rng.gen_range(-8i32..=8) as f64) / 8.0,
            })
            .collect();
        let warped: Vec<SimilarityRecord> = records
            .iter()
            .map(|r| SimilarityRecord {
                model: monotone(case, r.model),
                human: monotone(case.wrapping_add(1), r.human),
            })
            .collect();
        match (spearman_rho(&records), spearman_rho(&warped)) {
            (Ok(a), Ok(b)) => {
                if (a - b).abs() >= 1e-12 {
                    return Err(format!("spearman case {case}: {a} vs {b}"));
                }
            }
            (Err(_), Err(_)) => {}
            _ => return Err(format!("spearman case {case}: definedness changed")),
        }
    }

    Ok("abx, paired accuracy, spearman invariant over 1000 cases each".into())
}

// ----------------------------------------------------------------- driver --

#[test]
fn acceptance_gates() {
    let scratch = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Result<String, String>)> = Vec::new();

    results.push(("gradient-suite", gate_gradients()));
    results.push(("untrained-loss-levels", gate_untrained_losses()));
    results.push(("metric-oracles", gate_oracles()));
    results.push(("head-parity-and-decomposition", gate_head_parity(scratch.path())));
    results.push(("metric-invariances", gate_invariances()));

    match run_pipelines(scratch.path()) {
        Ok(runs) => {
            results.push(("deep-cluster-improves-abx", gate_deep_cluster_claim(&runs)));
            results.push(("pair-accuracy-significance", gate_pair_significance(&runs)));
            results.push(("run-determinism", gate_determinism(&runs)));
        }
        Err(e) => {
            let msg = format!("pipeline runs failed: {e}");
            results.push(("deep-cluster-improves-abx", Err(msg.clone())));
            results.push(("pair-accuracy-significance", Err(msg.clone())));
            results.push(("run-determinism", Err(msg)));
        }
    }

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance gate(s) failed");
}
