//! Central-difference gradient checks for every layer primitive.

use std::cell::RefCell;
use std::collections::HashMap;

use nn_core::gradcheck::{gradcheck, gradcheck_strict};
use nn_core::{
    Activation, Bound, ChannelNorm, Conv1d, ConvModule, Ffn, Graph, HasParams, Initializer,
    LayerNorm, Linear, Lstm, Mhsa, NodeId, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Gradchecks `mean(forward(x)^2)` w.r.t. all layer parameters and the input.
fn check_layer<L, F>(layer: &RefCell<L>, forward: F, input: Tensor)
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
    let report = gradcheck(&mut frag, &params, TOL, STEP);
    assert!(
        report.passed(),
        "gradcheck failed, worst: {:?}",
        report.worst
    );
}

#[test]
fn linear_with_squared_loss_passes_at_1e6() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut init = Initializer::new(1);
    let layer = RefCell::new(Linear::new("fc", 3, 4, &mut init).unwrap());
    let input = random_tensor(&mut rng, vec![5, 3]);
    // exact quadratic: tight tolerance
    let mut params: Vec<(String, Tensor)> = layer
        .borrow()
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    params.push(("input".to_string(), input));
    let mut frag = |ps: &[(String, Tensor)], want: bool| {
        layer.borrow_mut().load_params(ps).unwrap();
        let inp = ps.iter().find(|(n, _)| n == "input").unwrap().1.clone();
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let x = bound.bind(&mut g, "input", &inp);
        let y = layer.borrow().forward(&mut g, &mut bound, x);
        let yy = g.mul(y, y);
        let loss = g.mean_all(yy);
        let lv = g.value(loss).item();
        if want {
            let grads = g.backward(loss);
            let map: HashMap<String, Tensor> = bound.named_grads(&grads).into_iter().collect();
            (lv, Some(map))
        } else {
            (lv, None)
        }
    };
    let report = gradcheck(&mut frag, &params, 1e-6, 1e-5);
    assert!(report.passed(), "worst: {:?}", report.worst);
}

#[test]
fn conv1d_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut init = Initializer::new(2);
    let layer = RefCell::new(Conv1d::new("c", 2, 3, 3, 2, 1, 1, &mut init).unwrap());
    check_layer(
        &layer,
        |l, g, b, x| l.forward(g, b, x).unwrap(),
        random_tensor(&mut rng, vec![6, 2]),
    );
}

#[test]
fn lstm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut init = Initializer::new(3);
    let layer = RefCell::new(Lstm::new("l", 3, 3, 2, &mut init).unwrap());
    check_layer(
        &layer,
        |l, g, b, x| l.forward(g, b, x),
        random_tensor(&mut rng, vec![4, 3]),
    );
}

#[test]
fn mhsa_gradcheck_bidirectional_and_causal() {
    for (seed, causal) in [(4u64, false), (5u64, true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer::new(seed);
        let layer = RefCell::new(Mhsa::new("a", 4, 2, causal, &mut init).unwrap());
        check_layer(
            &layer,
            |l, g, b, x| l.forward(g, b, x),
            random_tensor(&mut rng, vec![4, 4]),
        );
    }
}

#[test]
fn ffn_gradcheck_both_activations() {
    for (seed, act) in [(6u64, Activation::Relu), (7u64, Activation::Swish)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer::new(seed);
        let layer = RefCell::new(Ffn::new("f", 3, 5, act, &mut init).unwrap());
        check_layer(
            &layer,
            |l, g, b, x| l.forward(g, b, x),
            random_tensor(&mut rng, vec![4, 3]),
        );
    }
}

#[test]
fn layernorm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut init = Initializer::new(8);
    let layer = RefCell::new(LayerNorm::new("ln", 4, &mut init).unwrap());
    check_layer(
        &layer,
        |l, g, b, x| l.forward(g, b, x),
        random_tensor(&mut rng, vec![3, 4]),
    );
}

#[test]
fn channel_norm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut init = Initializer::new(9);
    let layer = RefCell::new(ChannelNorm::new("cn", 3, &mut init).unwrap());
    check_layer(
        &layer,
        |l, g, b, x| l.forward(g, b, x),
        random_tensor(&mut rng, vec![5, 3]),
    );
}

#[test]
fn conv_module_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut init = Initializer::new(10);
    let layer = RefCell::new(ConvModule::new("cm", 4, 3, &mut init).unwrap());
    check_layer(
        &layer,
        |l, g, b, x| l.forward(g, b, x),
        random_tensor(&mut rng, vec![5, 4]),
    );
}

#[test]
fn corrupted_gradient_is_named() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut init = Initializer::new(11);
    let layer = RefCell::new(Linear::new("fc", 2, 2, &mut init).unwrap());
    let input = random_tensor(&mut rng, vec![3, 2]);
    let params: Vec<(String, Tensor)> = layer
        .borrow()
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut frag = |ps: &[(String, Tensor)], want: bool| {
        layer.borrow_mut().load_params(ps).unwrap();
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let x = g.input(input.clone());
        let y = layer.borrow().forward(&mut g, &mut bound, x);
        let yy = g.mul(y, y);
        let loss = g.mean_all(yy);
        let lv = g.value(loss).item();
        if want {
            let grads = g.backward(loss);
            let mut map: HashMap<String, Tensor> = bound.named_grads(&grads).into_iter().collect();
            // deliberately corrupt one component of fc.w (x2)
            let w = map.get_mut("fc.w").unwrap();
            w.data_mut()[0] *= 2.0;
            (lv, Some(map))
        } else {
            (lv, None)
        }
    };
    let err = gradcheck_strict(&mut frag, &params, TOL, STEP).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("fc.w"), "error should name fc.w: {msg}");
}
