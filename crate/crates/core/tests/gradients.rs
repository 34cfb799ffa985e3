mod common;

use common::{naive_conv2d, softmax_linear_input_grad, MicroNet};
use proptest::prelude::*;
use shapebias_core::model::{Architecture, InputNormalization, InputSize, Network, NetworkConfig};
use shapebias_core::saliency::log_prob_gradient;
use shapebias_core::{Tape, Tensor};

#[test]
fn random_micro_nets_match_finite_differences() {
    for seed in 0..20 {
        let (err, skipped, compared) = common::micro_net_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
        assert!(skipped * 100 <= compared, "seed {seed}: {skipped} kinks of {compared}");
    }
}

#[test]
fn conv_forward_matches_direct_loops() {
    for seed in 100..130 {
        let net = MicroNet::random(seed);
        let mut tape = Tape::new();
        let x = tape.constant(net.x.clone());
        let k = tape.constant(net.kernel.clone());
        let b = tape.constant(net.bias.clone());
        let y = tape.conv2d(x, k, b, net.stride, net.pad).unwrap();
        let oracle = naive_conv2d(&net.x, &net.kernel, &net.bias, net.stride, net.pad);
        assert_eq!(tape.value(y).shape(), oracle.shape());
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12);
    }
}

#[test]
fn softmax_linear_closed_form() {
    let cfg = NetworkConfig {
        input: InputSize { channels: 3, height: 4, width: 4 },
        architecture: Architecture::Mlp { hidden: vec![] },
        class_count: 5,
        input_normalization: InputNormalization::IDENTITY,
        seed: 3,
    };
    let net = Network::build(cfg).unwrap();
    let x = Tensor::new(vec![3, 4, 4], (0..48).map(|i| ((i * 37) % 11) as f64 / 11.0).collect()).unwrap();
    for class in 0..5 {
        let g = log_prob_gradient(&net, &x, class).unwrap();
        let oracle = softmax_linear_input_grad(x.data(), net.param("head.weight").unwrap(), net.param("head.bias").unwrap(), class);
        for (a, b) in g.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn two_class_gradient_is_weight_difference() {
    // ∇ log p₀ = (1 − p₀)(w₀ − w₁) for two classes.
    let cfg = NetworkConfig {
        input: InputSize { channels: 1, height: 2, width: 2 },
        architecture: Architecture::Mlp { hidden: vec![] },
        class_count: 2,
        input_normalization: InputNormalization::IDENTITY,
        seed: 9,
    };
    let net = Network::build(cfg).unwrap();
    let x = Tensor::new(vec![1, 2, 2], vec![0.1, 0.7, 0.4, 0.9]).unwrap();
    let p0 = net.class_probabilities(&x.clone().reshape(&[1, 1, 2, 2]).unwrap()).unwrap().data()[0];
    let w = net.param("head.weight").unwrap().data();
    let g = log_prob_gradient(&net, &x, 0).unwrap();
    for d in 0..4 {
        let expect = (1.0 - p0) * (w[d * 2] - w[d * 2 + 1]);
        assert!((g.data()[d] - expect).abs() < 1e-10);
    }
}

proptest! {
    #[test]
    fn gradient_of_sum_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        // d/dx Σ (a·x + b·x) = a + b for every coordinate.
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![0.3, -0.2, 1.5]));
        let ax = tape.scale(x, a).unwrap();
        let bx = tape.scale(x, b).unwrap();
        let s = tape.add(ax, bx).unwrap();
        let total = tape.sum(s).unwrap();
        let g = tape.backward(total).unwrap();
        for v in g.get(x).unwrap().data() {
            prop_assert!((v - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_rows_normalize(v in proptest::collection::vec(-50.0f64..50.0, 2..8)) {
        let n = v.len();
        let lp = shapebias_core::autodiff::log_softmax_rows(&Tensor::new(vec![1, n], v).unwrap());
        let total: f64 = lp.data().iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
