//! Backpropagation against finite differences and other network invariants.

use dos_cva::nn::{fit, Activation, Network, NetworkConfig, TrainSchedule};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_loss(net: &Network, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let (out, _) = net.forward_cached(x.clone());
    (&out * c).sum()
}

/// Largest relative error between backprop and central differences.
fn gradient_error(cfg: NetworkConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(cfg.clone(), seed).unwrap();
    net.output_shift = (0..cfg.output_dim).map(|_| rng.random()).collect();
    net.output_scale = (0..cfg.output_dim).map(|_| 0.5 + rng.random::<f64>()).collect();
    let x = Array2::from_shape_fn((7, cfg.input_dim), |_| rng.random::<f64>() * 2.0 - 1.0);
    let c = Array2::from_shape_fn((7, cfg.output_dim), |_| rng.random::<f64>() * 2.0 - 1.0);
    let (_, cache) = net.forward_cached(x.clone());
    let grad = net.backward(&cache, &c);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..net.params.len() {
        let orig = net.params[i];
        net.params[i] = orig + h;
        let up = linear_loss(&net, &x, &c);
        net.params[i] = orig - h;
        let down = linear_loss(&net, &x, &c);
        net.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
    }
    worst
}

fn smooth_activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Sigmoid), Just(Activation::Identity)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decision_gradients_match_finite_differences(
        input in 1usize..5,
        output in 1usize..4,
        hidden in prop::collection::vec(1usize..8, 1..4),
        act in smooth_activation(),
        seed in any::<u64>(),
    ) {
        let err = gradient_error(NetworkConfig::decision(input, output, &hidden, act), seed);
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn regression_gradients_match_finite_differences(
        input in 1usize..5,
        output in 1usize..4,
        hidden in prop::collection::vec(1usize..8, 1..4),
        act in smooth_activation(),
        seed in any::<u64>(),
    ) {
        let err = gradient_error(NetworkConfig::regression(input, output, &hidden, act), seed);
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn decision_outputs_stay_in_unit_interval(
        seed in any::<u64>(),
        scale in 0.1f64..5.0,
    ) {
        let net = Network::new(NetworkConfig::decision(3, 2, &[30, 30, 30], Activation::Tanh), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((64, 3), |_| scale * (rng.random::<f64>() - 0.5));
        let out = net.forward(x.view()).unwrap();
        prop_assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn relu_gradients_match_away_from_kinks() {
    for seed in 0..8 {
        let err = gradient_error(NetworkConfig::regression(3, 2, &[6, 5], Activation::Relu), seed);
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let train = |seed: u64| {
        let cfg = NetworkConfig::regression(2, 1, &[8, 8], Activation::Tanh);
        let mut net = Network::new(cfg, seed).unwrap();
        let x = Array2::from_shape_fn((256, 2), |(i, j)| ((i * 7 + j * 3) % 17) as f64 / 17.0);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[0] - r[1]).collect();
        let rows: Vec<usize> = (0..256).collect();
        let xs = net.standardize(x.view());
        fit(&mut net, xs.view(), &rows, &TrainSchedule::new(32, 200), seed + 1, |idx, out, g| {
            let mut l = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                let e = out[[r, 0]] - y[i];
                l += e * e;
                g[[r, 0]] = 2.0 * e / idx.len() as f64;
            }
            l / idx.len() as f64
        })
        .unwrap();
        net
    };
    assert_eq!(train(5).params, train(5).params);
    assert_ne!(train(5).params, train(6).params);
}
