use proptest::prelude::*;
use satdev::nn::*;

fn dense_net(inputs: usize, outputs: usize, seed: u64) -> Network {
    init_network(
        Architecture::new(vec![inputs], vec![LayerSpec::dense(inputs, outputs)]),
        seed,
    )
    .unwrap()
}

fn set_dense(net: &mut Network, layer: usize, weights: &[f64], bias: &[f64]) {
    let p = net.params_mut()[layer].as_mut().unwrap();
    p.weight.data_mut().copy_from_slice(weights);
    p.bias.data_mut().copy_from_slice(bias);
}

#[test]
fn init_is_deterministic_per_seed() {
    let arch = Architecture::micro_net(16, &MicroNetOptions::default());
    let a = init_network(arch.clone(), 3).unwrap();
    let b = init_network(arch.clone(), 3).unwrap();
    let c = init_network(arch, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn init_weights_follow_stated_gaussian() {
    let net = dense_net(1000, 100, 9);
    let w: Vec<f64> = net.weights().collect();
    assert_eq!(w.len(), 100_000);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 3.0 * 0.005 / n.sqrt(), "mean {mean}");
    assert!((std - 0.005).abs() < 0.05 * 0.005, "std {std}");
    // biases and momentum start at zero
    let p = net.params()[0].as_ref().unwrap();
    assert!(p.bias.data().iter().all(|&b| b == 0.0));
    assert!(p.weight_velocity.data().iter().all(|&b| b == 0.0));
}

#[test]
fn inconsistent_chain_is_rejected() {
    let arch = Architecture::new(
        vec![1, 8, 8],
        vec![LayerSpec::conv(1, 2, 3), LayerSpec::dense(10, 1)],
    );
    assert!(matches!(
        init_network(arch, 0),
        Err(NnError::Specification { index: 1, .. })
    ));
    let too_big = Architecture::new(vec![1, 2, 2], vec![LayerSpec::conv(1, 1, 3)]);
    assert!(init_network(too_big, 0).is_err());
    let bad_dropout = Architecture::new(vec![3], vec![LayerSpec::Dropout { p: 1.0 }]);
    assert!(init_network(bad_dropout, 0).is_err());
}

#[test]
fn relu_forward() {
    let net = init_network(Architecture::new(vec![2], vec![LayerSpec::Relu]), 0).unwrap();
    let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
    let y = net.forward(&x, Mode::Eval).unwrap();
    assert_eq!(y.data(), &[0.0, 2.0]);
}

#[test]
fn identity_kernel_conv_passes_input_through() {
    let mut net = init_network(
        Architecture::new(vec![1, 3, 4], vec![LayerSpec::conv(1, 1, 1)]),
        0,
    )
    .unwrap();
    set_dense(&mut net, 0, &[1.0], &[0.0]);
    let x = Tensor::new(vec![1, 1, 3, 4], (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
    let y = net.forward(&x, Mode::Eval).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn all_ones_three_by_three_conv() {
    let mut net = init_network(
        Architecture::new(vec![1, 3, 3], vec![LayerSpec::conv(1, 1, 3)]),
        0,
    )
    .unwrap();
    set_dense(&mut net, 0, &[1.0; 9], &[0.0]);
    let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
    let y = net.forward(&x, Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[1, 1]);
    assert_eq!(y.data(), &[9.0]);
}

#[test]
fn strided_padded_conv_halves_extent() {
    let net = init_network(
        Architecture::new(vec![1, 8, 8], vec![LayerSpec::conv_down(1, 2)]),
        0,
    )
    .unwrap();
    assert_eq!(net.output_width(), 2 * 4 * 4);
}

#[test]
fn forward_rejects_wrong_extent() {
    let net = dense_net(4, 2, 0);
    let x = Tensor::zeros(&[2, 5]);
    assert!(matches!(
        net.forward(&x, Mode::Eval),
        Err(NnError::ShapeMismatch { .. })
    ));
}

#[test]
fn dropout_only_in_training() {
    let net = init_network(
        Architecture::new(vec![64], vec![LayerSpec::Dropout { p: 0.5 }]),
        0,
    )
    .unwrap();
    let x = Tensor::filled(&[1, 64], 1.0);
    assert_eq!(net.forward(&x, Mode::Eval).unwrap().data(), x.data());
    let y = net.forward(&x, Mode::Train { seed: 1 }).unwrap();
    assert!(y.data().iter().any(|&v| v == 0.0));
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    assert_eq!(y, net.forward(&x, Mode::Train { seed: 1 }).unwrap());
}

#[test]
fn euclidean_loss_examples() {
    let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let (l, g) = euclidean_loss(&t, &t).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.data().iter().all(|&v| v == 0.0));

    let mut p = vec![0.0; 16];
    p[0] = 1.0;
    let pred = Tensor::new(vec![1, 16], p).unwrap();
    let (l, _) = euclidean_loss(&pred, &Tensor::zeros(&[1, 16])).unwrap();
    assert_eq!(l, 0.5);

    let mut p = vec![0.0; 32];
    p[21] = 3.0;
    let pred = Tensor::new(vec![2, 16], p).unwrap();
    let (l, g) = euclidean_loss(&pred, &Tensor::zeros(&[2, 16])).unwrap();
    assert_eq!(l, 2.25);
    assert_eq!(g.data()[21], 1.5);

    assert!(euclidean_loss(&pred, &Tensor::zeros(&[1, 16])).is_err());
}

#[test]
fn regularized_objective_examples() {
    let mut net = dense_net(1, 1, 0);
    set_dense(&mut net, 0, &[0.0], &[5.0]);
    assert_eq!(regularized_objective(&net, 1.25, 0.005), 1.25);
    set_dense(&mut net, 0, &[2.0], &[5.0]);
    assert!((regularized_objective(&net, 0.0, 0.005) - 0.01).abs() < 1e-15);
    set_dense(&mut net, 0, &[4.0], &[5.0]);
    assert!((regularized_objective(&net, 0.0, 0.005) - 0.04).abs() < 1e-15);
}

fn grads_for(net: &Network, w: f64, b: f64) -> Gradients {
    let mut g = Gradients {
        layers: net
            .params()
            .iter()
            .map(|p| {
                p.as_ref().map(|p| ParamGrad {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
            })
            .collect(),
    };
    let pg = g.layers[0].as_mut().unwrap();
    pg.weight.data_mut().iter_mut().for_each(|v| *v = w);
    pg.bias.data_mut().iter_mut().for_each(|v| *v = b);
    g
}

fn plain(lr: f64, d: f64) -> SgdConfig {
    SgdConfig {
        learning_rate: lr,
        gamma: 1.0,
        momentum: 0.0,
        weight_decay: d,
        batch_size: 1,
        step_interval: 1,
    }
}

#[test]
fn sgd_step_examples() {
    let mut net = dense_net(1, 1, 0);
    set_dense(&mut net, 0, &[1.0], &[0.0]);
    let before = net.clone();
    net.sgd_step(&grads_for(&net, 0.0, 0.0), &plain(0.1, 0.0), 0).unwrap();
    assert_eq!(net, before);

    net.sgd_step(&grads_for(&net, 1.0, 0.0), &plain(0.1, 0.0), 0).unwrap();
    assert!((net.params()[0].as_ref().unwrap().weight.data()[0] - 0.9).abs() < 1e-15);

    set_dense(&mut net, 0, &[1.0], &[1.0]);
    net.clear_momentum();
    net.sgd_step(&grads_for(&net, 0.0, 0.0), &plain(0.1, 0.005), 0).unwrap();
    let p = net.params()[0].as_ref().unwrap();
    assert!((p.weight.data()[0] - 0.9995).abs() < 1e-15);
    // biases are not decayed
    assert_eq!(p.bias.data()[0], 1.0);
}

#[test]
fn sgd_momentum_accumulates() {
    let mut net = dense_net(1, 1, 0);
    set_dense(&mut net, 0, &[0.0], &[0.0]);
    let cfg = SgdConfig {
        momentum: 0.8,
        ..plain(1.0, 0.0)
    };
    let g = grads_for(&net, 1.0, 0.0);
    net.sgd_step(&g, &cfg, 0).unwrap();
    net.sgd_step(&g, &cfg, 1).unwrap();
    // v1 = -1, v2 = -0.8 - 1
    assert!((net.params()[0].as_ref().unwrap().weight.data()[0] + 2.8).abs() < 1e-12);
}

#[test]
fn sgd_reports_non_finite_layer() {
    let arch = Architecture::new(
        vec![2],
        vec![LayerSpec::dense(2, 2), LayerSpec::Relu, LayerSpec::dense(2, 1)],
    );
    let mut net = init_network(arch, 0).unwrap();
    let x = Tensor::filled(&[1, 2], 1.0);
    let (_, mut g) = net
        .loss_and_gradients(&x, &Tensor::zeros(&[1, 1]), Mode::Eval)
        .unwrap();
    g.layers[2].as_mut().unwrap().bias.data_mut()[0] = f64::NAN;
    assert!(matches!(
        net.sgd_step(&g, &plain(0.1, 0.0), 0),
        Err(NnError::NonFinite { layer: 2 })
    ));
}

#[test]
fn config_validation() {
    assert!(SgdConfig::default().validate().is_ok());
    let d = SgdConfig::default();
    assert_eq!(d.learning_rate, 1e-6);
    assert_eq!(d.gamma, 0.2);
    assert_eq!(d.momentum, 0.8);
    assert_eq!(d.weight_decay, 0.005);
    assert_eq!(d.batch_size, 32);
    assert!(SgdConfig { gamma: 0.0, ..d.clone() }.validate().is_err());
    assert!(SgdConfig { momentum: 1.0, ..d.clone() }.validate().is_err());
    assert!(SgdConfig { batch_size: 0, ..d.clone() }.validate().is_err());
    assert!(SgdConfig { learning_rate: 0.0, ..d }.validate().is_err());
}

fn random_batch(shape: &[usize], seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn grad_check_linear_network_is_exact() {
    let mut net = dense_net(5, 3, 2);
    // Larger weights so the check is not dominated by the floor.
    for w in net.params_mut()[0].as_mut().unwrap().weight.data_mut() {
        *w *= 100.0;
    }
    let x = random_batch(&[4, 5], 1);
    let y = random_batch(&[4, 3], 2);
    let r = grad_check(&net, &x, &y, &GradCheckOptions::default()).unwrap();
    assert!(r.max_relative_error < 1e-8, "{r:?}");
    assert_eq!(r.checked, 18);
}

#[test]
fn grad_check_conv_fc_network() {
    let arch = Architecture::new(
        vec![2, 6, 6],
        vec![
            LayerSpec::conv(2, 3, 3).with_init_std(0.4),
            LayerSpec::Relu,
            LayerSpec::dense(3 * 4 * 4, 4).with_init_std(0.3),
            LayerSpec::Relu,
            LayerSpec::dense(4, 2).with_init_std(0.3),
        ],
    );
    let net = init_network(arch, 5).unwrap();
    let x = random_batch(&[3, 2, 6, 6], 3);
    let y = random_batch(&[3, 2], 4);
    let r = grad_check(&net, &x, &y, &GradCheckOptions::default()).unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
    assert!(r.checked > 40);
}

#[test]
fn grad_check_flags_corrupted_gradient() {
    let arch = Architecture::new(
        vec![4],
        vec![
            LayerSpec::dense(4, 3).with_init_std(0.5),
            LayerSpec::Relu,
            LayerSpec::dense(3, 2).with_init_std(0.5),
        ],
    );
    let net = init_network(arch, 1).unwrap();
    let x = random_batch(&[5, 4], 8);
    let y = random_batch(&[5, 2], 9);
    let opts = GradCheckOptions::default();
    let mut g = objective_gradients(&net, &x, &y, opts.weight_decay).unwrap();
    g.scale(2.0);
    let r = grad_check_against(&net, &x, &y, &g, &opts).unwrap();
    assert!((r.max_relative_error - 1.0).abs() < 0.05, "{r:?}");
}

#[test]
fn network_json_round_trip_is_lossless() {
    let arch = Architecture::micro_net(16, &MicroNetOptions::default());
    let mut net = init_network(arch, 12).unwrap();
    net.set_decay_multiplier(0, 0.5);
    let x = random_batch(&[2, 1, 16, 16], 1);
    let y = random_batch(&[2, 16], 2);
    let (_, g) = net.loss_and_gradients(&x, &y, Mode::Eval).unwrap();
    net.sgd_step(&g, &SgdConfig { learning_rate: 0.01, ..Default::default() }, 0)
        .unwrap();
    let back = Network::from_json(&net.to_json()).unwrap();
    assert_eq!(back, net);
    assert!(Network::from_json("{\"format\":\"other\"}").is_err());
}

#[test]
fn penultimate_boundary_of_micro_net() {
    let arch = Architecture::micro_net(32, &MicroNetOptions::default());
    let b = arch.penultimate_boundary().unwrap();
    assert!(matches!(arch.layers[b], LayerSpec::Dense { outputs: 16, .. }));
    let single = Architecture::new(vec![3], vec![LayerSpec::dense(3, 1)]);
    assert!(single.penultimate_boundary().is_none());
}

proptest! {
    #[test]
    fn step_policy_matches_formula(t in 0u64..100_000, interval in 1u64..5_000) {
        let cfg = SgdConfig { step_interval: interval, ..Default::default() };
        let expected = 1e-6 * 0.2f64.powi((t / interval) as i32);
        prop_assert_eq!(cfg.learning_rate_at(t), expected);
    }

    #[test]
    fn loss_is_permutation_equivariant_and_nonnegative(
        rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 2..6),
        rot in 0usize..5,
    ) {
        let n = rows.len();
        let pred = Tensor::new(vec![n, 3], rows.iter().flat_map(|r| r[..3].to_vec()).collect()).unwrap();
        let target = Tensor::new(vec![n, 3], rows.iter().flat_map(|r| r[3..].to_vec()).collect()).unwrap();
        let (l, _) = euclidean_loss(&pred, &target).unwrap();
        prop_assert!(l >= 0.0);
        let k = rot % n;
        let perm = |t: &Tensor| {
            let mut d = Vec::new();
            for i in 0..n { d.extend_from_slice(t.row((i + k) % n)); }
            Tensor::new(vec![n, 3], d).unwrap()
        };
        let (lp, _) = euclidean_loss(&perm(&pred), &perm(&target)).unwrap();
        prop_assert!((l - lp).abs() < 1e-12);
        let (l0, _) = euclidean_loss(&pred, &pred).unwrap();
        prop_assert_eq!(l0, 0.0);
        if pred != target { prop_assert!(l > 0.0); }
    }

    #[test]
    fn small_step_never_increases_convex_loss(seed in 0u64..500) {
        let mut net = dense_net(3, 2, seed);
        let x = random_batch(&[6, 3], seed + 1);
        let y = random_batch(&[6, 2], seed + 2);
        let (before, g) = net.loss_and_gradients(&x, &y, Mode::Eval).unwrap();
        net.sgd_step(&g, &plain(0.05, 0.0), 0).unwrap();
        let (after, _) = net.loss_and_gradients(&x, &y, Mode::Eval).unwrap();
        prop_assert!(after <= before + 1e-15);
    }

    #[test]
    fn grad_check_holds_for_random_small_nets(seed in 0u64..20) {
        let arch = Architecture::new(
            vec![1, 5, 5],
            vec![
                LayerSpec::conv(1, 2, 2).with_init_std(0.5),
                LayerSpec::Relu,
                LayerSpec::dense(2 * 4 * 4, 3).with_init_std(0.3),
            ],
        );
        let net = init_network(arch, seed).unwrap();
        let x = random_batch(&[2, 1, 5, 5], seed + 100);
        let y = random_batch(&[2, 3], seed + 200);
        let r = grad_check(&net, &x, &y, &GradCheckOptions::default()).unwrap();
        prop_assert!(r.max_relative_error < 1e-4);
    }
}
