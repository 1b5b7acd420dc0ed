use std::time::Instant;

use mind2mind::autodiff::Bindings;
use mind2mind::gan::{
    critic_loss, gradient_penalty, train_conditional, train_wgan, ClockMode, ConditionalGenerator, GanLossConfig,
    PriorSpec, TrainConfig,
};
use mind2mind::nn::{Activation, AdamState, MlpSpec, Network, GAN_BETAS};
use mind2mind::ot::EmpiricalMeasure;
use mind2mind::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(widths: &[usize], hidden: Activation, output: Activation, seed: u64) -> Network {
    Network::init(&MlpSpec::dense(widths, hidden, output).unwrap(), seed).unwrap()
}

fn column_means(t: &Tensor) -> Vec<f64> {
    (0..t.cols()).map(|c| (0..t.rows()).map(|r| t.row(r)[c]).sum::<f64>() / t.rows() as f64).collect()
}

/// The same network with `k` added to its output bias.
fn shifted(critic: &Network, k: f64) -> Network {
    let mut params = critic.param_tensors();
    let last = params.len() - 1;
    params[last].data_mut()[0] += k;
    let mut out = critic.clone();
    out.set_params(params).unwrap();
    out
}

#[test]
fn point_mass_target_is_reached() {
    let v = [0.5, -0.3];
    let target = EmpiricalMeasure::from_points(&vec![v.to_vec(); 64]).unwrap();
    let gen = dense(&[2, 32, 32, 2], Activation::Relu, Activation::Tanh, 1);
    let critic = dense(&[2, 32, 32, 1], Activation::Relu, Activation::None, 2);
    let prior = PriorSpec::unit_box(2);
    // 64 atoms in batches of 32 with 5 critic steps give one generator step per epoch
    let cfg = TrainConfig { batch_size: 32, epochs: 500, seed: 3, clock: ClockMode::Off, ..TrainConfig::new(prior.clone()) };
    assert_eq!(cfg.gen_steps_per_epoch(64), 1);
    let (trained, _, history) = train_wgan(&target, &gen, &critic, &GanLossConfig::default(), &cfg).unwrap();
    assert_eq!(history.records.last().unwrap().step, 500);
    let z = prior.sample(1000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mean = column_means(&trained.apply(&z).unwrap());
    let err = ((mean[0] - v[0]).powi(2) + (mean[1] - v[1]).powi(2)).sqrt();
    assert!(err < 0.1, "generated mean {mean:?}");
}

#[test]
fn constants_cancel_without_drift_and_are_penalized_with_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let d = rng.gen_range(1..=4);
        let gen = dense(&[2, 8, d], Activation::Relu, Activation::Tanh, rng.gen());
        let critic = dense(&[d, 8, 1], Activation::Tanh, Activation::None, rng.gen());
        let (real, z) = (random_tensor(&mut rng, 6, d), random_tensor(&mut rng, 6, 2));
        let seed = rng.gen();
        let value = |c: &Network, cfg: &GanLossConfig| critic_loss(c, &gen, &real, &z, cfg, seed).unwrap().value().unwrap();

        let plain = GanLossConfig { lambda_gp: 0.0, eps_drift: 0.0 };
        let base = value(&critic, &plain);
        for k in [-50.0, -1.0, 0.3, 7.0, 400.0] {
            assert!((value(&shifted(&critic, k), &plain) - base).abs() <= 1e-9 * (1.0 + k.abs()));
        }
        // the penalty is unaffected by constants, so it may stay on
        let drift = GanLossConfig { lambda_gp: 10.0, eps_drift: 1e-2 };
        let grow: Vec<f64> = [10.0, 100.0, 1000.0, 10000.0].iter().map(|&k| value(&shifted(&critic, k), &drift)).collect();
        assert!(grow.windows(2).all(|w| w[1] > w[0]), "{grow:?}");
        let shrink: Vec<f64> = [-10.0, -100.0, -1000.0].iter().map(|&k| value(&shifted(&critic, k), &drift)).collect();
        assert!(shrink.windows(2).all(|w| w[1] > w[0]), "{shrink:?}");
    }
}

#[test]
fn penalty_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let d = rng.gen_range(1..=6);
        let critic = dense(&[d, rng.gen_range(1..=12), 1], Activation::Relu, Activation::None, rng.gen());
        let n = rng.gen_range(1..=8);
        let gp = gradient_penalty(&critic, &random_tensor(&mut rng, n, d), &random_tensor(&mut rng, n, d), rng.gen())
            .unwrap();
        assert!(gp.value().unwrap() >= 0.0);
    }
}

#[test]
fn one_small_adam_step_decreases_the_critic_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let d = rng.gen_range(1..=4);
        let gen = dense(&[2, 6, d], Activation::Tanh, Activation::Tanh, rng.gen());
        let critic = dense(&[d, 6, 6, 1], Activation::Tanh, Activation::None, rng.gen());
        let (real, z) = (random_tensor(&mut rng, 8, d), random_tensor(&mut rng, 8, 2));
        let cfg = GanLossConfig::default();
        let seed = rng.gen();

        let mut lg = critic_loss(&critic, &gen, &real, &z, &cfg, seed).unwrap();
        let before = lg.value().unwrap();
        let grads = lg.graph.differentiate(lg.loss, &lg.critic_params).unwrap();
        let grads = lg.graph.eval(&Bindings::new(), &grads).unwrap();
        let params = critic.param_tensors();
        let adam = AdamState::new(1e-6, GAN_BETAS, &params).unwrap();
        let (stepped, _) = adam.step(&params, &grads).unwrap();
        let mut updated = critic.clone();
        updated.set_params(stepped).unwrap();
        let after = critic_loss(&updated, &gen, &real, &z, &cfg, seed).unwrap().value().unwrap();
        assert!(after < before, "{before} -> {after}");
    }
}

#[test]
fn conditional_generator_separates_labels() {
    // x = -1 under label A, x = +1 under label B
    let rows: Vec<Vec<f64>> =
        (0..200).map(|i| if i % 2 == 0 { vec![-1.0, 1.0, 0.0] } else { vec![1.0, 0.0, 1.0] }).collect();
    let data = EmpiricalMeasure::from_points(&rows).unwrap();
    let prior = PriorSpec::unit_box(1);
    let gen = dense(&[3, 16, 16, 1], Activation::Relu, Activation::Tanh, 8);
    let critic = dense(&[2 + 1, 16, 16, 1], Activation::Relu, Activation::None, 9);
    let cfg = TrainConfig { batch_size: 50, epochs: 150, seed: 10, clock: ClockMode::Off, ..TrainConfig::new(prior.clone()) };
    let (trained, _, _) = train_conditional(&data, &gen, &critic, &GanLossConfig::default(), &cfg).unwrap();
    let cond = ConditionalGenerator::new(trained, 2).unwrap();

    let z = prior.sample(500, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let label = |l: [f64; 2]| Tensor::from_rows(&vec![l.to_vec(); 500]).unwrap();
    let mean_a = column_means(&cond.generate(&z, &label([1.0, 0.0])).unwrap())[0];
    let mean_b = column_means(&cond.generate(&z, &label([0.0, 1.0])).unwrap())[0];
    assert!(mean_a < mean_b, "A {mean_a} B {mean_b}");
}

#[test]
fn conditional_labels_pass_through_untrained_and_trained() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let (z_dim, labels, out) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=3));
        let net = dense(&[z_dim + labels, 8, out], Activation::Relu, Activation::Tanh, rng.gen());
        let gen = ConditionalGenerator::new(net, labels).unwrap();
        let z = random_tensor(&mut rng, 30, z_dim);
        let l = random_tensor(&mut rng, 30, labels);
        let rows = gen.generate(&z, &l).unwrap();
        for i in 0..30 {
            assert_eq!(&rows.row(i)[out..], l.row(i));
        }
    }
}

/// Seconds per generator step (including its critic steps), best of
/// `repeats` short runs.
fn seconds_per_step(data: &EmpiricalMeasure, gen: &Network, critic: &Network, prior: &PriorSpec, repeats: usize) -> f64 {
    let cfg = TrainConfig { batch_size: 128, epochs: 2, clock: ClockMode::Off, ..TrainConfig::new(prior.clone()) };
    let steps = (cfg.gen_steps_per_epoch(data.len()) * cfg.epochs) as f64;
    (0..repeats)
        .map(|_| {
            let started = Instant::now();
            train_wgan(data, gen, critic, &GanLossConfig::default(), &cfg).unwrap();
            started.elapsed().as_secs_f64() / steps
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn mind_steps_are_cheaper_than_composed_steps() {
    // the 28x28 widths: mind generator 128 -> 512bn -> 512bn -> 256 and critic
    // 256 -> 256 -> 256 -> 1, wrapped by a dense 784 <-> 512 <-> 256 autoencoder
    let (data_dim, latent, z_dim) = (784, 256, 128);
    let mind_gen = MlpSpec::new(
        vec![z_dim, 512, 512, latent],
        vec![Activation::Relu, Activation::Relu, Activation::Tanh],
        vec![true, true, false],
    )
    .unwrap();
    let mind_critic = MlpSpec::dense(&[latent, 256, 256, 1], Activation::Relu, Activation::None).unwrap();
    let encoder = MlpSpec::dense(&[data_dim, 512, latent], Activation::Relu, Activation::Tanh).unwrap();
    let decoder = MlpSpec::dense(&[latent, 512, data_dim], Activation::Relu, Activation::Tanh).unwrap();
    let prior = PriorSpec::gaussian(z_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 5 * 128;
    let images = EmpiricalMeasure::uniform(random_tensor(&mut rng, n, data_dim)).unwrap();
    let codes = EmpiricalMeasure::uniform(random_tensor(&mut rng, n, latent)).unwrap();

    let mind = seconds_per_step(
        &codes,
        &Network::init(&mind_gen, 1).unwrap(),
        &Network::init(&mind_critic, 2).unwrap(),
        &prior,
        3,
    );
    let composed = seconds_per_step(
        &images,
        &Network::init(&mind_gen.then(&decoder).unwrap(), 1).unwrap(),
        &Network::init(&encoder.then(&mind_critic).unwrap(), 2).unwrap(),
        &prior,
        2,
    );
    assert!(composed >= 3.0 * mind, "mind {mind:.4}s vs composed {composed:.4}s per step");
}
