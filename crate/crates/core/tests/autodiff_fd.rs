use mind2mind::autodiff::{check_gradients, Bindings, ExprGraph};
use mind2mind::gan::{critic_loss, gradient_penalty, GanLossConfig};
use mind2mind::nn::{Activation, MlpSpec, Mode, Network};
use mind2mind::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Close to the cube root of machine epsilon, which balances truncation
/// against roundoff for central differences.
const EPS: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Depth 1 to 3, widths up to 16, random hidden activations and optional
/// batch norm on hidden layers.
fn random_spec(rng: &mut ChaCha8Rng, input: usize, output: usize, output_act: Activation, bn: bool) -> MlpSpec {
    let depth = rng.gen_range(1..=3);
    let mut widths = vec![input];
    widths.extend((1..depth).map(|_| rng.gen_range(1..=16)));
    widths.push(output);
    let mut acts: Vec<Activation> =
        (1..depth).map(|_| if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh }).collect();
    acts.push(output_act);
    let norms = (0..depth).map(|i| bn && i + 1 < depth && rng.gen_bool(0.5)).collect();
    MlpSpec::new(widths, acts, norms).unwrap()
}

/// Initialized weights plus random biases and batch-norm affines. Zero biases
/// would put dead relu units exactly on the kink, where the subgradient 0 and
/// central differences legitimately disagree.
fn random_net(rng: &mut ChaCha8Rng, spec: &MlpSpec) -> Network {
    let mut net = Network::init(spec, rng.gen()).unwrap();
    let mut params = Vec::new();
    for (name, t) in net.params() {
        let mut t = t.clone();
        if !name.ends_with("weight") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        params.push(t);
    }
    net.set_params(params).unwrap();
    net
}

#[test]
fn first_order_on_random_mlps() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (d_in, d_out) = (rng.gen_range(1..=8), rng.gen_range(1..=16));
        let spec = random_spec(&mut rng, d_in, d_out, Activation::Tanh, false);
        let net = random_net(&mut rng, &spec);
        let n = rng.gen_range(2..=6);
        let batch = random_tensor(&mut rng, n, d_in);
        let mut g = ExprGraph::new();
        let x = g.constant(batch);
        let out = net.build(&mut g, x, Mode::Train, "net").unwrap().output;
        let sq = g.pow(out, 2.0);
        let loss = g.mean(sq);
        g.set_output("loss", loss);
        worst = worst.max(check_gradients(&g, &Bindings::new(), EPS).unwrap());
    }
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn gradient_penalty_parameter_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.gen_range(1..=8);
        let spec = random_spec(&mut rng, d, 1, Activation::None, false);
        let critic = random_net(&mut rng, &spec);
        let n = rng.gen_range(1..=6);
        let (real, fake) = (random_tensor(&mut rng, n, d), random_tensor(&mut rng, n, d));
        let gp = gradient_penalty(&critic, &real, &fake, rng.gen()).unwrap();
        worst = worst.max(check_gradients(&gp.graph, &Bindings::new(), EPS).unwrap());
    }
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn full_critic_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let (z_dim, d) = (rng.gen_range(1..=4), rng.gen_range(1..=6));
        let spec = random_spec(&mut rng, z_dim, d, Activation::Tanh, false);
        let gen = random_net(&mut rng, &spec);
        let spec = random_spec(&mut rng, d, 1, Activation::None, false);
        let critic = random_net(&mut rng, &spec);
        let n = rng.gen_range(2..=5);
        let (real, z) = (random_tensor(&mut rng, n, d), random_tensor(&mut rng, n, z_dim));
        let cfg = GanLossConfig { lambda_gp: rng.gen_range(0.5..10.0), eps_drift: rng.gen_range(0.0..0.1) };
        let loss = critic_loss(&critic, &gen, &real, &z, &cfg, rng.gen()).unwrap();
        worst = worst.max(check_gradients(&loss.graph, &Bindings::new(), EPS).unwrap());
    }
    assert!(worst <= 1e-4, "{worst}");
}

/// Train-mode batch norm makes the bias feeding it a dead direction whose
/// exact gradient is zero, so finite-difference noise rules out a pure
/// relative comparison. Each coordinate must match within `1e-6` absolute or
/// `1e-4` relative.
#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..30 {
        let (d_in, d_out) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let spec = random_spec(&mut rng, d_in, d_out, Activation::Tanh, true);
        let net = random_net(&mut rng, &spec);
        let n = rng.gen_range(4..=8);
        let batch = random_tensor(&mut rng, n, d_in);
        let mut g = ExprGraph::new();
        let x = g.constant(batch);
        let fwd = net.build(&mut g, x, Mode::Train, "net").unwrap();
        let sq = g.pow(fwd.output, 2.0);
        let loss = g.mean(sq);
        let grads = g.differentiate(loss, &fwd.params).unwrap();
        let analytic = g.eval(&Bindings::new(), &grads).unwrap();
        for ((name, value), grad) in net.params().into_iter().zip(&analytic) {
            for k in 0..value.len() {
                let probe = |delta: f64| {
                    let mut shifted = value.clone();
                    shifted.data_mut()[k] += delta;
                    let b: Bindings = [(format!("net.{name}"), shifted)].into_iter().collect();
                    g.eval(&b, &[loss]).unwrap()[0].item()
                };
                let numeric = (probe(EPS) - probe(-EPS)) / (2.0 * EPS);
                let a = grad.data()[k];
                let diff = (a - numeric).abs();
                assert!(diff <= 1e-6 || diff <= 1e-4 * a.abs().max(numeric.abs()), "{name}[{k}]: {a} vs {numeric}");
            }
        }
    }
}

/// Differentiates `sum(tanh(x W)^3)` twice: the squared norm of its gradient
/// graph is checked against finite differences.
#[test]
fn gradient_of_gradient_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..20 {
        let d = rng.gen_range(1..=5);
        let mut g = ExprGraph::new();
        let w = g.param("w", random_tensor(&mut rng, d, 3)).unwrap();
        let x = g.constant(random_tensor(&mut rng, 4, d));
        let xw = g.matmul(x, w).unwrap();
        let t = g.tanh(xw);
        let cube = g.pow(t, 3.0);
        let f = g.sum(cube);
        let grad = g.differentiate(f, &[w]).unwrap()[0];
        let sq = g.mul(grad, grad).unwrap();
        let norm2 = g.sum(sq);
        g.set_output("n", norm2);
        let err = check_gradients(&g, &Bindings::new(), EPS).unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}

/// Closed form: for `f(x) = sum x_i^3` the gradient norm squared is
/// `9 sum x_i^4`, whose gradient is `36 x_i^3`.
#[test]
fn second_order_matches_polynomial_closed_form() {
    let xs = [0.5, -1.25, 2.0];
    let mut g = ExprGraph::new();
    let x = g.param("x", Tensor::vector(xs.to_vec())).unwrap();
    let cube = g.pow(x, 3.0);
    let f = g.sum(cube);
    let grad = g.differentiate(f, &[x]).unwrap()[0];
    let sq = g.mul(grad, grad).unwrap();
    let n = g.sum(sq);
    g.set_output("n", n);
    let d = g.gradient("n", &["x"]).unwrap().evaluate(&Bindings::new()).unwrap()["dn/dx"].clone();
    for (got, x) in d.data().iter().zip(xs) {
        let expected = 36.0 * x * x * x;
        assert!((got - expected).abs() <= 1e-9 * expected.abs());
    }
}

#[test]
fn gradient_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let x0 = random_tensor(&mut rng, 3, 2);
        let build = |coef_f: f64, coef_g: f64| {
            let mut g = ExprGraph::new();
            let x = g.param("x", x0.clone()).unwrap();
            let f = {
                let t = g.tanh(x);
                g.sum(t)
            };
            let h = {
                let c = g.pow(x, 3.0);
                g.mean(c)
            };
            let fa = g.scale(f, coef_f);
            let hb = g.scale(h, coef_g);
            let out = g.add(fa, hb).unwrap();
            g.set_output("y", out);
            g.gradient("y", &["x"]).unwrap().evaluate(&Bindings::new()).unwrap()["dy/dx"].clone()
        };
        let combined = build(a, b);
        let (gf, gh) = (build(1.0, 0.0), build(0.0, 1.0));
        for k in 0..combined.len() {
            let expected = a * gf.data()[k] + b * gh.data()[k];
            assert!((combined.data()[k] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}
