//! WGAN-GP losses.
//!
//! * `L_g = E_z c(g(z))`; the generator descends `-L_g`.
//! * `L_c = -E_real c(x) + L_g + lambda * E[(|grad c(x_hat)| - 1)^2] + eps * E_real c(x)^2`
//!   with `x_hat = alpha * x + (1 - alpha) * g(z)`, one `alpha ~ U(0, 1)` per row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, ExprGraph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::tensor::Tensor;

/// Keeps the input-gradient norm differentiable when a row's gradient vanishes.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLossConfig {
    pub lambda_gp: f64,
    pub eps_drift: f64,
}

impl Default for GanLossConfig {
    fn default() -> Self {
        Self { lambda_gp: 10.0, eps_drift: 1e-2 }
    }
}

impl GanLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp >= 0.0) || !(self.eps_drift >= 0.0) {
            return Err(Error::InvalidSpec(format!("negative loss coefficients {self:?}")));
        }
        Ok(())
    }
}

/// A scalar loss inside its graph, with the handles the training loops use.
#[derive(Clone, Debug)]
pub struct LossGraph {
    pub graph: ExprGraph,
    pub loss: NodeId,
    pub gen_params: Vec<NodeId>,
    pub critic_params: Vec<NodeId>,
    /// Train-mode batch statistics of the generator.
    pub bn_stats: Vec<(usize, NodeId, NodeId)>,
    pub penalty: Option<NodeId>,
    pub drift: Option<NodeId>,
}

impl LossGraph {
    pub fn value(&self) -> Result<f64> {
        Ok(self.graph.eval(&Bindings::new(), &[self.loss])?[0].item())
    }
}

/// One interpolation weight per row, drawn from `U(0, 1)`.
pub fn interpolation_weights(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, 1, (0..n).map(|_| rng.gen::<f64>()).collect()).expect("sized")
}

/// Generator output; with `label_dim > 0` the trailing label block of `z`
/// is copied to the output unchanged.
fn build_generator(
    g: &mut ExprGraph,
    gen: &Network,
    z: NodeId,
    label_dim: usize,
) -> Result<(NodeId, Vec<NodeId>, Vec<(usize, NodeId, NodeId)>)> {
    let fwd = gen.build(g, z, Mode::Train, "gen")?;
    let out = if label_dim > 0 {
        let width = g.shape(z)[1];
        let labels = g.slice_cols(z, width - label_dim, width)?;
        g.concat_cols(fwd.output, labels)?
    } else {
        fwd.output
    };
    Ok((out, fwd.params, fwd.bn_stats))
}

fn check_critic_input(critic: &Network, width: usize) -> Result<()> {
    critic.spec().check_critic()?;
    if critic.input_width() != width {
        return Err(Error::Dimension { expected: critic.input_width(), got: width });
    }
    Ok(())
}

fn penalty_term(
    g: &mut ExprGraph,
    critic: &Network,
    critic_params: &[NodeId],
    real: NodeId,
    fake: NodeId,
    alpha: &Tensor,
) -> Result<NodeId> {
    let interp = g.lerp(real, fake, alpha)?;
    let scores = critic.build_with(g, interp, Mode::Eval, critic_params)?.output;
    let total = g.sum(scores);
    let grad = g.differentiate(total, &[interp])?[0];
    let n = g.shape(grad)[0];
    let sq = g.mul(grad, grad)?;
    let summed = g.sum_to(sq, &[n, 1])?;
    let floor = g.constant(Tensor::scalar(NORM_FLOOR));
    let floored = g.add(summed, floor)?;
    let norms = g.pow(floored, 0.5);
    let one = g.constant(Tensor::scalar(1.0));
    let dev = g.sub(norms, one)?;
    let dev_sq = g.mul(dev, dev)?;
    Ok(g.mean(dev_sq))
}

pub(crate) fn generator_loss_graph(critic: &Network, gen: &Network, z_batch: &Tensor, label_dim: usize) -> Result<LossGraph> {
    let mut g = ExprGraph::new();
    let z = g.constant(z_batch.clone());
    let (fake, gen_params, bn_stats) = build_generator(&mut g, gen, z, label_dim)?;
    check_critic_input(critic, g.shape(fake)[1])?;
    let critic_params = critic.declare_params(&mut g, "critic")?;
    let scores = critic.build_with(&mut g, fake, Mode::Eval, &critic_params)?.output;
    let loss = g.mean(scores);
    g.set_output("L_g", loss);
    Ok(LossGraph { graph: g, loss, gen_params, critic_params, bn_stats, penalty: None, drift: None })
}

pub(crate) fn critic_loss_graph(
    critic: &Network,
    gen: &Network,
    real_batch: &Tensor,
    z_batch: &Tensor,
    label_dim: usize,
    cfg: &GanLossConfig,
    alpha: &Tensor,
) -> Result<LossGraph> {
    cfg.validate()?;
    if real_batch.rows() != z_batch.rows() {
        return Err(Error::Shape(format!("{} real rows vs {} prior rows", real_batch.rows(), z_batch.rows())));
    }
    let mut g = ExprGraph::new();
    let z = g.constant(z_batch.clone());
    let (fake, gen_params, bn_stats) = build_generator(&mut g, gen, z, label_dim)?;
    check_critic_input(critic, g.shape(fake)[1])?;
    check_critic_input(critic, real_batch.cols())?;
    let real = g.constant(real_batch.clone());
    let critic_params = critic.declare_params(&mut g, "critic")?;
    let c_real = critic.build_with(&mut g, real, Mode::Eval, &critic_params)?.output;
    let c_fake = critic.build_with(&mut g, fake, Mode::Eval, &critic_params)?.output;
    let real_mean = g.mean(c_real);
    let fake_mean = g.mean(c_fake);
    let mut loss = g.sub(fake_mean, real_mean)?;
    let mut penalty = None;
    if cfg.lambda_gp > 0.0 {
        let gp = penalty_term(&mut g, critic, &critic_params, real, fake, alpha)?;
        let weighted = g.scale(gp, cfg.lambda_gp);
        loss = g.add(loss, weighted)?;
        penalty = Some(gp);
    }
    let sq = g.mul(c_real, c_real)?;
    let drift = g.mean(sq);
    if cfg.eps_drift > 0.0 {
        let weighted = g.scale(drift, cfg.eps_drift);
        loss = g.add(loss, weighted)?;
    }
    g.set_output("L_c", loss);
    Ok(LossGraph { graph: g, loss, gen_params, critic_params, bn_stats, penalty, drift: Some(drift) })
}

/// `L_g = mean_i critic(gen(z_i))`, with the generator in train mode.
pub fn generator_loss(critic: &Network, gen: &Network, z_batch: &Tensor) -> Result<LossGraph> {
    generator_loss_graph(critic, gen, z_batch, 0)
}

/// `E[(|grad critic(x_hat)| - 1)^2]` on row-wise interpolates of two batches.
/// Differentiable with respect to the critic parameters.
pub fn gradient_penalty(critic: &Network, real_batch: &Tensor, fake_batch: &Tensor, seed: u64) -> Result<LossGraph> {
    if real_batch.shape() != fake_batch.shape() {
        return Err(Error::Shape(format!("real {:?} vs fake {:?}", real_batch.shape(), fake_batch.shape())));
    }
    check_critic_input(critic, real_batch.cols())?;
    let mut g = ExprGraph::new();
    let real = g.constant(real_batch.clone());
    let fake = g.constant(fake_batch.clone());
    let critic_params = critic.declare_params(&mut g, "critic")?;
    let alpha = interpolation_weights(real_batch.rows(), seed);
    let gp = penalty_term(&mut g, critic, &critic_params, real, fake, &alpha)?;
    g.set_output("gp", gp);
    Ok(LossGraph {
        graph: g,
        loss: gp,
        gen_params: vec![],
        critic_params,
        bn_stats: vec![],
        penalty: Some(gp),
        drift: None,
    })
}

/// The full critic loss with gradient penalty and drift term.
pub fn critic_loss(
    critic: &Network,
    gen: &Network,
    real_batch: &Tensor,
    z_batch: &Tensor,
    cfg: &GanLossConfig,
    seed: u64,
) -> Result<LossGraph> {
    let alpha = interpolation_weights(real_batch.rows(), seed);
    critic_loss_graph(critic, gen, real_batch, z_batch, 0, cfg, &alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::nn::{Activation, MlpSpec};

    fn linear(w: &[f64], bias: f64) -> Network {
        let weight = Tensor::matrix(w.len(), 1, w.to_vec()).unwrap();
        Network::linear(weight, Tensor::vector(vec![bias]), Activation::None).unwrap()
    }

    /// A critic that outputs `k` everywhere.
    fn constant_critic(dim: usize, k: f64) -> Network {
        linear(&vec![0.0; dim], k)
    }

    fn batch(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn constant_critic_generator_loss() {
        let gen = Network::init(&MlpSpec::dense(&[2, 3, 2], Activation::Relu, Activation::Tanh).unwrap(), 1).unwrap();
        let z = batch(&[vec![0.1, 0.2], vec![0.3, -0.4], vec![0.0, 0.9]]);
        let l = generator_loss(&constant_critic(2, 1.7), &gen, &z).unwrap();
        assert!((l.value().unwrap() - 1.7).abs() < 1e-15);
    }

    #[test]
    fn single_row_generator_loss_is_the_score() {
        let gen = Network::init(&MlpSpec::dense(&[2, 3, 2], Activation::Relu, Activation::Tanh).unwrap(), 4).unwrap();
        let critic = Network::init(&MlpSpec::dense(&[2, 4, 1], Activation::Relu, Activation::None).unwrap(), 5).unwrap();
        let z = batch(&[vec![0.3, -0.6]]);
        let direct = critic.apply(&gen.forward(&z, Mode::Train).unwrap()).unwrap().item();
        assert_eq!(generator_loss(&critic, &gen, &z).unwrap().value().unwrap(), direct);
    }

    #[test]
    fn linear_fixture_generator_loss() {
        // gen(z) = A z with A = [[1, 2], [0, -1]] (row-vector convention z A^T),
        // critic(x) = w . x with w = (0.5, 2)
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 2.0, -1.0]).unwrap();
        let gen = Network::linear(a, Tensor::zeros(&[2]), Activation::None).unwrap();
        let critic = linear(&[0.5, 2.0], 0.0);
        let z = batch(&[vec![1.0, 1.0], vec![2.0, -1.0]]);
        // A z1 = (3, -1), A z2 = (0, 1); w.Az1 = -0.5, w.Az2 = 2
        let expected = 0.5 * (-0.5 + 2.0);
        assert!((generator_loss(&critic, &gen, &z).unwrap().value().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn unit_and_triple_linear_critic_penalty() {
        let real = batch(&[vec![0.3, 0.1], vec![-0.2, 0.5], vec![0.9, -0.9]]);
        let fake = batch(&[vec![-0.7, 0.0], vec![0.4, 0.4], vec![0.1, 0.2]]);
        for seed in 0..3 {
            let unit = gradient_penalty(&linear(&[0.6, 0.8], 0.3), &real, &fake, seed).unwrap();
            assert!(unit.value().unwrap() < 1e-20);
            let triple = gradient_penalty(&linear(&[1.8, 2.4], 0.0), &real, &fake, seed).unwrap();
            assert!((triple.value().unwrap() - 4.0).abs() < 1e-10);
        }
        assert!(gradient_penalty(&linear(&[1.0, 0.0], 0.0), &real, &batch(&[vec![0.0, 0.0]]), 0).is_err());
    }

    #[test]
    fn penalty_parameter_gradient_matches_finite_differences() {
        let critic = Network::init(&MlpSpec::dense(&[3, 6, 1], Activation::Tanh, Activation::None).unwrap(), 9).unwrap();
        let real = batch(&[vec![0.3, 0.1, -0.5], vec![-0.2, 0.5, 0.7]]);
        let fake = batch(&[vec![-0.7, 0.0, 0.2], vec![0.4, 0.4, -0.1]]);
        let gp = gradient_penalty(&critic, &real, &fake, 11).unwrap();
        let err = check_gradients(&gp.graph, &Bindings::new(), 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_critic_loss_terms() {
        let gen = Network::init(&MlpSpec::dense(&[2, 2], Activation::Tanh, Activation::Tanh).unwrap(), 2).unwrap();
        let real = batch(&[vec![0.1, 0.2], vec![0.5, 0.5]]);
        let z = batch(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let k = 3.0;
        let none = GanLossConfig { lambda_gp: 0.0, eps_drift: 0.0 };
        let v = critic_loss(&constant_critic(2, k), &gen, &real, &z, &none, 0).unwrap().value().unwrap();
        assert_eq!(v, 0.0);
        let drift = GanLossConfig { lambda_gp: 0.0, eps_drift: 1e-2 };
        let v = critic_loss(&constant_critic(2, k), &gen, &real, &z, &drift, 0).unwrap().value().unwrap();
        assert!((v - 1e-2 * k * k).abs() < 1e-15);
    }

    #[test]
    fn defaults() {
        let cfg = GanLossConfig::default();
        assert_eq!(cfg.lambda_gp, 10.0);
        assert_eq!(cfg.eps_drift, 1e-2);
        assert!(GanLossConfig { lambda_gp: -1.0, eps_drift: 0.0 }.validate().is_err());
    }

    #[test]
    fn shape_chain_errors() {
        let gen = Network::init(&MlpSpec::dense(&[2, 3], Activation::Tanh, Activation::Tanh).unwrap(), 2).unwrap();
        let critic = constant_critic(2, 0.0);
        assert!(generator_loss(&critic, &gen, &batch(&[vec![0.0, 0.0]])).is_err());
        let bn_critic = Network::init(
            &MlpSpec::new(vec![3, 1], vec![Activation::None], vec![true]).unwrap(),
            0,
        )
        .unwrap();
        assert!(generator_loss(&bn_critic, &gen, &batch(&[vec![0.0, 0.0], vec![1.0, 1.0]])).is_err());
        let real = batch(&[vec![0.1, 0.2, 0.3]]);
        let z = batch(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(critic_loss(&constant_critic(3, 0.0), &gen, &real, &z, &GanLossConfig::default(), 0).is_err());
    }
}
