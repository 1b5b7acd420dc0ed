use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, ExprGraph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Layer widths include the input width, so a spec with `k` layers has
/// `k + 1` widths and `k` activation / batch-norm flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub batch_norm: Vec<bool>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>, batch_norm: Vec<bool>) -> Result<Self> {
        let spec = Self { layer_widths, activations, batch_norm };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense stack without batch norm: `hidden` on inner layers, `output` on the last.
    pub fn dense(layer_widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        let k = layer_widths.len().saturating_sub(1);
        let mut acts = vec![hidden; k];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new(layer_widths.to_vec(), acts, vec![false; k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidSpec("an MLP needs at least one layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidSpec("zero-width layer".into()));
        }
        let k = self.layer_widths.len() - 1;
        if self.activations.len() != k || self.batch_norm.len() != k {
            return Err(Error::InvalidSpec(format!(
                "{} layers but {} activations and {} batch-norm flags",
                k,
                self.activations.len(),
                self.batch_norm.len()
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn has_batch_norm(&self) -> bool {
        self.batch_norm.iter().any(|&b| b)
    }

    /// Critics must not carry batch norm: the gradient penalty needs a
    /// pointwise function of the input.
    pub fn check_critic(&self) -> Result<()> {
        if self.has_batch_norm() {
            return Err(Error::InvalidSpec("critic networks cannot use batch norm".into()));
        }
        if self.output_width() != 1 {
            return Err(Error::InvalidSpec(format!("critic output width {}", self.output_width())));
        }
        Ok(())
    }

    /// The spec of `self` followed by `next`.
    pub fn then(&self, next: &MlpSpec) -> Result<MlpSpec> {
        if self.output_width() != next.input_width() {
            return Err(Error::Dimension { expected: self.output_width(), got: next.input_width() });
        }
        let mut widths = self.layer_widths.clone();
        widths.extend_from_slice(&next.layer_widths[1..]);
        let mut acts = self.activations.clone();
        acts.extend_from_slice(&next.activations);
        let mut bn = self.batch_norm.clone();
        bn.extend_from_slice(&next.batch_norm);
        MlpSpec::new(widths, acts, bn)
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .zip(&self.batch_norm)
            .map(|(w, &bn)| w[0] * w[1] + w[1] + if bn { 2 * w[1] } else { 0 })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    fn fresh(width: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[width]),
            beta: Tensor::zeros(&[width]),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::ones(&[width]),
        }
    }

    /// Per-coordinate gain `gamma / sqrt(running_var + eps)` applied in eval mode.
    pub fn eval_gain(&self) -> Vec<f64> {
        self.gamma
            .data()
            .iter()
            .zip(self.running_var.data())
            .map(|(g, v)| g / (v + BN_EPS).sqrt())
            .collect()
    }
}

/// Weights are stored `(in, out)` so a layer computes `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: Option<BatchNorm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Handles produced when a network is added to a graph.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub output: NodeId,
    /// Parameter leaves in [`Network::params`] order.
    pub params: Vec<NodeId>,
    /// `(layer, batch mean, batch variance)` for train-mode batch norm.
    pub bn_stats: Vec<(usize, NodeId, NodeId)>,
}

impl Network {
    /// Random initialization: He-uniform for relu layers, Xavier-uniform
    /// otherwise, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = match spec.activations[i] {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                    bn: spec.batch_norm[i].then(|| BatchNorm::fresh(fan_out)),
                }
            })
            .collect();
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.n_layers() {
            return Err(Error::InvalidSpec(format!("{} layers for a {}-layer spec", layers.len(), spec.n_layers())));
        }
        for (i, (layer, w)) in layers.iter().zip(spec.layer_widths.windows(2)).enumerate() {
            if layer.weight.shape() != [w[0], w[1]] || layer.bias.shape() != [w[1]] {
                return Err(Error::InvalidSpec(format!("layer {i} weight/bias shapes do not match the spec")));
            }
            match (&layer.bn, spec.batch_norm[i]) {
                (Some(bn), true) => {
                    for t in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                        if t.shape() != [w[1]] {
                            return Err(Error::InvalidSpec(format!("layer {i} batch-norm shapes")));
                        }
                    }
                    if bn.running_var.data().iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::InvalidSpec(format!("layer {i} running variance must be positive")));
                    }
                }
                (None, false) => {}
                _ => return Err(Error::InvalidSpec(format!("layer {i} batch-norm presence mismatch"))),
            }
        }
        Ok(Self { spec, layers })
    }

    /// A single linear layer computing the identity on `dim` coordinates.
    pub fn identity(dim: usize) -> Result<Self> {
        let spec = MlpSpec::new(vec![dim, dim], vec![Activation::None], vec![false])?;
        Self::from_layers(spec, vec![Layer { weight: Tensor::eye(dim), bias: Tensor::zeros(&[dim]), bn: None }])
    }

    /// A single linear layer with the given `(in, out)` weight and bias.
    pub fn linear(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (i, o) = (weight.rows(), weight.cols());
        let spec = MlpSpec::new(vec![i, o], vec![activation], vec![false])?;
        Self::from_layers(spec, vec![Layer { weight, bias, bn: None }])
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// `self` followed by `next`, as one network.
    pub fn then(&self, next: &Network) -> Result<Network> {
        let spec = self.spec.then(&next.spec)?;
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        Network::from_layers(spec, layers)
    }

    /// Trainable tensors with their names, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("L{i}.weight"), &l.weight));
            out.push((format!("L{i}.bias"), &l.bias));
            if let Some(bn) = &l.bn {
                out.push((format!("L{i}.gamma"), &bn.gamma));
                out.push((format!("L{i}.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replaces trainable tensors, given in [`Network::params`] order.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let expected = self.params().len();
        if values.len() != expected {
            return Err(Error::Shape(format!("{} tensors for {} parameters", values.len(), expected)));
        }
        let mut it = values.into_iter();
        for l in &mut self.layers {
            let mut slots: Vec<&mut Tensor> = vec![&mut l.weight, &mut l.bias];
            if let Some(bn) = &mut l.bn {
                slots.push(&mut bn.gamma);
                slots.push(&mut bn.beta);
            }
            for slot in slots {
                let v = it.next().expect("counted");
                if v.shape() != slot.shape() {
                    return Err(Error::Shape(format!("param {:?} replaced by {:?}", slot.shape(), v.shape())));
                }
                *slot = v;
            }
        }
        Ok(())
    }

    /// Folds fresh batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(usize, Tensor, Tensor)]) {
        for (layer, mean, var) in stats {
            if let Some(bn) = &mut self.layers[*layer].bn {
                let blend = |run: &Tensor, batch: &Tensor| {
                    run.zip_map(batch, |r, b| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
                };
                bn.running_mean = blend(&bn.running_mean, mean);
                bn.running_var = blend(&bn.running_var, var);
            }
        }
    }

    /// Declares the trainable tensors as leaves `<prefix>.L<i>.<tensor>`, in
    /// [`Network::params`] order.
    pub fn declare_params(&self, g: &mut ExprGraph, prefix: &str) -> Result<Vec<NodeId>> {
        self.params()
            .into_iter()
            .map(|(name, t)| g.param(&format!("{prefix}.{name}"), t.clone()))
            .collect()
    }

    /// Adds the network to `g`, applied to node `x` of shape `(n, input_width)`.
    pub fn build(&self, g: &mut ExprGraph, x: NodeId, mode: Mode, prefix: &str) -> Result<ForwardNodes> {
        let params = self.declare_params(g, prefix)?;
        self.build_with(g, x, mode, &params)
    }

    /// Applies the network to `x` reusing previously declared parameter leaves,
    /// so several batches can share one set of weights in a graph.
    pub fn build_with(&self, g: &mut ExprGraph, x: NodeId, mode: Mode, params: &[NodeId]) -> Result<ForwardNodes> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::Dimension {
                expected: self.input_width(),
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        if params.len() != self.params().len() {
            return Err(Error::Shape(format!("{} parameter leaves for {} tensors", params.len(), self.params().len())));
        }
        if mode == Mode::Train && self.spec.has_batch_norm() && shape[0] < 2 {
            return Err(Error::InvalidArgument("train-mode batch norm needs at least 2 rows".into()));
        }
        let mut leaves = params.iter().copied();
        let mut bn_stats = Vec::new();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = leaves.next().expect("counted");
            let b = leaves.next().expect("counted");
            let xw = g.matmul(h, w)?;
            h = g.add(xw, b)?;
            if let Some(bn) = &layer.bn {
                let gamma = leaves.next().expect("counted");
                let beta = leaves.next().expect("counted");
                let normalized = match mode {
                    Mode::Train => {
                        let mean = g.mean_rows(h)?;
                        let centered = g.sub(h, mean)?;
                        let sq = g.mul(centered, centered)?;
                        let var = g.mean_rows(sq)?;
                        let eps = g.constant(Tensor::scalar(BN_EPS));
                        let shifted = g.add(var, eps)?;
                        let inv = g.pow(shifted, -0.5);
                        bn_stats.push((i, mean, var));
                        g.mul(centered, inv)?
                    }
                    Mode::Eval => {
                        let mean = g.constant(bn.running_mean.clone());
                        let inv = g.constant(bn.running_var.map(|v| 1.0 / (v + BN_EPS).sqrt()));
                        let centered = g.sub(h, mean)?;
                        g.mul(centered, inv)?
                    }
                };
                let scaled = g.mul(normalized, gamma)?;
                h = g.add(scaled, beta)?;
            }
            h = match self.spec.activations[i] {
                Activation::Relu => g.relu(h),
                Activation::Tanh => g.tanh(h),
                Activation::None => h,
            };
        }
        Ok(ForwardNodes { output: h, params: params.to_vec(), bn_stats })
    }

    /// Numeric forward pass on a `(n, input_width)` batch.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = ExprGraph::new();
        let x = g.input("x", batch.shape())?;
        let fwd = self.build(&mut g, x, mode, "net")?;
        let bindings: Bindings = [("x".to_string(), batch.clone())].into_iter().collect();
        Ok(g.eval(&bindings, &[fwd.output])?.remove(0))
    }

    /// Eval-mode forward pass: the network as a fixed map.
    pub fn apply(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch, Mode::Eval)
    }
}
