use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{HistoryRecord, TrainHistory};
use super::loss::{critic_loss_graph, generator_loss_graph, GanLossConfig};
use super::prior::PriorSpec;
use crate::autodiff::{Bindings, NodeId};
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpSpec, Network, AUTOENCODER_BETAS, DEFAULT_LR, GAN_BETAS};
use crate::ot::EmpiricalMeasure;
use crate::tensor::Tensor;

/// Whether histories record elapsed time. `Off` writes zeros so that
/// repeated runs produce identical histories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Wall,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub n_critic: usize,
    pub epochs: usize,
    pub seed: u64,
    pub prior: PriorSpec,
    /// Generator steps between loss records.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Generator steps between metric evaluations; 0 means once per epoch.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub clock: ClockMode,
}

fn default_log_every() -> usize {
    10
}

impl TrainConfig {
    pub fn new(prior: PriorSpec) -> Self {
        Self {
            lr: DEFAULT_LR,
            betas: GAN_BETAS,
            batch_size: 128,
            n_critic: 5,
            epochs: 10,
            seed: 0,
            prior,
            log_every: default_log_every(),
            eval_every: 0,
            clock: ClockMode::Wall,
        }
    }

    /// Autoencoder training settings. The prior is unused there.
    pub fn autoencoder() -> Self {
        Self { betas: AUTOENCODER_BETAS, ..Self::new(PriorSpec::unit_box(1)) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidSpec(format!("batch size {} < 2", self.batch_size)));
        }
        if self.n_critic < 1 {
            return Err(Error::InvalidSpec("n_critic must be at least 1".into()));
        }
        if self.log_every < 1 {
            return Err(Error::InvalidSpec("log_every must be at least 1".into()));
        }
        AdamState::new(self.lr, self.betas, &[])?;
        self.prior.validate()
    }

    /// Generator steps per epoch on a dataset of `n` atoms: one per `n_critic`
    /// minibatches, at least one.
    pub fn gen_steps_per_epoch(&self, n: usize) -> usize {
        ((n / self.batch_size).max(1) / self.n_critic).max(1)
    }
}

/// Callback computing an evaluation metric from the current generator.
pub type Observer<'a> = &'a mut dyn FnMut(&Network) -> Result<f64>;

/// Minibatch indices drawn by epoch-wise shuffling, or by weighted sampling
/// when the measure is not uniform.
pub(crate) struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    weighted: Option<WeightedIndex<f64>>,
}

impl Batcher {
    pub(crate) fn new(measure: &EmpiricalMeasure) -> Result<Self> {
        let w = measure.weights();
        let uniform = w.iter().all(|&x| (x - w[0]).abs() <= 1e-12);
        let weighted = if uniform {
            None
        } else {
            Some(WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(format!("dataset weights: {e}")))?)
        };
        Ok(Self { order: (0..measure.len()).collect(), cursor: measure.len(), weighted })
    }

    pub(crate) fn next(&mut self, b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if let Some(index) = &self.weighted {
            return (0..b).map(|_| index.sample(rng)).collect();
        }
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let take = (b - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

/// Elapsed training time, with evaluation callbacks excluded.
pub(crate) struct Clock {
    mode: ClockMode,
    start: Instant,
    paused: f64,
}

impl Clock {
    pub(crate) fn new(mode: ClockMode) -> Self {
        Self { mode, start: Instant::now(), paused: 0.0 }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        match self.mode {
            ClockMode::Wall => (self.start.elapsed().as_secs_f64() - self.paused).max(0.0),
            ClockMode::Off => 0.0,
        }
    }

    pub(crate) fn excluding<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.paused += t0.elapsed().as_secs_f64();
        out
    }
}

pub(crate) fn as_loss_error(step: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { step },
        other => other,
    }
}

fn one_hot_rows(labels: &Tensor) -> bool {
    (0..labels.rows()).all(|i| {
        let row = labels.row(i);
        row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
    })
}

struct Loop<'a> {
    real: &'a EmpiricalMeasure,
    loss_cfg: &'a GanLossConfig,
    cfg: &'a TrainConfig,
    label_dim: usize,
}

impl Loop<'_> {
    fn check(&self, gen: &Network, critic: &Network) -> Result<()> {
        self.loss_cfg.validate()?;
        self.cfg.validate()?;
        critic.spec().check_critic()?;
        if self.real.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = self.real.dim();
        if gen.input_width() != self.cfg.prior.dim + self.label_dim {
            return Err(Error::Dimension { expected: self.cfg.prior.dim + self.label_dim, got: gen.input_width() });
        }
        if gen.output_width() + self.label_dim != d {
            return Err(Error::Dimension { expected: d, got: gen.output_width() + self.label_dim });
        }
        if critic.input_width() != d {
            return Err(Error::Dimension { expected: d, got: critic.input_width() });
        }
        Ok(())
    }

    /// Prior samples, with label rows appended in the conditional case.
    fn latent_batch(&self, b: usize, labels: Option<&Tensor>, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let z = self.cfg.prior.sample(b, rng)?;
        match labels {
            Some(l) => z.concat_cols(l),
            None => Ok(z),
        }
    }

    fn labels_of(&self, batch: &Tensor) -> Option<Tensor> {
        (self.label_dim > 0).then(|| batch.slice_cols(batch.cols() - self.label_dim, batch.cols()).expect("width"))
    }

    fn run(&self, gen: &Network, critic: &Network, mut observer: Option<Observer<'_>>) -> Result<(Network, Network, TrainHistory)> {
        self.check(gen, critic)?;
        let mut gen = gen.clone();
        let mut critic = critic.clone();
        let mut history = TrainHistory::default();
        if self.cfg.epochs == 0 {
            return Ok((gen, critic, history));
        }
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut batcher = Batcher::new(self.real)?;
        let label_sampler = WeightedIndex::new(self.real.weights())
            .map_err(|e| Error::InvalidArgument(format!("dataset weights: {e}")))?;
        let b = cfg.batch_size;
        let mut gen_opt = AdamState::new(cfg.lr, cfg.betas, &gen.param_tensors())?;
        let mut critic_opt = AdamState::new(cfg.lr, cfg.betas, &critic.param_tensors())?;
        let per_epoch = cfg.gen_steps_per_epoch(self.real.len());
        let mut clock = Clock::new(cfg.clock);
        let mut step: u64 = 0;
        for _epoch in 0..cfg.epochs {
            for k in 0..per_epoch {
                let mut last = (0.0, 0.0, 0.0);
                for _ in 0..cfg.n_critic {
                    let idx = batcher.next(b, &mut rng);
                    let real = self.real.atoms().select_rows(&idx);
                    let labels = self.labels_of(&real);
                    let z = self.latent_batch(b, labels.as_ref(), &mut rng)?;
                    let alpha = Tensor::matrix(b, 1, (0..b).map(|_| rng.gen::<f64>()).collect())?;
                    let mut lg = critic_loss_graph(&critic, &gen, &real, &z, self.label_dim, self.loss_cfg, &alpha)?;
                    let grads = lg.graph.differentiate(lg.loss, &lg.critic_params)?;
                    let mut targets: Vec<NodeId> = vec![lg.loss];
                    targets.extend(lg.penalty);
                    targets.extend(lg.drift);
                    let n_head = targets.len();
                    targets.extend(grads);
                    let mut values = lg.graph.eval(&Bindings::new(), &targets).map_err(as_loss_error(step + 1))?;
                    let grads: Vec<Tensor> = values.split_off(n_head);
                    let loss = values[0].item();
                    let gp = lg.penalty.map_or(0.0, |_| values[1].item());
                    let drift = values[n_head - 1].item();
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss { step: step + 1 });
                    }
                    let (params, next) = critic_opt.step(&critic.param_tensors(), &grads).map_err(as_loss_error(step + 1))?;
                    critic.set_params(params)?;
                    critic_opt = next;
                    last = (loss, gp, drift);
                }

                let labels = (self.label_dim > 0).then(|| {
                    let idx: Vec<usize> = (0..b).map(|_| label_sampler.sample(&mut rng)).collect();
                    self.labels_of(&self.real.atoms().select_rows(&idx)).expect("labels")
                });
                let z = self.latent_batch(b, labels.as_ref(), &mut rng)?;
                let mut lg = generator_loss_graph(&critic, &gen, &z, self.label_dim)?;
                let grads = lg.graph.differentiate(lg.loss, &lg.gen_params)?;
                let mut targets = vec![lg.loss];
                targets.extend(grads);
                for (_, mean, var) in &lg.bn_stats {
                    targets.push(*mean);
                    targets.push(*var);
                }
                let mut values = lg.graph.eval(&Bindings::new(), &targets).map_err(as_loss_error(step + 1))?;
                let n_grads = lg.gen_params.len();
                let stats_flat = values.split_off(1 + n_grads);
                let grads: Vec<Tensor> = values.split_off(1).into_iter().map(|g| g.map(|v| -v)).collect();
                let gen_loss = values[0].item();
                if !gen_loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step: step + 1 });
                }
                let (params, next) = gen_opt.step(&gen.param_tensors(), &grads).map_err(as_loss_error(step + 1))?;
                gen.set_params(params)?;
                gen_opt = next;
                let stats: Vec<(usize, Tensor, Tensor)> = lg
                    .bn_stats
                    .iter()
                    .zip(stats_flat.chunks(2))
                    .map(|((layer, _, _), mv)| (*layer, mv[0].clone(), mv[1].clone()))
                    .collect();
                gen.update_running_stats(&stats);
                step += 1;

                let end_of_epoch = k + 1 == per_epoch;
                let eval_now = if cfg.eval_every == 0 { end_of_epoch } else { step % cfg.eval_every as u64 == 0 };
                let metric = match (&mut observer, eval_now) {
                    (Some(f), true) => Some(clock.excluding(|| f(&gen))?),
                    _ => None,
                };
                if step % cfg.log_every as u64 == 0 || metric.is_some() {
                    history.push(HistoryRecord {
                        step,
                        critic_loss: last.0,
                        gen_loss,
                        gp: last.1,
                        drift: last.2,
                        wall_clock_s: clock.elapsed(),
                        metric,
                    });
                }
            }
        }
        Ok((gen, critic, history))
    }
}

/// Trains a WGAN-GP on `real`. The inputs are not modified.
pub fn train_wgan(
    real: &EmpiricalMeasure,
    gen: &Network,
    critic: &Network,
    loss_cfg: &GanLossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network, Network, TrainHistory)> {
    train_wgan_observed(real, gen, critic, loss_cfg, train_cfg, None)
}

/// [`train_wgan`] with an evaluation callback whose result lands in the
/// history's `metric` column.
pub fn train_wgan_observed(
    real: &EmpiricalMeasure,
    gen: &Network,
    critic: &Network,
    loss_cfg: &GanLossConfig,
    train_cfg: &TrainConfig,
    observer: Option<Observer<'_>>,
) -> Result<(Network, Network, TrainHistory)> {
    Loop { real, loss_cfg, cfg: train_cfg, label_dim: 0 }.run(gen, critic, observer)
}

/// Generator of the form `(z, l) -> (m(z, l), l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGenerator {
    pub net: Network,
    pub label_dim: usize,
}

impl ConditionalGenerator {
    pub fn new(net: Network, label_dim: usize) -> Result<Self> {
        if label_dim == 0 || net.input_width() <= label_dim {
            return Err(Error::InvalidSpec(format!(
                "label block of {label_dim} does not fit a generator input of {}",
                net.input_width()
            )));
        }
        Ok(Self { net, label_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_width() - self.label_dim
    }

    /// Generated rows with the label block re-attached unchanged.
    pub fn generate(&self, z: &Tensor, labels: &Tensor) -> Result<Tensor> {
        if labels.cols() != self.label_dim || z.rows() != labels.rows() {
            return Err(Error::Shape(format!("labels {:?} for z {:?}", labels.shape(), z.shape())));
        }
        self.net.apply(&z.concat_cols(labels)?)?.concat_cols(labels)
    }
}

/// Trains a conditional WGAN-GP on atoms whose trailing block is a one-hot
/// label. The label width is the generator input width minus the prior
/// dimension; the returned network is the inner map `m`.
pub fn train_conditional(
    real_labeled: &EmpiricalMeasure,
    gen: &Network,
    critic: &Network,
    loss_cfg: &GanLossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network, Network, TrainHistory)> {
    train_conditional_observed(real_labeled, gen, critic, loss_cfg, train_cfg, None)
}

pub fn train_conditional_observed(
    real_labeled: &EmpiricalMeasure,
    gen: &Network,
    critic: &Network,
    loss_cfg: &GanLossConfig,
    train_cfg: &TrainConfig,
    observer: Option<Observer<'_>>,
) -> Result<(Network, Network, TrainHistory)> {
    let label_dim = gen
        .input_width()
        .checked_sub(train_cfg.prior.dim)
        .filter(|&l| l > 0)
        .ok_or_else(|| Error::InvalidSpec("conditional generator input has no label block".into()))?;
    let atoms = real_labeled.atoms();
    if atoms.cols() <= label_dim {
        return Err(Error::Dimension { expected: label_dim + 1, got: atoms.cols() });
    }
    if !one_hot_rows(&atoms.slice_cols(atoms.cols() - label_dim, atoms.cols())?) {
        return Err(Error::InvalidArgument("labels are not one-hot".into()));
    }
    Loop { real: real_labeled, loss_cfg, cfg: train_cfg, label_dim }.run(gen, critic, observer)
}

/// Initial weights for fine-tuning: a copy of `source`, which must have
/// exactly the target architecture.
pub fn finetune_init(target_arch: &MlpSpec, source: &Network) -> Result<Network> {
    if source.spec() != target_arch {
        return Err(Error::InvalidSpec("fine-tuning needs identical architectures".into()));
    }
    Ok(source.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn small_nets(latent: usize, data: usize, seed: u64) -> (Network, Network) {
        let gen = Network::init(&MlpSpec::dense(&[latent, 16, data], Activation::Relu, Activation::Tanh).unwrap(), seed).unwrap();
        let critic =
            Network::init(&MlpSpec::dense(&[data, 16, 1], Activation::Relu, Activation::None).unwrap(), seed + 1).unwrap();
        (gen, critic)
    }

    fn cfg(prior: PriorSpec, epochs: usize) -> TrainConfig {
        TrainConfig { batch_size: 16, n_critic: 2, epochs, ..TrainConfig::new(prior) }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let real = EmpiricalMeasure::from_points(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let (gen, critic) = small_nets(2, 2, 0);
        let (g, c, h) = train_wgan(&real, &gen, &critic, &GanLossConfig::default(), &cfg(PriorSpec::unit_box(2), 0)).unwrap();
        assert_eq!(g, gen);
        assert_eq!(c, critic);
        assert!(h.is_empty());
    }

    #[test]
    fn deterministic_and_logged() {
        let real = EmpiricalMeasure::from_points(&(0..40).map(|i| vec![(i as f64 / 40.0) - 0.5, 0.1]).collect::<Vec<_>>()).unwrap();
        let (gen, critic) = small_nets(2, 2, 3);
        let mut c = cfg(PriorSpec::unit_box(2), 12);
        c.clock = ClockMode::Off;
        let a = train_wgan(&real, &gen, &critic, &GanLossConfig::default(), &c).unwrap();
        let b = train_wgan(&real, &gen, &critic, &GanLossConfig::default(), &c).unwrap();
        assert_eq!(a, b);
        // 40 atoms, batch 16: 2 minibatches, n_critic 2 -> 1 generator step per epoch
        assert_eq!(a.2.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![10]);
        assert_ne!(a.0, gen);
    }

    #[test]
    fn observer_metrics_each_epoch() {
        let real = EmpiricalMeasure::from_points(&[vec![0.5, 0.5], vec![0.4, 0.6]]).unwrap();
        let (gen, critic) = small_nets(2, 2, 3);
        let mut calls = 0;
        let mut obs = |_: &Network| -> Result<f64> {
            calls += 1;
            Ok(calls as f64)
        };
        let (_, _, h) =
            train_wgan_observed(&real, &gen, &critic, &GanLossConfig::default(), &cfg(PriorSpec::unit_box(2), 3), Some(&mut obs))
                .unwrap();
        assert_eq!(h.records.iter().map(|r| r.metric).collect::<Vec<_>>(), vec![Some(1.0), Some(2.0), Some(3.0)]);
        assert!(h.is_well_formed());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let real = EmpiricalMeasure::from_points(&[vec![0.5, 0.5, 0.0]]).unwrap();
        let (gen, critic) = small_nets(2, 2, 0);
        assert!(train_wgan(&real, &gen, &critic, &GanLossConfig::default(), &cfg(PriorSpec::unit_box(2), 1)).is_err());
        let real = EmpiricalMeasure::from_points(&[vec![0.5, 0.5]]).unwrap();
        assert!(train_wgan(&real, &gen, &critic, &GanLossConfig::default(), &cfg(PriorSpec::unit_box(3), 1)).is_err());
        let bad = TrainConfig { batch_size: 1, ..cfg(PriorSpec::unit_box(2), 1) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn conditional_pass_through_and_label_checks() {
        let (net, _) = small_nets(3, 1, 0);
        let cg = ConditionalGenerator::new(net.clone(), 2).unwrap();
        let z = Tensor::from_rows(&[vec![0.2], vec![-0.7]]).unwrap();
        let l = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = cg.generate(&z, &l).unwrap();
        assert_eq!(out.slice_cols(1, 3).unwrap(), l);

        let critic = Network::init(&MlpSpec::dense(&[3, 4, 1], Activation::Relu, Activation::None).unwrap(), 1).unwrap();
        let bad = EmpiricalMeasure::from_points(&[vec![0.0, 0.5, 0.5]]).unwrap();
        let c = cfg(PriorSpec::unit_box(1), 1);
        assert!(train_conditional(&bad, &net, &critic, &GanLossConfig::default(), &c).is_err());
        let good = EmpiricalMeasure::from_points(&[vec![-1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]).unwrap();
        let (g, _, _) = train_conditional(&good, &net, &critic, &GanLossConfig::default(), &c).unwrap();
        assert_eq!(g.spec(), net.spec());
    }

    #[test]
    fn finetune_requires_identical_spec() {
        let (gen, _) = small_nets(2, 2, 0);
        assert_eq!(finetune_init(gen.spec(), &gen).unwrap(), gen);
        let other = MlpSpec::dense(&[2, 8, 2], Activation::Relu, Activation::Tanh).unwrap();
        assert!(finetune_init(&other, &gen).is_err());
    }
}
