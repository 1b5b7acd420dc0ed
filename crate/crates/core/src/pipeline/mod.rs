//! Latent-space transfer: train a small GAN on encoded target data and decode
//! its samples, plus the error certificate that bounds the result.

mod bound;
mod experiment;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::encode_dataset;
use crate::error::{Error, Result};
use crate::gan::{train_wgan_observed, ClockMode, GanLossConfig, Observer, PriorSpec, TrainConfig, TrainHistory};
use crate::nn::{MlpSpec, Network};
use crate::ot::{pushforward, EmpiricalMeasure};
use crate::tensor::Tensor;

pub use bound::{verify_bound, wae_bound, BoundMode, BoundReport, TermMethods, SLICED_PROJECTIONS, SLICED_SAMPLES};
pub use experiment::{
    pretrain, run_experiment, run_experiment_with_threads, run_method, thread_budget, FinalMetrics, Method, Pretrained,
    ReportBundle, RunReport, RunSummary,
};

/// The transferred generator `decoder ∘ mind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedGenerator {
    pub mind: Network,
    pub decoder: Network,
}

impl ComposedGenerator {
    pub fn new(mind: Network, decoder: Network) -> Result<Self> {
        if mind.output_width() != decoder.input_width() {
            return Err(Error::Dimension { expected: decoder.input_width(), got: mind.output_width() });
        }
        Ok(Self { mind, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.mind.input_width()
    }

    /// Eval-mode image of a batch of prior samples.
    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.apply(&self.mind.apply(z)?)
    }

    /// The composition as a single network.
    pub fn to_network(&self) -> Result<Network> {
        self.mind.then(&self.decoder)
    }
}

/// Freshly initialized generator and critic for a run seeded with `seed`.
pub fn init_pair(gen_spec: &MlpSpec, critic_spec: &MlpSpec, seed: u64) -> Result<(Network, Network)> {
    Ok((Network::init(gen_spec, seed)?, Network::init(critic_spec, seed.wrapping_add(1))?))
}

/// Trains a latent GAN on `encoder♯target` and returns `decoder ∘ mind`.
/// Encoder and decoder are left untouched.
pub fn mind2mind(
    encoder: &Network,
    decoder: &Network,
    target: &EmpiricalMeasure,
    mind_gen_spec: &MlpSpec,
    mind_critic_spec: &MlpSpec,
    loss_cfg: &GanLossConfig,
    train_cfg: &TrainConfig,
) -> Result<(ComposedGenerator, TrainHistory)> {
    mind2mind_observed(encoder, decoder, target, mind_gen_spec, mind_critic_spec, loss_cfg, train_cfg, None)
}

/// [`mind2mind`] with an evaluation callback receiving the current mind
/// generator.
#[allow(clippy::too_many_arguments)]
pub fn mind2mind_observed(
    encoder: &Network,
    decoder: &Network,
    target: &EmpiricalMeasure,
    mind_gen_spec: &MlpSpec,
    mind_critic_spec: &MlpSpec,
    loss_cfg: &GanLossConfig,
    train_cfg: &TrainConfig,
    observer: Option<Observer<'_>>,
) -> Result<(ComposedGenerator, TrainHistory)> {
    if mind_gen_spec.output_width() != decoder.input_width() {
        return Err(Error::Dimension { expected: decoder.input_width(), got: mind_gen_spec.output_width() });
    }
    let started = Instant::now();
    let encoded = encode_dataset(encoder, target)?;
    let encode_s = started.elapsed().as_secs_f64();
    let (gen, critic) = init_pair(mind_gen_spec, mind_critic_spec, train_cfg.seed)?;
    let (mind, _, mut history) = train_wgan_observed(&encoded, &gen, &critic, loss_cfg, train_cfg, observer)?;
    if train_cfg.clock == ClockMode::Wall {
        // the one-off encoding of the target counts towards training time
        for r in &mut history.records {
            r.wall_clock_s += encode_s;
        }
    }
    Ok((ComposedGenerator::new(mind, decoder.clone())?, history))
}

/// `n` equal-weight samples of the generator's distribution. With `n == 0`
/// and a finitely supported prior, returns the exact push-forward of the
/// prior instead.
pub fn sample(gen: &ComposedGenerator, prior: &PriorSpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    prior.validate()?;
    if prior.dim != gen.latent_dim() {
        return Err(Error::Dimension { expected: gen.latent_dim(), got: prior.dim });
    }
    if n == 0 {
        let measure = prior
            .as_measure()
            .ok_or_else(|| Error::InvalidArgument("n = 0 requests the exact push-forward of a finite prior".into()))??;
        return pushforward(&measure, |z| gen.apply(z));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmpiricalMeasure::uniform(gen.apply(&prior.sample(n, &mut rng)?)?)
}
