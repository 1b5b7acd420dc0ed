use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetSpec;
use crate::autoencoder::AutoencoderSpec;
use crate::error::{Error, Result};
use crate::gan::{GanLossConfig, TrainConfig};
use crate::nn::MlpSpec;
use crate::pipeline::{BoundMode, Method};

/// How generated distributions are scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Samples per metric estimate.
    pub samples: usize,
    pub projections: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 2048, projections: 128, seed: 1234 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DatasetSpec,
    pub target: DatasetSpec,
    pub autoencoder: AutoencoderSpec,
    pub mind_gen: MlpSpec,
    pub mind_critic: MlpSpec,
    /// Conditional latent generator `(z, l) -> m`; needed for the conditional method.
    #[serde(default)]
    pub conditional_gen: Option<MlpSpec>,
    /// Critic over `(m, l)`; needed for the conditional method.
    #[serde(default)]
    pub conditional_critic: Option<MlpSpec>,
    #[serde(default)]
    pub loss: GanLossConfig,
    pub ae_train: TrainConfig,
    pub mind_train: TrainConfig,
    /// Used by the vanilla and fine-tuning baselines, including pretraining.
    pub baseline_train: TrainConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Evaluate the transfer bound for mind2mind runs.
    #[serde(default)]
    pub bound: Option<BoundMode>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that every architecture chains with its neighbours.
    pub fn validate(&self) -> Result<()> {
        self.autoencoder.validate()?;
        self.loss.validate()?;
        for t in [&self.ae_train, &self.mind_train, &self.baseline_train] {
            t.validate()?;
        }
        self.eval_check()?;
        let latent = self.autoencoder.latent_dim;
        let chain = |what: &str, expected: usize, got: usize| -> Result<()> {
            if expected == got {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what}: expected width {expected}, got {got}")))
            }
        };
        chain("mind generator input vs prior", self.mind_train.prior.dim, self.mind_gen.input_width())?;
        chain("mind generator output vs latent", latent, self.mind_gen.output_width())?;
        chain("mind critic input vs latent", latent, self.mind_critic.input_width())?;
        self.mind_critic.check_critic()?;
        chain("baseline prior vs mind generator", self.mind_gen.input_width(), self.baseline_train.prior.dim)?;
        if self.methods.contains(&Method::Conditional) {
            let (gen, critic) = match (&self.conditional_gen, &self.conditional_critic) {
                (Some(g), Some(c)) => (g, c),
                _ => return Err(Error::InvalidSpec("the conditional method needs conditional_gen and conditional_critic".into())),
            };
            gen.validate()?;
            critic.check_critic()?;
            chain("conditional generator output vs latent", latent, gen.output_width())?;
            let labels = gen
                .input_width()
                .checked_sub(self.mind_train.prior.dim)
                .filter(|&l| l > 0)
                .ok_or_else(|| Error::InvalidSpec("conditional generator input has no label block".into()))?;
            chain("conditional critic input", latent + labels, critic.input_width())?;
        }
        Ok(())
    }

    fn eval_check(&self) -> Result<()> {
        if self.eval.samples == 0 || self.eval.projections == 0 {
            return Err(Error::InvalidSpec("evaluation needs samples and projections".into()));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Four-blob ring as source, the same ring rotated by 45 degrees as
    /// target, with a small latent GAN on an 8-dimensional autoencoder.
    pub fn ring_transfer() -> Self {
        use crate::gan::PriorSpec;
        use crate::io::{Family, SynthParams};
        use crate::nn::{Activation, AUTOENCODER_BETAS};

        let params = SynthParams { sigma: 0.15, ..SynthParams::default() };
        let latent = 8;
        let prior = PriorSpec::unit_box(8);
        let labels = params.k;
        let mind_gen = |input: usize| {
            MlpSpec::new(
                vec![input, 32, 32, latent],
                vec![Activation::Relu, Activation::Relu, Activation::Tanh],
                vec![true, true, false],
            )
            .expect("valid preset")
        };
        let critic = |input: usize| MlpSpec::dense(&[input, 32, 32, 1], Activation::Relu, Activation::None).expect("valid preset");
        let gan_train = TrainConfig { batch_size: 64, epochs: 100, eval_every: 5, ..TrainConfig::new(prior.clone()) };
        Self {
            source: DatasetSpec::Synthetic { family: Family::Ring, n: 2000, seed: 1, params: params.clone() },
            target: DatasetSpec::Synthetic {
                family: Family::Ring,
                n: 2000,
                seed: 2,
                params: SynthParams { rotation: std::f64::consts::FRAC_PI_4, ..params },
            },
            autoencoder: AutoencoderSpec::dense(2, &[64, 64], latent).expect("valid preset"),
            mind_gen: mind_gen(prior.dim),
            mind_critic: critic(latent),
            conditional_gen: Some(mind_gen(prior.dim + labels)),
            conditional_critic: Some(critic(latent + labels)),
            loss: GanLossConfig::default(),
            ae_train: TrainConfig { batch_size: 64, epochs: 50, betas: AUTOENCODER_BETAS, ..TrainConfig::new(prior) },
            mind_train: gan_train.clone(),
            baseline_train: gan_train,
            methods: vec![Method::Mind2mind, Method::Vanilla],
            seeds: vec![0],
            eval: EvalConfig { samples: 2048, projections: 64, seed: 7 },
            bound: Some(BoundMode::Sliced),
            output_dir: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_is_valid_and_roundtrips() {
        let cfg = ExperimentConfig::ring_transfer();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn broken_chains_are_rejected() {
        let mut cfg = ExperimentConfig::ring_transfer();
        cfg.mind_critic = MlpSpec::dense(&[5, 1], crate::nn::Activation::None, crate::nn::Activation::None).unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::ring_transfer();
        cfg.methods.push(Method::Conditional);
        cfg.conditional_critic = None;
        assert!(cfg.validate().is_err());
    }
}
