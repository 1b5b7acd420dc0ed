use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bound::{verify_bound, BoundReport};
use super::{init_pair, mind2mind_observed, ComposedGenerator};
use crate::autoencoder::{encode_dataset, train_autoencoder};
use crate::error::{Error, Result};
use crate::gan::{
    finetune_init, train_conditional_observed, train_wgan, train_wgan_observed, TrainConfig, TrainHistory,
};
use crate::io::{load_dataset, ExperimentConfig, LabeledData};
use crate::nn::Network;
use crate::ot::{fit_gaussian, frechet_gaussian_distance, sliced_w1, EmpiricalMeasure};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Latent GAN on the frozen autoencoder.
    Mind2mind,
    /// End-to-end GAN with the composed architecture, from scratch.
    Vanilla,
    /// The vanilla architecture pretrained on the source, then trained on the target.
    Finetune,
    /// Label-conditioned latent GAN.
    Conditional,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mind2mind => "mind2mind",
            Method::Vanilla => "vanilla",
            Method::Finetune => "finetune",
            Method::Conditional => "conditional",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mind2mind" => Ok(Method::Mind2mind),
            "vanilla" => Ok(Method::Vanilla),
            "finetune" => Ok(Method::Finetune),
            "conditional" => Ok(Method::Conditional),
            other => Err(Error::InvalidSpec(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Sliced W1 between target and generated samples in data space.
    pub sliced_w1: f64,
    pub frechet_data: f64,
    /// Fréchet distance after encoding both sample sets.
    pub frechet_latent: f64,
    pub wall_clock_s: f64,
    pub eval_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub history: TrainHistory,
    pub metrics: FinalMetrics,
    pub bound: Option<BoundReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub metrics: FinalMetrics,
    pub bound_holds: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
}

impl ReportBundle {
    pub fn summary(&self) -> Vec<RunSummary> {
        self.runs
            .iter()
            .map(|r| RunSummary {
                method: r.method,
                seed: r.seed,
                metrics: r.metrics.clone(),
                bound_holds: r.bound.as_ref().map(|b| b.holds),
            })
            .collect()
    }
}

/// Loaded data sets, the trained autoencoder and the fixed evaluation inputs
/// shared by every run of an experiment.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub source: LabeledData,
    pub target: LabeledData,
    pub encoder: Network,
    pub decoder: Network,
    pub ae_history: TrainHistory,
    /// Target subset used for scoring, with its labels when present.
    pub eval_target: LabeledData,
    /// Prior samples fed to every generator when scoring.
    pub eval_z: Tensor,
}

fn subsample(data: &LabeledData, n: usize, seed: u64) -> Result<LabeledData> {
    if data.features.len() <= n {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = WeightedIndex::new(data.features.weights()).map_err(|e| Error::InvalidArgument(format!("weights: {e}")))?;
    let idx: Vec<usize> = (0..n).map(|_| index.sample(&mut rng)).collect();
    Ok(LabeledData {
        features: EmpiricalMeasure::uniform(data.features.atoms().select_rows(&idx))?,
        labels: data.labels.as_ref().map(|l| l.select_rows(&idx)),
    })
}

/// Loads both data sets and trains the shared autoencoder on the source.
pub fn pretrain(config: &ExperimentConfig) -> Result<Pretrained> {
    config.validate()?;
    let source = load_dataset(&config.source)?;
    let target = load_dataset(&config.target)?;
    let d = config.autoencoder.data_dim();
    for data in [&source, &target] {
        if data.dim() != d {
            return Err(Error::Dimension { expected: d, got: data.dim() });
        }
    }
    let (encoder, decoder, ae_history) = train_autoencoder(&source.features, &config.autoencoder, &config.ae_train)?;
    let eval_target = subsample(&target, config.eval.samples, config.eval.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.eval.seed);
    let eval_z = config.mind_train.prior.sample(eval_target.features.len(), &mut rng)?;
    Ok(Pretrained { source, target, encoder, decoder, ae_history, eval_target, eval_z })
}

struct Scorer<'a> {
    config: &'a ExperimentConfig,
    pre: &'a Pretrained,
}

impl Scorer<'_> {
    fn sliced(&self, generated: &Tensor) -> Result<f64> {
        let fake = EmpiricalMeasure::uniform(generated.clone())?;
        sliced_w1(&self.pre.eval_target.features, &fake, self.config.eval.projections, self.config.eval.seed)
    }

    fn finish(&self, generated: &Tensor, history: &TrainHistory) -> Result<FinalMetrics> {
        let fake = EmpiricalMeasure::uniform(generated.clone())?;
        let real = &self.pre.eval_target.features;
        let frechet_data = frechet_gaussian_distance(&fit_gaussian(real)?, &fit_gaussian(&fake)?)?;
        let enc = &self.pre.encoder;
        let frechet_latent = frechet_gaussian_distance(
            &fit_gaussian(&encode_dataset(enc, real)?)?,
            &fit_gaussian(&encode_dataset(enc, &fake)?)?,
        )?;
        Ok(FinalMetrics {
            sliced_w1: self.sliced(generated)?,
            frechet_data,
            frechet_latent,
            wall_clock_s: history.records.last().map_or(0.0, |r| r.wall_clock_s),
            eval_samples: real.len(),
        })
    }
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

/// Runs one method with one seed.
pub fn run_method(config: &ExperimentConfig, pre: &Pretrained, method: Method, seed: u64) -> Result<RunReport> {
    let scorer = Scorer { config, pre };
    let z = &pre.eval_z;
    let decoder = &pre.decoder;
    let (generated, history, bound) = match method {
        Method::Mind2mind => {
            let cfg = with_seed(&config.mind_train, seed);
            let mut obs = |mind: &Network| scorer.sliced(&decoder.apply(&mind.apply(z)?)?);
            let (gen, history) = mind2mind_observed(
                &pre.encoder,
                decoder,
                &pre.target.features,
                &config.mind_gen,
                &config.mind_critic,
                &config.loss,
                &cfg,
                Some(&mut obs),
            )?;
            let bound = match config.bound {
                Some(mode) => Some(verify_bound(
                    &pre.encoder,
                    decoder,
                    &pre.source.features,
                    &pre.target.features,
                    &gen.mind,
                    &cfg.prior,
                    mode,
                )?),
                None => None,
            };
            (gen.apply(z)?, history, bound)
        }
        Method::Vanilla | Method::Finetune => {
            let gen_spec = config.mind_gen.then(&config.autoencoder.decoder)?;
            let critic_spec = config.autoencoder.encoder.then(&config.mind_critic)?;
            let cfg = with_seed(&config.baseline_train, seed);
            let (mut gen, mut critic) = init_pair(&gen_spec, &critic_spec, seed)?;
            if method == Method::Finetune {
                let (g, c, _) = train_wgan(&pre.source.features, &gen, &critic, &config.loss, &cfg)?;
                gen = finetune_init(&gen_spec, &g)?;
                critic = finetune_init(&critic_spec, &c)?;
            }
            let mut obs = |g: &Network| scorer.sliced(&g.apply(z)?);
            let (gen, _, history) =
                train_wgan_observed(&pre.target.features, &gen, &critic, &config.loss, &cfg, Some(&mut obs))?;
            (gen.apply(z)?, history, None)
        }
        Method::Conditional => {
            let labels = pre
                .target
                .labels
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec("the conditional method needs a labeled target".into()))?;
            let eval_labels = pre.eval_target.labels.as_ref().expect("subset keeps labels");
            let gen_spec = config.conditional_gen.as_ref().expect("validated");
            let critic_spec = config.conditional_critic.as_ref().expect("validated");
            if gen_spec.input_width() != config.mind_train.prior.dim + labels.cols() {
                return Err(Error::Dimension {
                    expected: config.mind_train.prior.dim + labels.cols(),
                    got: gen_spec.input_width(),
                });
            }
            let encoded = encode_dataset(&pre.encoder, &pre.target.features)?;
            let joined = EmpiricalMeasure::new(encoded.atoms().concat_cols(labels)?, encoded.weights().to_vec())?;
            let cfg = with_seed(&config.mind_train, seed);
            let (gen, critic) = init_pair(gen_spec, critic_spec, seed)?;
            let zl = z.concat_cols(eval_labels)?;
            let mut obs = |m: &Network| scorer.sliced(&decoder.apply(&m.apply(&zl)?)?);
            let (m, _, history) = train_conditional_observed(&joined, &gen, &critic, &config.loss, &cfg, Some(&mut obs))?;
            (ComposedGenerator::new(m, decoder.clone())?.apply(&zl)?, history, None)
        }
    };
    let metrics = scorer.finish(&generated, &history)?;
    Ok(RunReport { method, seed, history, metrics, bound })
}

/// Worker count from `M2M_THREADS`, defaulting to the available cores.
pub fn thread_budget() -> usize {
    std::env::var("M2M_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every requested method for every seed and collects the reports in
/// method-then-seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    run_experiment_with_threads(config, thread_budget())
}

pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ReportBundle> {
    config.validate()?;
    let jobs: Vec<(Method, u64)> =
        config.methods.iter().flat_map(|&m| config.seeds.iter().map(move |&s| (m, s))).collect();
    if jobs.is_empty() {
        return Ok(ReportBundle { config: config.clone(), runs: vec![] });
    }
    let pre = pretrain(config)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(method, seed)) = jobs.get(i) else { break };
                let r = run_method(config, &pre, method, seed);
                results.lock().expect("poisoned")[i] = Some(r);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReportBundle { config: config.clone(), runs })
}
