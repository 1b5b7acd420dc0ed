use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mind2mind::autoencoder::{encode_dataset, train_autoencoder};
use mind2mind::gan::{finetune_init, train_conditional, train_wgan, ClockMode, PriorSpec, TrainConfig, TrainHistory};
use mind2mind::io::{
    emit_report, load_checkpoint, load_dataset, save_checkpoint, write_history_csv, ExperimentConfig, OutputLock,
};
use mind2mind::nn::Network;
use mind2mind::pipeline::{
    init_pair, mind2mind, run_experiment, sample, verify_bound, BoundMode, ComposedGenerator, ReportBundle,
};
use mind2mind::{Error, Tensor};

#[derive(Parser, Debug)]
#[command(name = "m2m", version, about = "Latent-space GAN transfer on a frozen autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Shared {
    /// Experiment configuration (JSON). Defaults to the built-in ring transfer preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the trained networks; overrides every training seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "m2m-out")]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_critic: Option<usize>,
    #[arg(long)]
    lambda_gp: Option<f64>,
    #[arg(long)]
    eps_drift: Option<f64>,
    /// Record elapsed seconds in histories. Off by default so that repeated
    /// runs write identical files.
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Which {
    Source,
    Target,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Sliced,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the autoencoder on the source data set.
    TrainAe {
        #[command(flatten)]
        shared: Shared,
    },
    /// Encode a data set with a trained encoder and write the codes as CSV.
    Encode {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        autoencoder: PathBuf,
        #[arg(long, value_enum, default_value = "target")]
        data: Which,
    },
    /// Train the latent GAN on the encoded target.
    TrainMind {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        autoencoder: PathBuf,
    },
    /// Compose a trained latent generator with the decoder and draw samples.
    Compose {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        autoencoder: PathBuf,
        #[arg(long)]
        mind: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Train the end-to-end baseline on the target.
    TrainVanilla {
        #[command(flatten)]
        shared: Shared,
    },
    /// Pretrain the end-to-end baseline on the source, then train it on the target.
    Finetune {
        #[command(flatten)]
        shared: Shared,
    },
    /// Train a label-conditioned latent GAN.
    TrainConditional {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        autoencoder: PathBuf,
    },
    /// Evaluate the transfer error bound for a trained latent generator.
    VerifyBound {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        autoencoder: PathBuf,
        #[arg(long)]
        mind: PathBuf,
        #[arg(long, value_enum, default_value = "sliced")]
        mode: ModeArg,
        /// Replace the prior by this many of its samples, making exact mode possible.
        #[arg(long)]
        finite_prior: Option<usize>,
    },
    /// Run every configured method and seed and write the report files.
    RunExperiment {
        #[command(flatten)]
        shared: Shared,
    },
    /// Re-emit report files from a saved bundle.
    Report {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        bundle: PathBuf,
    },
}

impl Shared {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::ring_transfer(),
        };
        for t in [&mut cfg.ae_train, &mut cfg.mind_train, &mut cfg.baseline_train] {
            if let Some(lr) = self.lr {
                t.lr = lr;
            }
            if let Some(b) = self.batch_size {
                t.batch_size = b;
            }
            if let Some(e) = self.epochs {
                t.epochs = e;
            }
            if let Some(n) = self.n_critic {
                t.n_critic = n;
            }
            if let Some(s) = self.seed {
                t.seed = s;
            }
            t.clock = if self.wall_clock { ClockMode::Wall } else { ClockMode::Off };
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(l) = self.lambda_gp {
            cfg.loss.lambda_gp = l;
        }
        if let Some(e) = self.eps_drift {
            cfg.loss.eps_drift = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self, cfg: &TrainConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_matrix_csv(t: &Tensor, prefix: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..t.cols()).map(|j| format!("{prefix}{j}")))?;
    for i in 0..t.rows() {
        w.write_record(t.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn history(out: &Path, name: &str, seed: u64, h: &TrainHistory) -> Result<()> {
    write_history_csv(h, &out.join(format!("history_{name}_seed{seed}.csv")))?;
    Ok(())
}

fn save(out: &Path, file: &str, nets: &[(&str, &Network)]) -> Result<()> {
    let map: BTreeMap<String, Network> = nets.iter().map(|(k, v)| (k.to_string(), (*v).clone())).collect();
    save_checkpoint(&map, &out.join(file))?;
    Ok(())
}

fn take(map: &mut BTreeMap<String, Network>, name: &str, path: &Path) -> Result<Network> {
    map.remove(name).with_context(|| format!("{} has no network `{name}`", path.display()))
}

fn load_ae(path: &Path) -> Result<(Network, Network)> {
    let mut m = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((take(&mut m, "encoder", path)?, take(&mut m, "decoder", path)?))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainAe { shared } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let source = load_dataset(&cfg.source)?;
            let (enc, dec, h) = train_autoencoder(&source.features, &cfg.autoencoder, &cfg.ae_train)?;
            save(&shared.out, "autoencoder.json", &[("encoder", &enc), ("decoder", &dec)])?;
            history(&shared.out, "ae", cfg.ae_train.seed, &h)?;
        }
        Command::Encode { shared, autoencoder, data } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let (enc, _) = load_ae(&autoencoder)?;
            let (spec, name) = match data {
                Which::Source => (&cfg.source, "source"),
                Which::Target => (&cfg.target, "target"),
            };
            let codes = encode_dataset(&enc, &load_dataset(spec)?.features)?;
            write_matrix_csv(codes.atoms(), "z", &shared.out.join(format!("encoded_{name}.csv")))?;
        }
        Command::TrainMind { shared, autoencoder } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let (enc, dec) = load_ae(&autoencoder)?;
            let target = load_dataset(&cfg.target)?;
            let (gen, h) =
                mind2mind(&enc, &dec, &target.features, &cfg.mind_gen, &cfg.mind_critic, &cfg.loss, &cfg.mind_train)?;
            save(&shared.out, "mind.json", &[("mind", &gen.mind)])?;
            history(&shared.out, "mind2mind", cfg.mind_train.seed, &h)?;
        }
        Command::Compose { shared, autoencoder, mind, samples } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let (_, dec) = load_ae(&autoencoder)?;
            let mind_net = take(&mut load_checkpoint(&mind)?, "mind", &mind)?;
            let composed = ComposedGenerator::new(mind_net, dec)?;
            save(&shared.out, "generator.json", &[("generator", &composed.to_network()?)])?;
            if samples > 0 {
                let s = sample(&composed, &cfg.mind_train.prior, samples, shared.seed(&cfg.mind_train))?;
                write_matrix_csv(s.atoms(), "x", &shared.out.join("samples.csv"))?;
            }
        }
        Command::TrainVanilla { shared } => baseline(&shared, false)?,
        Command::Finetune { shared } => baseline(&shared, true)?,
        Command::TrainConditional { shared, autoencoder } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let (enc, _) = load_ae(&autoencoder)?;
            let target = load_dataset(&cfg.target)?;
            let labels = target.labels.as_ref().context("the target data set has no labels")?;
            let (gen_spec, critic_spec) = match (&cfg.conditional_gen, &cfg.conditional_critic) {
                (Some(g), Some(c)) => (g, c),
                _ => bail!("the config has no conditional_gen/conditional_critic"),
            };
            let codes = encode_dataset(&enc, &target.features)?;
            let joined = mind2mind::ot::EmpiricalMeasure::new(codes.atoms().concat_cols(labels)?, codes.weights().to_vec())?;
            let (g, c) = init_pair(gen_spec, critic_spec, cfg.mind_train.seed)?;
            let (gen, _, h) = train_conditional(&joined, &g, &c, &cfg.loss, &cfg.mind_train)?;
            save(&shared.out, "conditional.json", &[("mind", &gen)])?;
            history(&shared.out, "conditional", cfg.mind_train.seed, &h)?;
        }
        Command::VerifyBound { shared, autoencoder, mind, mode, finite_prior } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let (enc, dec) = load_ae(&autoencoder)?;
            let mind_net = take(&mut load_checkpoint(&mind)?, "mind", &mind)?;
            let prior = match finite_prior {
                Some(n) => {
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(shared.seed(&cfg.mind_train));
                    let atoms = cfg.mind_train.prior.sample(n, &mut rng)?;
                    PriorSpec::finite(&mind2mind::ot::EmpiricalMeasure::uniform(atoms)?)
                }
                None => cfg.mind_train.prior.clone(),
            };
            let mode = match mode {
                ModeArg::Exact => BoundMode::Exact,
                ModeArg::Sliced => BoundMode::Sliced,
            };
            let source = load_dataset(&cfg.source)?;
            let target = load_dataset(&cfg.target)?;
            let report = verify_bound(&enc, &dec, &source.features, &target.features, &mind_net, &prior, mode)?;
            write_json(&report, &shared.out.join("bound.json"))?;
            println!(
                "er_conv {:.6} <= {:.6} (a {:.4}, b {:.4}): {}",
                report.er_conv,
                report.rhs,
                report.a,
                report.b,
                if report.holds { "holds" } else { "violated" }
            );
        }
        Command::RunExperiment { shared } => {
            let cfg = shared.load()?;
            let _lock = OutputLock::acquire(&shared.out)?;
            let bundle = run_experiment(&cfg)?;
            write_json(&bundle, &shared.out.join("bundle.json"))?;
            emit_report(&bundle, &shared.out)?;
            print_summary(&bundle);
        }
        Command::Report { shared, bundle } => {
            let text = std::fs::read_to_string(&bundle).with_context(|| format!("reading {}", bundle.display()))?;
            let b: ReportBundle = serde_json::from_str(&text)?;
            let _lock = OutputLock::acquire(&shared.out)?;
            emit_report(&b, &shared.out)?;
            print_summary(&b);
        }
    }
    Ok(())
}

fn baseline(shared: &Shared, finetune: bool) -> Result<()> {
    let cfg = shared.load()?;
    let _lock = OutputLock::acquire(&shared.out)?;
    let gen_spec = cfg.mind_gen.then(&cfg.autoencoder.decoder)?;
    let critic_spec = cfg.autoencoder.encoder.then(&cfg.mind_critic)?;
    let train = &cfg.baseline_train;
    let (mut gen, mut critic) = init_pair(&gen_spec, &critic_spec, train.seed)?;
    if finetune {
        let source = load_dataset(&cfg.source)?;
        let (g, c, h) = train_wgan(&source.features, &gen, &critic, &cfg.loss, train)?;
        history(&shared.out, "pretrain", train.seed, &h)?;
        gen = finetune_init(&gen_spec, &g)?;
        critic = finetune_init(&critic_spec, &c)?;
    }
    let target = load_dataset(&cfg.target)?;
    let (g, c, h) = train_wgan(&target.features, &gen, &critic, &cfg.loss, train)?;
    let name = if finetune { "finetune" } else { "vanilla" };
    save(&shared.out, &format!("{name}.json"), &[("generator", &g), ("critic", &c)])?;
    history(&shared.out, name, train.seed, &h)
}

fn print_summary(bundle: &ReportBundle) {
    for r in bundle.summary() {
        println!(
            "{:<12} seed {:<4} sliced_w1 {:.5} frechet {:.5} latent_frechet {:.5}{}",
            r.method.name(),
            r.seed,
            r.metrics.sliced_w1,
            r.metrics.frechet_data,
            r.metrics.frechet_latent,
            r.bound_holds.map(|h| format!(" bound {}", if h { "holds" } else { "violated" })).unwrap_or_default()
        );
    }
}

/// 0 on success, 1 for invalid input, 2 when training breaks down numerically.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
