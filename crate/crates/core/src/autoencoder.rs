//! The frozen encoder/decoder pair that maps data to and from latent space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, ExprGraph};
use crate::error::{Error, Result};
use crate::gan::{as_loss_error, Batcher, Clock, HistoryRecord, TrainConfig, TrainHistory};
use crate::nn::{Activation, AdamState, MlpSpec, Mode, Network};
use crate::ot::{pushforward_net, EmpiricalMeasure};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
    pub latent_dim: usize,
}

impl AutoencoderSpec {
    /// Relu hidden layers with tanh outputs; the decoder mirrors the encoder.
    pub fn dense(data_dim: usize, hidden: &[usize], latent_dim: usize) -> Result<Self> {
        let mut widths = vec![data_dim];
        widths.extend_from_slice(hidden);
        widths.push(latent_dim);
        let encoder = MlpSpec::dense(&widths, Activation::Relu, Activation::Tanh)?;
        widths.reverse();
        let decoder = MlpSpec::dense(&widths, Activation::Relu, Activation::Tanh)?;
        let spec = Self { encoder, decoder, latent_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.output_width() != self.latent_dim || self.decoder.input_width() != self.latent_dim {
            return Err(Error::InvalidSpec(format!(
                "encoder emits {}, decoder takes {}, latent is {}",
                self.encoder.output_width(),
                self.decoder.input_width(),
                self.latent_dim
            )));
        }
        if self.encoder.input_width() != self.decoder.output_width() {
            return Err(Error::InvalidSpec("decoder does not return to the data dimension".into()));
        }
        for spec in [&self.encoder, &self.decoder] {
            if spec.activations.last() != Some(&Activation::Tanh) {
                return Err(Error::InvalidSpec("encoder and decoder need tanh outputs".into()));
            }
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_width()
    }
}

/// Weighted mean squared reconstruction error in eval mode, averaged over
/// coordinates.
pub fn reconstruction_mse(encoder: &Network, decoder: &Network, data: &EmpiricalMeasure) -> Result<f64> {
    let recon = ae_pushforward(encoder, decoder, data)?;
    let d = data.dim() as f64;
    Ok(data
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let se: f64 = recon.atom(i).iter().zip(data.atom(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            w * se / d
        })
        .sum())
}

/// Trains encoder and decoder jointly on mean squared reconstruction error.
pub fn train_autoencoder(
    data: &EmpiricalMeasure,
    spec: &AutoencoderSpec,
    cfg: &TrainConfig,
) -> Result<(Network, Network, TrainHistory)> {
    spec.validate()?;
    cfg.validate()?;
    if data.dim() != spec.data_dim() {
        return Err(Error::Dimension { expected: spec.data_dim(), got: data.dim() });
    }
    let mut encoder = Network::init(&spec.encoder, cfg.seed)?;
    let mut decoder = Network::init(&spec.decoder, cfg.seed.wrapping_add(1))?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((encoder, decoder, history));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batcher = Batcher::new(data)?;
    let n_enc = encoder.param_tensors().len();
    let mut all: Vec<Tensor> = encoder.param_tensors();
    all.extend(decoder.param_tensors());
    let mut opt = AdamState::new(cfg.lr, cfg.betas, &all)?;
    let per_epoch = (data.len() / cfg.batch_size).max(1);
    let clock = Clock::new(cfg.clock);
    let mut step: u64 = 0;
    for _ in 0..cfg.epochs {
        for k in 0..per_epoch {
            let idx = batcher.next(cfg.batch_size, &mut rng);
            let batch = data.atoms().select_rows(&idx);
            let mut g = ExprGraph::new();
            let x = g.constant(batch);
            let enc = encoder.build(&mut g, x, Mode::Train, "enc")?;
            let dec = decoder.build(&mut g, enc.output, Mode::Train, "dec")?;
            let diff = g.sub(dec.output, x)?;
            let sq = g.mul(diff, diff)?;
            let loss = g.mean(sq);
            let params: Vec<_> = enc.params.iter().chain(&dec.params).copied().collect();
            let grads = g.differentiate(loss, &params)?;
            let mut targets = vec![loss];
            targets.extend(grads);
            let stats: Vec<_> = enc.bn_stats.iter().map(|s| (0, s)).chain(dec.bn_stats.iter().map(|s| (1, s))).collect();
            for (_, (_, mean, var)) in &stats {
                targets.push(*mean);
                targets.push(*var);
            }
            let mut values = g.eval(&Bindings::new(), &targets).map_err(as_loss_error(step + 1))?;
            let stat_values = values.split_off(1 + params.len());
            let grads = values.split_off(1);
            let loss_value = values[0].item();
            let (updated, next) = opt.step(&all, &grads).map_err(as_loss_error(step + 1))?;
            opt = next;
            let mut dec_params = updated.clone();
            let enc_params = dec_params.drain(..n_enc).collect();
            encoder.set_params(enc_params)?;
            decoder.set_params(dec_params)?;
            all = updated;
            let mut enc_stats = Vec::new();
            let mut dec_stats = Vec::new();
            for ((which, (layer, _, _)), mv) in stats.iter().zip(stat_values.chunks(2)) {
                let entry = (*layer, mv[0].clone(), mv[1].clone());
                if *which == 0 {
                    enc_stats.push(entry);
                } else {
                    dec_stats.push(entry);
                }
            }
            encoder.update_running_stats(&enc_stats);
            decoder.update_running_stats(&dec_stats);
            step += 1;
            if step % cfg.log_every as u64 == 0 || k + 1 == per_epoch {
                history.push(HistoryRecord {
                    step,
                    critic_loss: 0.0,
                    gen_loss: loss_value,
                    gp: 0.0,
                    drift: 0.0,
                    wall_clock_s: clock.elapsed(),
                    metric: None,
                });
            }
        }
    }
    Ok((encoder, decoder, history))
}

/// The latent codes of a dataset, with weights kept.
pub fn encode_dataset(encoder: &Network, data: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    pushforward_net(data, encoder)
}

/// Reconstructions `decoder(encoder(x))` of a dataset.
pub fn ae_pushforward(encoder: &Network, decoder: &Network, data: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    if encoder.output_width() != decoder.input_width() {
        return Err(Error::Dimension { expected: decoder.input_width(), got: encoder.output_width() });
    }
    pushforward_net(&encode_dataset(encoder, data)?, decoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::exact_w1;

    #[test]
    fn spec_checks() {
        let spec = AutoencoderSpec::dense(4, &[8], 2).unwrap();
        assert_eq!(spec.encoder.layer_widths, vec![4, 8, 2]);
        assert_eq!(spec.decoder.layer_widths, vec![2, 8, 4]);
        let mut bad = spec.clone();
        bad.latent_dim = 3;
        assert!(bad.validate().is_err());
        let mut linear = spec;
        linear.decoder.activations[1] = Activation::None;
        assert!(linear.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let spec = AutoencoderSpec::dense(2, &[4], 2).unwrap();
        let data = EmpiricalMeasure::from_points(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::autoencoder() };
        let (e, d, h) = train_autoencoder(&data, &spec, &cfg).unwrap();
        assert_eq!(e, Network::init(&spec.encoder, 0).unwrap());
        assert_eq!(d, Network::init(&spec.decoder, 1).unwrap());
        assert!(h.is_empty());
        assert_eq!(cfg.betas, (0.9, 0.9));
    }

    #[test]
    fn single_atom_is_learned() {
        let spec = AutoencoderSpec::dense(2, &[16], 2).unwrap();
        let data = EmpiricalMeasure::from_points(&vec![vec![0.3, -0.5]; 8]).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 8, ..TrainConfig::autoencoder() };
        let (e, d, h) = train_autoencoder(&data, &spec, &cfg).unwrap();
        assert_eq!(h.records.last().unwrap().step, 200);
        assert!(reconstruction_mse(&e, &d, &data).unwrap() < 1e-3);
    }

    #[test]
    fn identity_maps() {
        let data = EmpiricalMeasure::from_points(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.0, 0.0]]).unwrap();
        let id = Network::identity(2).unwrap();
        assert_eq!(encode_dataset(&id, &data).unwrap(), data);
        let recon = ae_pushforward(&id, &id, &data).unwrap();
        assert_eq!(exact_w1(&recon, &data).unwrap().0, 0.0);
        assert!(encode_dataset(&Network::identity(3).unwrap(), &data).is_err());
    }

    #[test]
    fn constant_decoder() {
        let data = EmpiricalMeasure::from_points(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap();
        let dec = Network::linear(Tensor::zeros(&[2, 2]), Tensor::vector(vec![0.5, -0.25]), Activation::None).unwrap();
        let recon = ae_pushforward(&Network::identity(2).unwrap(), &dec, &data).unwrap();
        for i in 0..2 {
            assert_eq!(recon.atom(i), &[0.5, -0.25]);
        }
    }
}
