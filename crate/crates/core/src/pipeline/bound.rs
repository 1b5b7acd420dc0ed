use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{ae_pushforward, encode_dataset};
use crate::error::{Error, Result};
use crate::gan::PriorSpec;
use crate::nn::Network;
use crate::ot::{exact_w1, lipschitz_upper, lipschitz_upper_chain, pushforward_net, sliced_w1, EmpiricalMeasure};

/// Sample size for each measure in sliced mode.
pub const SLICED_SAMPLES: usize = 2048;
pub const SLICED_PROJECTIONS: usize = 256;
const SLICED_SEED: u64 = 0x5eed;
const HOLD_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    Exact,
    Sliced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMethods {
    pub er_conv: BoundMode,
    pub er_shift: BoundMode,
    pub er_ae: BoundMode,
    pub er_mind: BoundMode,
}

/// `er_conv <= a * er_shift + er_ae + b * er_mind`, evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub er_conv: f64,
    pub er_shift: f64,
    pub er_ae: f64,
    pub er_mind: f64,
    pub a: f64,
    pub b: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub methods: TermMethods,
    /// True only when every term was computed exactly, so `holds` is a proof
    /// rather than an estimate.
    pub certified: bool,
}

impl BoundReport {
    fn assemble(er_conv: f64, er_shift: f64, er_ae: f64, er_mind: f64, a: f64, b: f64, mode: BoundMode) -> Self {
        let rhs = a * er_shift + er_ae + b * er_mind;
        let slack = rhs - er_conv;
        Self {
            er_conv,
            er_shift,
            er_ae,
            er_mind,
            a,
            b,
            rhs,
            slack,
            holds: slack >= -HOLD_TOL,
            methods: TermMethods { er_conv: mode, er_shift: mode, er_ae: mode, er_mind: mode },
            certified: mode == BoundMode::Exact,
        }
    }
}

fn distance(mode: BoundMode, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    match mode {
        BoundMode::Exact => Ok(exact_w1(mu, nu)?.0),
        BoundMode::Sliced => sliced_w1(mu, nu, SLICED_PROJECTIONS, SLICED_SEED),
    }
}

/// The measure used for a data set: itself when exact or small, otherwise a
/// seeded draw of [`SLICED_SAMPLES`] atoms.
fn data_measure(mode: BoundMode, m: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    if mode == BoundMode::Exact || m.len() <= SLICED_SAMPLES {
        return Ok(m.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SLICED_SEED);
    let index = WeightedIndex::new(m.weights()).map_err(|e| Error::InvalidArgument(format!("weights: {e}")))?;
    let idx: Vec<usize> = (0..SLICED_SAMPLES).map(|_| index.sample(&mut rng)).collect();
    EmpiricalMeasure::uniform(m.atoms().select_rows(&idx))
}

fn prior_measure(mode: BoundMode, prior: &PriorSpec) -> Result<EmpiricalMeasure> {
    prior.validate()?;
    match prior.as_measure() {
        Some(m) => m,
        None if mode == BoundMode::Exact => Err(Error::InvalidArgument(
            "exact bound verification needs a finitely supported prior".into(),
        )),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(SLICED_SEED.wrapping_add(1));
            EmpiricalMeasure::uniform(prior.sample(SLICED_SAMPLES, &mut rng)?)
        }
    }
}

fn constants(encoder: &Network, decoder: &Network) -> Result<(f64, f64)> {
    Ok((1.0 + lipschitz_upper_chain(&[encoder, decoder])?, lipschitz_upper(decoder)?))
}

/// Evaluates every term of the transfer bound for the generator
/// `decoder ∘ mind` trained on `target` with an autoencoder fitted to `source`.
pub fn verify_bound(
    encoder: &Network,
    decoder: &Network,
    source: &EmpiricalMeasure,
    target: &EmpiricalMeasure,
    mind: &Network,
    prior: &PriorSpec,
    mode: BoundMode,
) -> Result<BoundReport> {
    if mind.input_width() != prior.dim {
        return Err(Error::Dimension { expected: mind.input_width(), got: prior.dim });
    }
    let z = prior_measure(mode, prior)?;
    let source = data_measure(mode, source)?;
    let target = data_measure(mode, target)?;
    let latent_fake = pushforward_net(&z, mind)?;
    let fake = pushforward_net(&latent_fake, decoder)?;
    let er_conv = distance(mode, &target, &fake)?;
    let er_shift = distance(mode, &source, &target)?;
    let er_ae = distance(mode, &ae_pushforward(encoder, decoder, &source)?, &source)?;
    let er_mind = distance(mode, &encode_dataset(encoder, &target)?, &latent_fake)?;
    let (a, b) = constants(encoder, decoder)?;
    Ok(BoundReport::assemble(er_conv, er_shift, er_ae, er_mind, a, b, mode))
}

/// The autoencoder-only bound `W(data, decoder♯prior) <= er_ae + b * W(encoder♯data, prior)`.
/// Exact when the prior is finitely supported.
pub fn wae_bound(encoder: &Network, decoder: &Network, data: &EmpiricalMeasure, prior: &PriorSpec) -> Result<BoundReport> {
    let mode = if prior.is_compact() && prior.as_measure().is_some() { BoundMode::Exact } else { BoundMode::Sliced };
    if encoder.output_width() != prior.dim {
        return Err(Error::Dimension { expected: encoder.output_width(), got: prior.dim });
    }
    let z = prior_measure(mode, prior)?;
    let data = data_measure(mode, data)?;
    let er_conv = distance(mode, &data, &pushforward_net(&z, decoder)?)?;
    let er_ae = distance(mode, &ae_pushforward(encoder, decoder, &data)?, &data)?;
    let er_mind = distance(mode, &encode_dataset(encoder, &data)?, &z)?;
    let (a, b) = constants(encoder, decoder)?;
    Ok(BoundReport::assemble(er_conv, 0.0, er_ae, er_mind, a, b, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::tensor::Tensor;

    fn pts(p: &[[f64; 2]]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_points(&p.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_autoencoder_reduction() {
        let id = Network::identity(2).unwrap();
        let source = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        let target = pts(&[[0.0, 1.0], [1.0, 1.0]]);
        let prior = PriorSpec::finite(&pts(&[[0.2, 0.3], [0.5, 0.5], [-0.1, 0.0]]));
        let mind = Network::linear(Tensor::eye(2), Tensor::vector(vec![0.1, 0.0]), Activation::Tanh).unwrap();
        let r = verify_bound(&id, &id, &source, &target, &mind, &prior, BoundMode::Exact).unwrap();
        assert!((r.a - 2.0).abs() < 1e-12 && (r.b - 1.0).abs() < 1e-12);
        assert_eq!(r.er_ae, 0.0);
        assert!((r.er_conv - r.er_mind).abs() < 1e-12);
        assert!((r.er_shift - 1.0).abs() < 1e-12);
        assert!((r.slack - 2.0 * r.er_shift).abs() < 1e-9);
        assert!(r.holds && r.certified);
    }

    #[test]
    fn exact_mode_needs_finite_prior() {
        let id = Network::identity(2).unwrap();
        let m = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(verify_bound(&id, &id, &m, &m, &id, &PriorSpec::gaussian(2), BoundMode::Exact).is_err());
        let r = verify_bound(&id, &id, &m, &m, &id, &PriorSpec::gaussian(2), BoundMode::Sliced).unwrap();
        assert!(!r.certified);
        assert_eq!(r.methods.er_conv, BoundMode::Sliced);
        assert_eq!(r.er_shift, 0.0);
    }

    #[test]
    fn constant_decoder_wae() {
        let enc = Network::identity(2).unwrap();
        let dec = Network::linear(Tensor::zeros(&[2, 2]), Tensor::vector(vec![0.5, 0.5]), Activation::None).unwrap();
        let data = pts(&[[0.0, 0.0], [1.0, 1.0], [0.5, 0.0]]);
        let prior = PriorSpec::finite(&pts(&[[0.3, 0.3]]));
        let r = wae_bound(&enc, &dec, &data, &prior).unwrap();
        assert_eq!(r.b, 0.0);
        assert!((r.er_conv - r.er_ae).abs() < 1e-12);
        assert!(r.holds);
    }
}
