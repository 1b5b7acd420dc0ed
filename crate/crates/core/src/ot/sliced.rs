use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};

/// Closed-form W1 on the line: the integral of `|F_mu - F_nu|`.
pub fn w1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "w1_1d needs one-dimensional measures, got {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    Ok(w1_line(mu.atoms().data(), mu.weights(), nu.atoms().data(), nu.weights()))
}

fn w1_line(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> f64 {
    let mut events: Vec<(f64, f64)> = xs
        .iter()
        .zip(wx)
        .map(|(&x, &w)| (x, w))
        .chain(ys.iter().zip(wy).map(|(&y, &w)| (y, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut diff = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        area += diff.abs() * (pair[1].0 - pair[0].0);
    }
    area
}

/// Mean and standard error of the per-direction 1-D distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicedEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Average of 1-D W1 distances between projections on `n_projections`
/// random unit directions. Directions come from a seeded stream, so a run
/// with more projections extends the one with fewer.
pub fn sliced_w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, n_projections: usize, seed: u64) -> Result<f64> {
    Ok(sliced_w1_estimate(mu, nu, n_projections, seed)?.value)
}

pub fn sliced_w1_estimate(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_projections: usize,
    seed: u64,
) -> Result<SlicedEstimate> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension { expected: mu.dim(), got: nu.dim() });
    }
    if n_projections == 0 {
        return Err(Error::InvalidArgument("at least one projection is required".into()));
    }
    let d = mu.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_projections);
    let mut dir = vec![0.0; d];
    for _ in 0..n_projections {
        loop {
            for c in dir.iter_mut() {
                *c = StandardNormal.sample(&mut rng);
            }
            let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-12 {
                dir.iter_mut().for_each(|c| *c /= norm);
                break;
            }
        }
        let px = project(mu, &dir);
        let py = project(nu, &dir);
        samples.push(w1_line(&px, mu.weights(), &py, nu.weights()));
    }
    let k = samples.len() as f64;
    let value = samples.iter().sum::<f64>() / k;
    let std_error = if samples.len() > 1 {
        let var = samples.iter().map(|s| (s - value) * (s - value)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(SlicedEstimate { value, std_error })
}

fn project(m: &EmpiricalMeasure, dir: &[f64]) -> Vec<f64> {
    (0..m.len()).map(|i| m.atom(i).iter().zip(dir).map(|(a, b)| a * b).sum()).collect()
}
