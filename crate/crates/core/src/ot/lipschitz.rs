//! Certified and empirical Lipschitz constants of networks.
//!
//! The upper bound multiplies the operator norms of the affine layers, with
//! eval-mode batch norm folded in as a diagonal rescaling. relu and tanh are
//! 1-Lipschitz and do not contribute.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::exact::euclidean;
use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct PowerIteration {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self { max_iters: 200, rel_tol: 1e-10, seed: 0x11ce_5eed }
    }
}

/// Largest singular value of a matrix by power iteration on `W^T W`.
/// Fails with the final relative change when the iteration budget runs out.
pub fn spectral_norm(w: &Tensor, opts: PowerIteration) -> Result<f64> {
    let (r, c) = (w.rows(), w.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut x);
    let mut estimate = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iters {
        // y = W x, z = W^T y
        let mut y = vec![0.0; r];
        for i in 0..r {
            y[i] = w.row(i).iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        let mut z = vec![0.0; c];
        for i in 0..r {
            for (zj, wij) in z.iter_mut().zip(w.row(i)) {
                *zj += wij * y[i];
            }
        }
        let sigma_sq = z.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let next = sigma_sq.max(0.0).sqrt();
        let norm_z = normalize(&mut z);
        if norm_z == 0.0 {
            return Ok(0.0);
        }
        change = (next - estimate).abs() / next.max(f64::MIN_POSITIVE);
        estimate = next;
        x = z;
        if change < opts.rel_tol {
            return Ok(estimate);
        }
    }
    Err(Error::PowerIteration { residual: change })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    n
}

/// Spectral norm from a dense symmetric eigendecomposition of `W^T W`.
pub fn spectral_norm_eig(w: &Tensor) -> f64 {
    let m = DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
    let gram = m.transpose() * &m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt()
}

/// Operator-norm bound for each affine layer of `net`.
pub fn layer_norms(net: &Network) -> Result<Vec<f64>> {
    net.layers()
        .iter()
        .map(|layer| {
            let mut w = layer.weight.clone();
            if let Some(bn) = &layer.bn {
                let gain = bn.eval_gain();
                let cols = w.cols();
                for (k, v) in w.data_mut().iter_mut().enumerate() {
                    *v *= gain[k % cols];
                }
            }
            match spectral_norm(&w, PowerIteration::default()) {
                Ok(s) => Ok(s),
                // near-degenerate top singular values: fall back to the direct solver
                Err(Error::PowerIteration { .. }) => Ok(spectral_norm_eig(&w)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// A certified constant `C` with `|net(x) - net(y)| <= C |x - y|` in eval mode.
pub fn lipschitz_upper(net: &Network) -> Result<f64> {
    Ok(layer_norms(net)?.iter().product())
}

/// Certified constant for the composition `nets[k-1] ∘ ... ∘ nets[0]`.
pub fn lipschitz_upper_chain(nets: &[&Network]) -> Result<f64> {
    for pair in nets.windows(2) {
        if pair[0].output_width() != pair[1].input_width() {
            return Err(Error::Dimension { expected: pair[0].output_width(), got: pair[1].input_width() });
        }
    }
    nets.iter().try_fold(1.0, |acc, n| Ok(acc * lipschitz_upper(n)?))
}

/// Empirical lower witness: the largest difference quotient over all pairs of
/// distinct sample atoms.
pub fn lipschitz_lower(f: impl Fn(&Tensor) -> Result<Tensor>, samples: &EmpiricalMeasure) -> Result<f64> {
    let images = f(samples.atoms())?;
    if images.rows() != samples.len() {
        return Err(Error::Shape("map changed the number of atoms".into()));
    }
    let mut best: Option<f64> = None;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let dx = euclidean(samples.atom(i), samples.atom(j));
            if dx == 0.0 {
                continue;
            }
            let q = euclidean(images.row(i), images.row(j)) / dx;
            best = Some(best.map_or(q, |b: f64| b.max(q)));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("need at least two distinct atoms".into()))
}
