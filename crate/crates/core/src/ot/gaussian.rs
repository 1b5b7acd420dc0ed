use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub covariance: Tensor,
}

/// Weighted mean and covariance of a measure.
pub fn fit_gaussian(measure: &EmpiricalMeasure) -> Result<GaussianSummary> {
    if measure.len() < 2 {
        return Err(Error::InvalidArgument("fitting a Gaussian needs at least two atoms".into()));
    }
    let d = measure.dim();
    let mean = measure.mean();
    let mut cov = vec![0.0; d * d];
    for (i, &w) in measure.weights().iter().enumerate() {
        let x = measure.atom(i);
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in 0..d {
                cov[a * d + b] += w * da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in (a + 1)..d {
            let s = 0.5 * (cov[a * d + b] + cov[b * d + a]);
            cov[a * d + b] = s;
            cov[b * d + a] = s;
        }
    }
    Ok(GaussianSummary { mean, covariance: Tensor::matrix(d, d, cov)? })
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Eigenvalues and vectors of a symmetric PSD matrix, with small negative
/// eigenvalues clamped to zero.
fn psd_eigen(m: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let mut values = eig.eigenvalues.clone();
    for v in values.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(Error::NotPsd(*v));
        }
        *v = v.max(0.0);
    }
    Ok((values, eig.eigenvectors))
}

fn sqrt_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = psd_eigen(m)?;
    let root = DMatrix::from_diagonal(&values.map(f64::sqrt));
    Ok(&vectors * root * vectors.transpose())
}

/// Fréchet distance between two Gaussians:
/// `sqrt(|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}))`.
pub fn frechet_gaussian_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.covariance.shape() != [d, d] || b.covariance.shape() != [d, d] {
        return Err(Error::Dimension { expected: d, got: b.mean.len() });
    }
    if a == b {
        return Ok(0.0);
    }
    let sa = to_matrix(&a.covariance);
    let sb = to_matrix(&b.covariance);
    psd_eigen(sb.clone())?;
    let root_a = sqrt_psd(sa.clone())?;
    let inner = &root_a * &sb * &root_a;
    let (cross, _) = psd_eigen(inner)?;
    let trace_cross: f64 = cross.iter().map(|v| v.sqrt()).sum();
    let mean_sq: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let fd2 = mean_sq + sa.trace() + sb.trace() - 2.0 * trace_cross;
    Ok(fd2.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mean: Vec<f64>, cov: Vec<f64>) -> GaussianSummary {
        let d = mean.len();
        GaussianSummary { mean, covariance: Tensor::matrix(d, d, cov).unwrap() }
    }

    #[test]
    fn two_symmetric_atoms() {
        let m = EmpiricalMeasure::from_points(&[vec![-1.0], vec![1.0]]).unwrap();
        let g = fit_gaussian(&m).unwrap();
        assert_eq!(g.mean, vec![0.0]);
        assert_eq!(g.covariance.data(), &[1.0]);
    }

    #[test]
    fn degenerate_fits() {
        let m = EmpiricalMeasure::from_points(&[vec![2.0, 3.0], vec![2.0, 3.0]]).unwrap();
        assert!(fit_gaussian(&m).unwrap().covariance.data().iter().all(|&v| v == 0.0));
        let m = EmpiricalMeasure::new(Tensor::from_rows(&[vec![5.0], vec![-3.0]]).unwrap(), vec![1.0, 0.0]).unwrap();
        let g = fit_gaussian(&m).unwrap();
        assert_eq!(g.mean, vec![5.0]);
        assert_eq!(g.covariance.data(), &[0.0]);
        let single = EmpiricalMeasure::from_points(&[vec![1.0]]).unwrap();
        assert!(fit_gaussian(&single).is_err());
    }

    #[test]
    fn scalar_closed_form() {
        let a = summary(vec![1.0], vec![4.0]);
        let b = summary(vec![-0.5], vec![0.25]);
        let expected = ((1.5f64).powi(2) + (2.0f64 - 0.5).powi(2)).sqrt();
        assert!((frechet_gaussian_distance(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(frechet_gaussian_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mean_shift_only() {
        let cov = vec![2.0, 0.5, 0.5, 1.0];
        let a = summary(vec![0.0, 0.0], cov.clone());
        let b = summary(vec![3.0, 4.0], cov);
        assert!((frechet_gaussian_distance(&a, &b).unwrap() - 5.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let a = summary(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, -1.0]);
        let b = summary(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_gaussian_distance(&b, &a), Err(Error::NotPsd(_))));
        let c = summary(vec![0.0], vec![1.0]);
        assert!(frechet_gaussian_distance(&b, &c).is_err());
    }
}
