use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// A finitely supported probability measure: `n` atoms in `R^d` stored as
/// the rows of a matrix, with non-negative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Tensor,
    weights: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl EmpiricalMeasure {
    pub fn new(atoms: Tensor, weights: Vec<f64>) -> Result<Self> {
        if atoms.shape().len() != 2 || atoms.rows() == 0 {
            return Err(Error::InvalidArgument("a measure needs at least one atom".into()));
        }
        if weights.len() != atoms.rows() {
            return Err(Error::Shape(format!("{} weights for {} atoms", weights.len(), atoms.rows())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        if !atoms.is_finite() {
            return Err(Error::InvalidArgument("atoms must be finite".into()));
        }
        Ok(Self { atoms, weights })
    }

    /// Equal weights on every row of `atoms`.
    pub fn uniform(atoms: Tensor) -> Result<Self> {
        let n = atoms.rows();
        Self::new(atoms, vec![1.0 / n.max(1) as f64; n])
    }

    /// Rescales arbitrary non-negative masses to unit total.
    pub fn normalized(atoms: Tensor, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("total mass must be positive".into()));
        }
        let mut weights: Vec<f64> = masses.iter().map(|m| m / total).collect();
        // push the rounding residue onto the heaviest atom
        let residue = 1.0 - weights.iter().sum::<f64>();
        if let Some((k, _)) = weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
            weights[k] += residue;
        }
        Self::new(atoms, weights)
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        Self::uniform(Tensor::from_rows(points)?)
    }

    pub fn atoms(&self) -> &Tensor {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        self.atoms.row(i)
    }

    /// Keeps the atoms at `idx`, renormalizing their weights.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let masses = idx.iter().map(|&i| self.weights[i]).collect();
        Self::normalized(self.atoms.select_rows(idx), masses)
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (i, w) in self.weights.iter().enumerate() {
            for (k, x) in self.atom(i).iter().enumerate() {
                m[k] += w * x;
            }
        }
        m
    }
}

/// Maps every atom through `f`, keeping the weights.
pub fn pushforward(
    measure: &EmpiricalMeasure,
    f: impl Fn(&Tensor) -> Result<Tensor>,
) -> Result<EmpiricalMeasure> {
    let mapped = f(measure.atoms())?;
    if mapped.rows() != measure.len() || mapped.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "map returned {:?} for {} atoms",
            mapped.shape(),
            measure.len()
        )));
    }
    Ok(EmpiricalMeasure { atoms: mapped, weights: measure.weights.clone() })
}

/// Push-forward through a network evaluated in eval mode.
pub fn pushforward_net(measure: &EmpiricalMeasure, net: &Network) -> Result<EmpiricalMeasure> {
    if net.input_width() != measure.dim() {
        return Err(Error::Dimension { expected: net.input_width(), got: measure.dim() });
    }
    pushforward(measure, |x| net.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let atoms = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(EmpiricalMeasure::new(atoms.clone(), vec![0.5, 0.6]).is_err());
        assert!(EmpiricalMeasure::new(atoms.clone(), vec![1.0]).is_err());
        assert!(EmpiricalMeasure::new(atoms.clone(), vec![1.5, -0.5]).is_err());
        assert!(EmpiricalMeasure::new(atoms.clone(), vec![1.0, 0.0]).is_ok());
        assert!(EmpiricalMeasure::uniform(Tensor::zeros(&[0, 2])).is_err());
        let m = EmpiricalMeasure::normalized(atoms, vec![1.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn pushforward_doubling() {
        let m = EmpiricalMeasure::from_points(&[vec![1.0]]).unwrap();
        let p = pushforward(&m, |x| Ok(x.map(|v| 2.0 * v))).unwrap();
        assert_eq!(p.atom(0), &[2.0]);
        assert_eq!(p.weights(), m.weights());
        let id = pushforward(&m, |x| Ok(x.clone())).unwrap();
        assert_eq!(id, m);
    }

    #[test]
    fn pushforward_net_checks_dimension() {
        let m = EmpiricalMeasure::from_points(&[vec![1.0, 2.0]]).unwrap();
        let net = Network::identity(3).unwrap();
        assert!(pushforward_net(&m, &net).is_err());
    }
}
