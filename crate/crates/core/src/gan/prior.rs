use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::EmpiricalMeasure;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    Gaussian,
    /// Uniform on the box `[low, high]^dim`.
    UniformBox { low: f64, high: f64 },
    /// Finitely supported prior; atoms are rows of a `(k, dim)` matrix.
    Finite { atoms: Tensor, weights: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: PriorKind,
}

impl PriorSpec {
    pub fn gaussian(dim: usize) -> Self {
        Self { dim, kind: PriorKind::Gaussian }
    }

    /// Uniform on `[-1, 1]^dim`, matching the tanh range of encoders.
    pub fn unit_box(dim: usize) -> Self {
        Self { dim, kind: PriorKind::UniformBox { low: -1.0, high: 1.0 } }
    }

    pub fn finite(measure: &EmpiricalMeasure) -> Self {
        Self {
            dim: measure.dim(),
            kind: PriorKind::Finite { atoms: measure.atoms().clone(), weights: measure.weights().to_vec() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("prior dimension must be positive".into()));
        }
        match &self.kind {
            PriorKind::Gaussian => Ok(()),
            PriorKind::UniformBox { low, high } => {
                if low < high && low.is_finite() && high.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidSpec(format!("empty box [{low}, {high}]")))
                }
            }
            PriorKind::Finite { .. } => {
                let m = self.as_measure().expect("finite")?;
                if m.dim() != self.dim {
                    return Err(Error::Dimension { expected: self.dim, got: m.dim() });
                }
                Ok(())
            }
        }
    }

    /// Compact support is what the bound verifier needs.
    pub fn is_compact(&self) -> bool {
        !matches!(self.kind, PriorKind::Gaussian)
    }

    /// The prior as a measure, when it is finitely supported.
    pub fn as_measure(&self) -> Option<Result<EmpiricalMeasure>> {
        match &self.kind {
            PriorKind::Finite { atoms, weights } => Some(EmpiricalMeasure::new(atoms.clone(), weights.clone())),
            _ => None,
        }
    }

    /// Draws `n` samples as an `(n, dim)` matrix.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
        let data: Vec<f64> = match &self.kind {
            PriorKind::Gaussian => (0..n * self.dim).map(|_| StandardNormal.sample(rng)).collect(),
            PriorKind::UniformBox { low, high } => (0..n * self.dim).map(|_| rng.gen_range(*low..*high)).collect(),
            PriorKind::Finite { atoms, weights } => {
                let index = WeightedIndex::new(weights)
                    .map_err(|e| Error::InvalidSpec(format!("finite prior weights: {e}")))?;
                let mut out = Vec::with_capacity(n * self.dim);
                for _ in 0..n {
                    out.extend_from_slice(atoms.row(index.sample(rng)));
                }
                out
            }
        };
        Tensor::matrix(n, self.dim, data)
    }
}
