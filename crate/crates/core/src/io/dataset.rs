use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::idx::load_idx_parts;
use crate::error::{Error, Result};
use crate::ot::EmpiricalMeasure;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `k` Gaussian blobs on a circle.
    Ring,
    /// `k x k` Gaussian blobs on a square lattice.
    Grid,
    /// Two interleaved half circles.
    Moons,
    /// Every atom at `point`.
    PointMass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub k: usize,
    pub radius: f64,
    pub sigma: f64,
    /// Rotation of the whole pattern, in radians.
    pub rotation: f64,
    pub point: Vec<f64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { k: 4, radius: 0.7, sigma: 0.05, rotation: 0.0, point: vec![0.5, 0.5] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Synthetic {
        family: Family,
        n: usize,
        seed: u64,
        #[serde(default)]
        params: SynthParams,
    },
    Idx {
        images_path: PathBuf,
        #[serde(default)]
        labels_path: Option<PathBuf>,
        /// Keep only the first `limit` images.
        #[serde(default)]
        limit: Option<usize>,
    },
}

/// Features with optional one-hot labels, kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub features: EmpiricalMeasure,
    pub labels: Option<Tensor>,
}

impl LabeledData {
    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.as_ref().map_or(0, Tensor::cols)
    }

    /// Features with the label block appended to every atom.
    pub fn joined(&self) -> Result<EmpiricalMeasure> {
        match &self.labels {
            Some(l) => EmpiricalMeasure::new(self.features.atoms().concat_cols(l)?, self.features.weights().to_vec()),
            None => Ok(self.features.clone()),
        }
    }
}

fn one_hot(classes: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0; classes.len() * k];
    for (i, &c) in classes.iter().enumerate() {
        data[i * k + c] = 1.0;
    }
    Tensor::matrix(classes.len(), k, data).expect("sized")
}

/// Generates a synthetic data set with one-hot component labels. Atoms are
/// clamped to `[-1, 1]^d`. Component `i % k` is assigned to atom `i`.
pub fn synth_labeled(family: Family, n: usize, seed: u64, p: &SynthParams) -> Result<LabeledData> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(p.sigma >= 0.0) || !p.radius.is_finite() || !p.rotation.is_finite() {
        return Err(Error::InvalidSpec(format!("synthetic parameters {p:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = |rng: &mut ChaCha8Rng| -> f64 { p.sigma * rng.sample::<f64, _>(StandardNormal) };
    let (cos_r, sin_r) = (p.rotation.cos(), p.rotation.sin());
    let rotate = |x: f64, y: f64| (cos_r * x - sin_r * y, sin_r * x + cos_r * y);
    let (dim, k, rows): (usize, usize, Vec<Vec<f64>>) = match family {
        Family::Ring => {
            if p.k == 0 {
                return Err(Error::InvalidSpec("ring needs k >= 1".into()));
            }
            let rows = (0..n)
                .map(|i| {
                    let t = 2.0 * PI * (i % p.k) as f64 / p.k as f64;
                    let (cx, cy) = rotate(p.radius * t.cos(), p.radius * t.sin());
                    vec![cx + noise(&mut rng), cy + noise(&mut rng)]
                })
                .collect();
            (2, p.k, rows)
        }
        Family::Grid => {
            if p.k == 0 {
                return Err(Error::InvalidSpec("grid needs k >= 1".into()));
            }
            let coord = |j: usize| if p.k == 1 { 0.0 } else { p.radius * (2.0 * j as f64 / (p.k - 1) as f64 - 1.0) };
            let rows = (0..n)
                .map(|i| {
                    let c = i % (p.k * p.k);
                    let (cx, cy) = rotate(coord(c % p.k), coord(c / p.k));
                    vec![cx + noise(&mut rng), cy + noise(&mut rng)]
                })
                .collect();
            (2, p.k * p.k, rows)
        }
        Family::Moons => {
            let rows = (0..n)
                .map(|i| {
                    let t = PI * rng.gen::<f64>();
                    let (x, y) = if i % 2 == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                    // the pair of moons spans [-1, 2] x [-0.5, 1]
                    let (x, y) = rotate(p.radius * (x - 0.5) / 1.5, p.radius * (y - 0.25) / 0.75);
                    vec![x + noise(&mut rng), y + noise(&mut rng)]
                })
                .collect();
            (2, 2, rows)
        }
        Family::PointMass => {
            if p.point.is_empty() || p.point.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::InvalidSpec(format!("point {:?} must lie in [-1, 1]^d", p.point)));
            }
            (p.point.len(), 1, vec![p.point.clone(); n])
        }
    };
    let data = rows.into_iter().flatten().map(|v| v.clamp(-1.0, 1.0)).collect();
    let features = EmpiricalMeasure::uniform(Tensor::matrix(n, dim, data)?)?;
    let classes: Vec<usize> = (0..n).map(|i| i % k).collect();
    Ok(LabeledData { features, labels: Some(one_hot(&classes, k)) })
}

/// Synthetic data set without labels.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<EmpiricalMeasure> {
    match spec {
        DatasetSpec::Synthetic { family, n, seed, params } => Ok(synth_labeled(*family, *n, *seed, params)?.features),
        DatasetSpec::Idx { .. } => Err(Error::InvalidSpec("synth_dataset needs a synthetic spec".into())),
    }
}

/// Loads any data set. Synthetic sets always carry component labels; IDX sets
/// carry labels when a label file is given.
pub fn load_dataset(spec: &DatasetSpec) -> Result<LabeledData> {
    match spec {
        DatasetSpec::Synthetic { family, n, seed, params } => synth_labeled(*family, *n, *seed, params),
        DatasetSpec::Idx { images_path, labels_path, limit } => {
            let (features, labels) = load_idx_parts(images_path, labels_path.as_deref())?;
            match limit {
                Some(l) if *l < features.len() => {
                    let idx: Vec<usize> = (0..*l).collect();
                    Ok(LabeledData {
                        features: EmpiricalMeasure::uniform(features.atoms().select_rows(&idx))?,
                        labels: labels.map(|t| t.select_rows(&idx)),
                    })
                }
                _ => Ok(LabeledData { features, labels }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec::Synthetic { family, n, seed, params: SynthParams::default() }
    }

    #[test]
    fn point_mass_and_determinism() {
        let m = synth_dataset(&spec(Family::PointMass, 5, 0)).unwrap();
        assert_eq!(m.len(), 5);
        assert!((0..5).all(|i| m.atom(i) == [0.5, 0.5]));
        for f in [Family::Ring, Family::Grid, Family::Moons] {
            let a = synth_dataset(&spec(f, 50, 9)).unwrap();
            assert_eq!(a, synth_dataset(&spec(f, 50, 9)).unwrap());
            assert_ne!(a, synth_dataset(&spec(f, 50, 10)).unwrap());
            assert!(a.atoms().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn ring_blob_means() {
        let d = synth_labeled(Family::Ring, 4000, 3, &SynthParams::default()).unwrap();
        let labels = d.labels.unwrap();
        let tol = 3.0 * 0.05 / (1000f64).sqrt();
        for j in 0..4 {
            let rows: Vec<usize> = (0..4000).filter(|&i| labels.row(i)[j] == 1.0).collect();
            assert_eq!(rows.len(), 1000);
            let t = 2.0 * PI * j as f64 / 4.0;
            let centre = [0.7 * t.cos(), 0.7 * t.sin()];
            for (c, centre_c) in centre.iter().enumerate() {
                let mean: f64 = rows.iter().map(|&i| d.features.atom(i)[c]).sum::<f64>() / 1000.0;
                assert!((mean - centre_c).abs() < tol, "blob {j} coord {c}: {mean}");
            }
        }
    }

    #[test]
    fn rotation_moves_blobs() {
        let p = SynthParams { rotation: PI / 2.0, sigma: 0.0, ..SynthParams::default() };
        let d = synth_labeled(Family::Ring, 4, 0, &p).unwrap();
        assert!((d.features.atom(0)[0]).abs() < 1e-12 && (d.features.atom(0)[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        let bad = SynthParams { point: vec![2.0], ..SynthParams::default() };
        assert!(synth_labeled(Family::PointMass, 3, 0, &bad).is_err());
        assert!(synth_labeled(Family::Ring, 0, 0, &SynthParams::default()).is_err());
        let neg = SynthParams { sigma: -1.0, ..SynthParams::default() };
        assert!(synth_labeled(Family::Ring, 3, 0, &neg).is_err());
    }

    #[test]
    fn serde_shape() {
        let json = r#"{"kind":"synthetic","family":"ring","n":10,"seed":1,"params":{"k":8}}"#;
        let s: DatasetSpec = serde_json::from_str(json).unwrap();
        match &s {
            DatasetSpec::Synthetic { params, .. } => assert_eq!((params.k, params.sigma), (8, 0.05)),
            _ => panic!(),
        }
    }
}
