use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_EPS: f64 = 1e-8;
/// Betas for the latent GAN networks and the baselines.
pub const GAN_BETAS: (f64, f64) = (0.1, 0.5);
/// Alternative GAN betas used for the high-resolution runs.
pub const GAN_ZERO_BETAS: (f64, f64) = (0.0, 0.5);
/// Betas for the autoencoder.
pub const AUTOENCODER_BETAS: (f64, f64) = (0.9, 0.9);

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(lr: f64, betas: (f64, f64), params: &[Tensor]) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&betas.0) || !(0.0..1.0).contains(&betas.1) {
            return Err(Error::InvalidArgument(format!("adam lr {lr} betas {betas:?}")));
        }
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: DEFAULT_EPS,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// One update. Returns the new parameters and the advanced state.
    pub fn step(&self, params: &[Tensor], grads: &[Tensor]) -> Result<(Vec<Tensor>, AdamState)> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let t = self.t + 1;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let mut next = self.clone();
        next.t = t;
        let mut updated = Vec::with_capacity(params.len());
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(Error::Shape(format!("adam: param {:?} grad {:?}", p.shape(), g.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam gradient", node: k });
            }
            let mut out = p.clone();
            let m = next.m[k].data_mut();
            let v = next.v[k].data_mut();
            for (i, (&gi, o)) in g.data().iter().zip(out.data_mut()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *o -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            updated.push(out);
        }
        Ok((updated, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let p = vec![Tensor::vector(vec![1.0, -2.0])];
        let s = AdamState::new(DEFAULT_LR, GAN_BETAS, &p).unwrap();
        let (q, s2) = s.step(&p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(q, p);
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let p = vec![Tensor::scalar(0.5)];
        let s = AdamState::new(1e-3, (0.1, 0.5), &p).unwrap();
        let (q, s2) = s.step(&p, &[Tensor::scalar(2.0)]).unwrap();
        let expected = 0.5 - 1e-3 * (2.0 / (2.0 + 1e-8));
        assert!((q[0].item() - expected).abs() < 1e-15);
        assert!((s2.m[0].item() - 1.8).abs() < 1e-15);
        assert!((s2.v[0].item() - 2.0).abs() < 1e-15);
        // the original state is untouched
        assert_eq!(s.t, 0);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(DEFAULT_LR, 1e-3);
        assert_eq!(AUTOENCODER_BETAS, (0.9, 0.9));
    }

    #[test]
    fn errors() {
        let p = vec![Tensor::scalar(0.5)];
        let s = AdamState::new(1e-3, GAN_BETAS, &p).unwrap();
        assert!(s.step(&p, &[Tensor::vector(vec![1.0, 2.0])]).is_err());
        assert!(s.step(&p, &[Tensor::scalar(f64::NAN)]).is_err());
        assert!(s.step(&p, &[]).is_err());
        assert!(AdamState::new(0.0, GAN_BETAS, &p).is_err());
        assert!(AdamState::new(1e-3, (1.0, 0.5), &p).is_err());
    }
}
