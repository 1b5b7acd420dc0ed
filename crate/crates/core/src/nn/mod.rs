//! Dense networks and the optimizer shared by every training loop.

mod adam;
mod mlp;

pub use adam::{AdamState, AUTOENCODER_BETAS, DEFAULT_EPS, DEFAULT_LR, GAN_BETAS, GAN_ZERO_BETAS};
pub use mlp::{Activation, BatchNorm, ForwardNodes, Layer, MlpSpec, Mode, Network, BN_EPS, BN_MOMENTUM};
