//! Metrology on finite measures: exact and sliced Wasserstein-1,
//! push-forwards, Lipschitz bounds and the Fréchet distance of fitted
//! Gaussians.

mod exact;
mod gaussian;
mod lipschitz;
mod measure;
mod sliced;

pub use exact::{exact_w1, TransportPlan, MAX_PAIRS};
pub use gaussian::{fit_gaussian, frechet_gaussian_distance, GaussianSummary};
pub use lipschitz::{
    layer_norms, lipschitz_lower, lipschitz_upper, lipschitz_upper_chain, spectral_norm, spectral_norm_eig,
    PowerIteration,
};
pub use measure::{pushforward, pushforward_net, EmpiricalMeasure};
pub use sliced::{sliced_w1, sliced_w1_estimate, w1_1d, SlicedEstimate};
