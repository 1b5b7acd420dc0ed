//! Wasserstein GAN training with gradient penalty.

mod history;
mod loss;
mod prior;
mod train;

pub use history::{HistoryRecord, TrainHistory};
pub use loss::{critic_loss, generator_loss, gradient_penalty, interpolation_weights, GanLossConfig, LossGraph};
pub use prior::{PriorKind, PriorSpec};
pub use train::{
    finetune_init, train_conditional, train_conditional_observed, train_wgan, train_wgan_observed, ClockMode,
    ConditionalGenerator, Observer, TrainConfig,
};
pub(crate) use train::{as_loss_error, Batcher, Clock};
