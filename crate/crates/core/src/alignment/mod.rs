//! Bidirectional contrastive objective and the pre-training loop.

mod loss;
mod optim;
mod train;

pub use loss::{
    contrastive_loss, contrastive_loss_from_scores, contrastive_loss_values, temperature, ContrastiveBatch, LossValues,
    LossVars, Temperature, TAU_MAX, TAU_MIN,
};
pub use optim::AdamW;
pub use train::{
    batch_gradients, batch_loss, epoch_order, train, EpochMetrics, PairExample, TextContext, TrainConfig,
    TrainOutcome, Trainer,
};
