//! Unsupervised translation between two clusters.

mod loss;
mod model;
mod noise;
mod train;

pub use loss::{adv_loss, bt_loss, bt_loss_with, dae_loss, disc_loss, disc_step_loss, total_loss, LossParts, LossWeights};
pub use model::{Discriminator, Lang, UmtArch, UmtModel, UmtNet, UMT_KIND};
pub use noise::{noise_apply, NoiseConfig};
pub use train::{
    evaluate_losses, history_csv, init_word_by_word, train_umt, write_history, InitMode, UmtLogRow,
    UmtTrainConfig, UmtTraining,
};
