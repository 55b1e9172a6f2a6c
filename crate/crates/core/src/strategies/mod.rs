//! Training objectives for the three generator families, over toy networks:
//!
//! * coupled: a rectified-flow velocity net plus a trainable latent-to-splat decoder;
//! * feedforward: a texture net predicting splat appearance for fixed geometry;
//! * mvdiff: a multi-view latent denoiser decoded by a frozen 2D codec.
//!
//! Each step renders or decodes all four views, sums the supervision loss over
//! them and back-propagates into the trainable components only.

mod ablation;
mod codec;
mod fixture;
mod models;
mod schedule;
mod steps;
mod trainer;

pub use ablation::{run_ablation, shift_gap, write_ablation_csv, AblationRow, AblationVariant};
pub use codec::{decode_views, encode_views, Codec2D, CODEC_FACTOR};
pub use fixture::{TrainAsset, FIXTURE_SPLATS, FIXTURE_TEXT};
pub use models::{
    LossRecord, ModelHandles, Strategy, TrainState, TrainableFlags, DECODER2D, DECODER3D, NOISE_NET, TEXTURE_NET,
    VELOCITY_NET,
};
pub use schedule::{
    ddpm_noise, ddpm_predict_clean, rf_noise, rf_predict_clean, MultiViewLatents, NoiseSchedule, COSINE_OFFSET,
    DEFAULT_DDPM_STEPS,
};
pub use steps::{
    coupled_batch_gradients, coupled_gradients, ddpm_decode_clean, feedforward_gradients, position_features, predict_appearance, text_embedding,
    time_features, train_coupled_step, train_feedforward_step, train_mv_diffusion_step, CoupledDraw, Grads, LossParts,
    MvDraw, Objective, TEXT_DIM,
};
pub use trainer::{
    convergence_run, init_models, moving_average, moving_average_rise, moving_average_rise_se, write_loss_csv, Checkpoint, ConvergenceReport,
    LrSchedule, TrainConfig, Trainer, CHECKPOINT_VERSION, MOVING_AVERAGE_AFTER, MOVING_AVERAGE_NOISE_BAND, MOVING_AVERAGE_WINDOW,
};

#[cfg(test)]
mod tests;
