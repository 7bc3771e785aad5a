//! Losses, metrics, optimisation, inference helpers and checkpoints.

mod ablation;
mod checkpoint;
mod config;
mod infer;
pub mod loss;
mod trainer;

pub use ablation::{ablation_table, run_ablation, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{TrainConfig, DEFAULT_SEED};
pub use infer::{tile_layout, tiled_infer, tta_infer, Transform, TtaOutput};
pub use loss::{
    loss_l1_tonemapped, loss_value, mu_law, mu_law_scalar, mu_law_var, negative_clamp_count, psnr,
    psnr_from_mse, psnr_with_cap, LossConfig, PsnrDomain, TonemapDenominator, DEFAULT_PSNR_CAP,
};
pub use trainer::{
    batch_loss, epoch_order, evaluate, loss_and_grads, metric_log, resume, sample_gamma_for,
    train_loop, Dataset, EpochMetrics, StepRecord, TrainOutcome,
};
