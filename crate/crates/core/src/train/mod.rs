//! Embedding-network training: forward/backward passes, the center-loss
//! objective, SGD with momentum and per-part learning rates, batch sampling
//! with a fixed non-landmark proportion, and the geographic curriculum.

mod checkpoint;
mod loss;
pub mod math;
mod net;
mod opt;
mod sampler;
mod stage;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{loss_and_gradients, Gradients, LossParts};
pub use net::{
    seeded_rng, Activation, BatchNorm, Centers, Linear, LinearGrad, Network, TrainTrace, BN_EPS,
    BN_MOMENTUM,
};
pub use opt::{make_lr_schedule, sgd_step, LrSchedule, SgdState};
pub use sampler::sample_epoch_batches;
pub use stage::{
    curriculum_train, stage_dataset, train_stage, train_stage_with, CurriculumOutcome, EpochStats,
    StageReport, StageSnapshot, StepLoss, TrainingConfig, LATER_STAGE_ALPHAS, STAGE_ONE_ALPHAS,
};
