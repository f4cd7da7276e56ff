//! Conditional DDPM diffusion policy: noise schedule, transformer denoiser,
//! ancestral sampler with receding-horizon control, and training.

pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use model::{Denoiser, DiffusionConfig, ModelError, COND_TOKENS};
pub use sampler::{
    ddpm_sample, receding_horizon_act, sample_actions, ControllerState, NormStats,
};
pub use schedule::{
    build_noise_schedule, forward_noising, timestep_embedding, NoiseSchedule, ScheduleConfig,
    ScheduleError,
};
pub use train::{
    assemble_windows, noise_loss, train_dp, training_step, validation_loss, DpArtifact, DpError,
    DpEpochStats, DpTrainConfig, DpTrainResult, Window,
};
