//! Expert training: PPO actor-critic with an adversarial motion prior.

pub mod disc;
pub mod ppo;
pub mod reference;
pub mod reward;
pub mod train;

pub use disc::{discriminator_update, Discriminator, DiscriminatorConfig, DiscriminatorStats};
pub use reference::{
    generate_reference_clips, state_features, transition_features, Clip, ClipFrame, GaitParams,
    MotionLibrary, STATE_FEATURE_DIM, TRANSITION_FEATURE_DIM,
};
pub use reward::{regularization_reward, style_reward, task_reward, RewardWeights};
