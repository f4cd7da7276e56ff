//! Planar biped locomotion pipeline: train a robust expert with adversarial
//! motion priors under domain randomization, distill it into transition
//! datasets of controlled size and diversity, train conditional diffusion
//! policies on each dataset, and evaluate everything under a fixed protocol.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`sim`] — deterministic planar 5-link biped simulation (PD control,
//!   heightfield contact, observations, termination)
//! - [`randomize`] — the eight environment randomization setups
//! - [`nn`] — tape-based reverse-mode autodiff, MLPs, attention, Adam
//! - [`amp`] — expert training: PPO actor-critic plus a style discriminator
//! - [`dataset`] — expert rollout collection and the binary transition format
//! - [`diffusion`] — conditional DDPM action model and receding-horizon control
//! - [`eval`] — the two target environments and three metrics
//! - [`runner`] — declarative config, seeded experiment matrix, reports
//!
//! See the crate examples for runnable entry points into each stage.

pub mod amp;
pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod eval;
pub mod nn;
pub mod randomize;
pub mod runner;
pub mod sim;

pub use sim::{Command, RobotModel, SimState, Terrain};
