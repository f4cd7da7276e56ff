//! Task, regularization, and style reward terms.

use serde::{Deserialize, Serialize};

use crate::sim::{RobotModel, NUM_JOINTS};

/// Reward weights; regularization defaults follow the standard table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_omega: f64,
    pub w_style: f64,
    /// Joint-limit violation penalty per rad.
    pub w_joint_limits: f64,
    /// Squared joint velocity penalty.
    pub w_joint_vel: f64,
    /// Squared joint acceleration penalty.
    pub w_joint_acc: f64,
    /// Squared non-flat base orientation penalty.
    pub w_orientation: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_v: 1.0,
            w_omega: 0.5,
            w_style: 0.5,
            w_joint_limits: -4.0,
            w_joint_vel: -3.0e-5,
            w_joint_acc: -1.0e-7,
            w_orientation: -1.0,
        }
    }
}

/// Velocity-tracking task reward:
/// `w_v exp(-|vhat - v|) + w_omega exp(-|omegahat - omega|)`.
pub fn task_reward(v_x: f64, v_hat_x: f64, omega: f64, omega_hat: f64, w: &RewardWeights) -> f64 {
    w.w_v * (-(v_hat_x - v_x).abs()).exp() + w.w_omega * (-(omega_hat - omega).abs()).exp()
}

/// Sum of the regularization penalties (all terms <= 0).
pub fn regularization_reward(
    joint_pos: &[f64; NUM_JOINTS],
    joint_vel: &[f64; NUM_JOINTS],
    joint_acc: &[f64; NUM_JOINTS],
    projected_gravity: &[f64; 2],
    model: &RobotModel,
    w: &RewardWeights,
) -> f64 {
    let mut limit_violation = 0.0;
    for i in 0..NUM_JOINTS {
        let (lo, hi) = model.joint_limits[i];
        limit_violation += (joint_pos[i] - hi).max(0.0) + (lo - joint_pos[i]).max(0.0);
    }
    let vel_sq: f64 = joint_vel.iter().map(|v| v * v).sum();
    let acc_sq: f64 = joint_acc.iter().map(|a| a * a).sum();
    // the flat-base residual is the horizontal component of gravity in the
    // base frame
    let g_xy_sq = projected_gravity[0] * projected_gravity[0];
    w.w_joint_limits * limit_violation
        + w.w_joint_vel * vel_sq
        + w.w_joint_acc * acc_sq
        + w.w_orientation * g_xy_sq
}

/// AMP-style imitation reward from a discriminator score:
/// `max(0, 1 - 0.25 (d - 1)^2)`, always in [0, 1].
pub fn style_reward(d: f64) -> f64 {
    (1.0 - 0.25 * (d - 1.0) * (d - 1.0)).max(0.0)
}
