//! Robot description and the velocity command.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dynamics::{JointKind, PlanarBody, PlanarChain, PlanarJoint};

pub const NUM_LINKS: usize = 5;
pub const NUM_JOINTS: usize = 4;
/// Generalized coordinates: base x, base z, pitch, then
/// left hip, left knee, right hip, right knee.
pub const DOF: usize = 7;

/// Link order used throughout: torso, left thigh, left shank,
/// right thigh, right shank.
pub const LINK_TORSO: usize = 0;

/// Planar 5-link biped: a torso and two thigh+shank legs, both hips at a
/// common point at the torso base. Feet are short rigid segments welded to
/// the shank ends.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RobotModel {
    /// kg per link.
    pub link_masses: [f64; NUM_LINKS],
    /// m per link.
    pub link_lengths: [f64; NUM_LINKS],
    /// kg m^2 about each link COM.
    pub link_inertias: [f64; NUM_LINKS],
    /// COM distance from the proximal joint along the link, m.
    pub com_offsets: [f64; NUM_LINKS],
    /// (kp, kd) per actuated joint.
    pub pd_gains: [(f64, f64); NUM_JOINTS],
    /// N m per joint.
    pub torque_limits: [f64; NUM_JOINTS],
    /// (lower, upper) rad per joint.
    pub joint_limits: [(f64, f64); NUM_JOINTS],
    /// Coulomb friction torque magnitude, N m.
    pub joint_friction: f64,
    /// Viscous damping, N m s / rad.
    pub joint_damping: f64,
    /// Geometric scale factor k.
    pub scale: f64,
    /// Foot segment extent (heel, toe) along the local x axis at the
    /// shank end, m. heel < 0 < toe.
    pub foot_span: (f64, f64),
    /// Joint angles the action deltas are measured from.
    pub default_pose: [f64; NUM_JOINTS],
    /// Action unit -> joint target offset, rad.
    pub action_scale: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("joint {0} limits must satisfy lower < upper")]
    BadJointLimits(usize),
}

impl Default for RobotModel {
    fn default() -> Self {
        let torso = (30.0, 0.6);
        let thigh = (5.0, 0.4);
        let shank = (3.0, 0.4);
        let rod_inertia = |m: f64, l: f64| m * l * l / 12.0;
        Self {
            link_masses: [torso.0, thigh.0, shank.0, thigh.0, shank.0],
            link_lengths: [torso.1, thigh.1, shank.1, thigh.1, shank.1],
            link_inertias: [
                rod_inertia(torso.0, torso.1),
                rod_inertia(thigh.0, thigh.1),
                rod_inertia(shank.0, shank.1),
                rod_inertia(thigh.0, thigh.1),
                rod_inertia(shank.0, shank.1),
            ],
            com_offsets: [torso.1 / 2.0, thigh.1 / 2.0, shank.1 / 2.0, thigh.1 / 2.0, shank.1 / 2.0],
            // gains sized so passive standing at the default pose is a
            // stable attractor; see the standing test below
            pd_gains: [(250.0, 15.0); NUM_JOINTS],
            torque_limits: [80.0; NUM_JOINTS],
            joint_limits: [(-1.2, 1.2), (-0.1, 2.4), (-1.2, 1.2), (-0.1, 2.4)],
            joint_friction: 0.1,
            joint_damping: 0.9,
            scale: 1.0,
            foot_span: (-0.13, 0.12),
            default_pose: [0.0, 0.2, 0.0, 0.2],
            action_scale: 0.5,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = |v: f64, name: &'static str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::NonPositive(name))
            }
        };
        for &m in &self.link_masses {
            pos(m, "link mass")?;
        }
        for &l in &self.link_lengths {
            pos(l, "link length")?;
        }
        for &i in &self.link_inertias {
            pos(i, "link inertia")?;
        }
        for &(kp, kd) in &self.pd_gains {
            pos(kp, "kp")?;
            pos(kd, "kd")?;
        }
        for &t in &self.torque_limits {
            pos(t, "torque limit")?;
        }
        for (i, &(lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(ModelError::BadJointLimits(i));
            }
        }
        pos(self.scale, "scale")?;
        Ok(())
    }

    /// Kinematic tree: two massless base prismatic joints, the pitch
    /// revolute carrying the torso, then hip/knee revolutes per leg.
    /// Knee axes are flipped so positive knee angle is flexion (foot
    /// trailing).
    pub fn chain(&self) -> PlanarChain {
        let l_thigh = self.link_lengths[1];
        let mk_body = |i: usize, up: bool| PlanarBody {
            mass: self.link_masses[i],
            com: [0.0, if up { self.com_offsets[i] } else { -self.com_offsets[i] }],
            inertia: self.link_inertias[i],
        };
        let joints = vec![
            PlanarJoint {
                kind: JointKind::PrismaticX,
                parent: None,
                offset: [0.0, 0.0],
                axis_sign: 1.0,
            },
            PlanarJoint {
                kind: JointKind::PrismaticY,
                parent: Some(0),
                offset: [0.0, 0.0],
                axis_sign: 1.0,
            },
            PlanarJoint {
                kind: JointKind::Revolute,
                parent: Some(1),
                offset: [0.0, 0.0],
                axis_sign: 1.0,
            },
            // left leg
            PlanarJoint {
                kind: JointKind::Revolute,
                parent: Some(2),
                offset: [0.0, 0.0],
                axis_sign: 1.0,
            },
            PlanarJoint {
                kind: JointKind::Revolute,
                parent: Some(3),
                offset: [0.0, -l_thigh],
                axis_sign: -1.0,
            },
            // right leg
            PlanarJoint {
                kind: JointKind::Revolute,
                parent: Some(2),
                offset: [0.0, 0.0],
                axis_sign: 1.0,
            },
            PlanarJoint {
                kind: JointKind::Revolute,
                parent: Some(5),
                offset: [0.0, -l_thigh],
                axis_sign: -1.0,
            },
        ];
        let bodies = vec![
            PlanarBody::massless(),
            PlanarBody::massless(),
            mk_body(0, true),
            mk_body(1, false),
            mk_body(2, false),
            mk_body(3, false),
            mk_body(4, false),
        ];
        PlanarChain { joints, bodies, gravity: super::dynamics::GRAVITY }
    }

    /// Chain body indices of the shanks (left, right).
    pub fn shank_bodies() -> (usize, usize) {
        (4, 6)
    }

    /// Contact points of one foot in the shank frame: heel and toe. The foot
    /// is welded so its sole is horizontal in the default pose (the shank
    /// tilts by hip - knee there, so the mount counter-rotates by the same
    /// angle).
    pub fn foot_points(&self) -> [[f64; 2]; 2] {
        let l_shank = self.link_lengths[2];
        let mount = -(self.default_pose[0] - self.default_pose[1]);
        let (s, c) = mount.sin_cos();
        let weld = |x: f64| [c * x + s * l_shank, s * x - c * l_shank];
        [weld(self.foot_span.0), weld(self.foot_span.1)]
    }
}

/// Velocity command: target forward speed and target pitch rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub v_hat_x: f64,
    pub omega_hat: f64,
}

impl Command {
    pub fn as_vec(&self) -> [f64; 2] {
        [self.v_hat_x, self.omega_hat]
    }
}
