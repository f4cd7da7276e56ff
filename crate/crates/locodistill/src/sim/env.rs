//! Simulation stepping: PD control, contact, integration, observations,
//! and termination.

use serde::{Deserialize, Serialize};

use super::dynamics::PlanarChain;
use super::model::{Command, RobotModel, DOF, NUM_JOINTS};
use super::terrain::{point_contact_force, ContactParams, ContactReport, FootContact, Terrain};

pub const CONTROL_RATE: f64 = 50.0;
pub const SUBSTEPS: usize = 10;

pub const ACTOR_OBS_DIM: usize = 16;
pub const PRIVILEGED_OBS_DIM: usize = 19;

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    /// base x, base z, pitch, left hip, left knee, right hip, right knee.
    pub q: [f64; DOF],
    pub qdot: [f64; DOF],
    pub time: f64,
    pub prev_action: [f64; NUM_JOINTS],
    /// Number of random draws the owning episode has consumed; carried in
    /// the state so trajectories replay bit-identically.
    pub rng_cursor: u64,
}

impl SimState {
    pub fn zeroed() -> Self {
        Self {
            q: [0.0; DOF],
            qdot: [0.0; DOF],
            time: 0.0,
            prev_action: [0.0; NUM_JOINTS],
            rng_cursor: 0,
        }
    }

    pub fn joint_pos(&self) -> [f64; NUM_JOINTS] {
        [self.q[3], self.q[4], self.q[5], self.q[6]]
    }

    pub fn joint_vel(&self) -> [f64; NUM_JOINTS] {
        [self.qdot[3], self.qdot[4], self.qdot[5], self.qdot[6]]
    }

    pub fn pitch(&self) -> f64 {
        self.q[2]
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TerminationLimits {
    /// Minimum base height above local terrain, m.
    pub h_min: f64,
    /// Maximum |pitch|, rad (strict inequality).
    pub theta_max: f64,
}

impl Default for TerminationLimits {
    fn default() -> Self {
        Self {
            h_min: 0.5,
            theta_max: 1.0,
        }
    }
}

/// true iff the state violates a limit. Boundary values do not terminate.
pub fn check_termination(state: &SimState, terrain: &Terrain, limits: &TerminationLimits) -> bool {
    let height = state.q[1] - terrain.height(state.q[0]);
    height < limits.h_min || state.pitch().abs() > limits.theta_max
}

/// PD torques: `clamp(kp (target - pos) - kd vel, +/- limit)` per joint.
pub fn pd_torques(
    targets: &[f64; NUM_JOINTS],
    pos: &[f64; NUM_JOINTS],
    vel: &[f64; NUM_JOINTS],
    model: &RobotModel,
) -> [f64; NUM_JOINTS] {
    let mut tau = [0.0; NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        let (kp, kd) = model.pd_gains[i];
        let raw = kp * (targets[i] - pos[i]) - kd * vel[i];
        tau[i] = raw.clamp(-model.torque_limits[i], model.torque_limits[i]);
    }
    tau
}

/// Unit gravity direction expressed in the base frame.
pub fn projected_gravity(pitch: f64) -> [f64; 2] {
    [-pitch.sin(), -pitch.cos()]
}

/// Actor observation (dim 16): projected gravity, joint positions, joint
/// velocities, command, previous action. The actor never sees base
/// velocities.
pub fn compute_observation(state: &SimState, command: &Command, privileged: bool) -> Vec<f64> {
    let mut obs = Vec::with_capacity(if privileged {
        PRIVILEGED_OBS_DIM
    } else {
        ACTOR_OBS_DIM
    });
    if privileged {
        obs.push(state.qdot[0]);
        obs.push(state.qdot[1]);
        obs.push(state.qdot[2]);
    }
    obs.extend_from_slice(&projected_gravity(state.pitch()));
    obs.extend_from_slice(&state.joint_pos());
    obs.extend_from_slice(&state.joint_vel());
    obs.extend_from_slice(&command.as_vec());
    obs.extend_from_slice(&state.prev_action);
    obs
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: SimState,
    pub contact: ContactReport,
    pub terminated: bool,
    /// Numerical fault (non-finite state); implies `terminated`.
    pub fault: bool,
    /// Applied joint torques of the last substep, for logging.
    pub torques: [f64; NUM_JOINTS],
}

/// Immutable per-episode simulation context. Stepping is a pure function of
/// the state, so instances are safe to share across threads.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub contact: ContactParams,
    pub limits: TerminationLimits,
    chain: PlanarChain,
}

impl Simulator {
    pub fn new(model: RobotModel, terrain: Terrain) -> Self {
        let chain = model.chain();
        Self {
            model,
            terrain,
            contact: ContactParams::default(),
            limits: TerminationLimits::default(),
            chain,
        }
    }

    pub fn with_gravity(mut self, g: f64) -> Self {
        self.chain.gravity = g;
        self
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / CONTROL_RATE
    }

    /// Initial standing state: default pose, feet resting on the terrain
    /// under the base.
    pub fn standing_state(&self) -> SimState {
        let mut state = SimState::zeroed();
        let dp = self.model.default_pose;
        state.q[3..7].copy_from_slice(&dp);
        // lower the base until the lowest foot point touches the ground
        let ground = self.terrain.height(0.0);
        let mut lowest = f64::INFINITY;
        let (lb, rb) = RobotModel::shank_bodies();
        for body in [lb, rb] {
            for pt in self.model.foot_points() {
                let p = self.chain.point_position(&state.q, body, pt);
                lowest = lowest.min(p[1]);
            }
        }
        state.q[1] = ground - lowest;
        state
    }

    /// Advance one control step (`SUBSTEPS` physics substeps of
    /// semi-implicit Euler).
    pub fn step(&self, state: &SimState, action: &[f64; NUM_JOINTS], _command: &Command) -> StepResult {
        let h = self.control_dt() / SUBSTEPS as f64;
        let mut q = state.q;
        let mut qd = state.qdot;
        let mut targets = [0.0; NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            targets[i] = self.model.default_pose[i] + self.model.action_scale * action[i];
        }

        let mut contact = ContactReport::default();
        let mut torques = [0.0; NUM_JOINTS];
        let mut fault = false;

        'substeps: for _ in 0..SUBSTEPS {
            let pos = [q[3], q[4], q[5], q[6]];
            let vel = [qd[3], qd[4], qd[5], qd[6]];
            let pd = pd_torques(&targets, &pos, &vel, &self.model);
            torques = pd;

            let mut tau = [0.0; DOF];
            for i in 0..NUM_JOINTS {
                // smooth Coulomb + viscous joint friction
                let qd_j = vel[i];
                tau[3 + i] = pd[i]
                    - self.model.joint_damping * qd_j
                    - self.model.joint_friction * (qd_j / 0.05).tanh();
            }

            contact = ContactReport::default();
            let (lb, rb) = RobotModel::shank_bodies();
            for (body, foot) in [(lb, 0), (rb, 1)] {
                let mut agg = FootContact::default();
                for pt in self.model.foot_points() {
                    let p = self.chain.point_position(&q, body, pt);
                    let v = self.chain.point_velocity(&q, &qd, body, pt);
                    let (f, pen) = point_contact_force(&self.terrain, &self.contact, p, v);
                    if pen > 0.0 {
                        agg.in_contact = true;
                        agg.normal_force += f[1];
                        agg.tangential_force += f[0];
                        agg.penetration = agg.penetration.max(pen);
                        let jac = self.chain.point_jacobian(&q, body, pt);
                        for (col, t) in jac.iter().zip(tau.iter_mut()) {
                            *t += col[0] * f[0] + col[1] * f[1];
                        }
                    }
                }
                if foot == 0 {
                    contact.left = agg;
                } else {
                    contact.right = agg;
                }
            }

            match self.chain.forward_dynamics(&q, &qd, &tau) {
                Ok(qdd) => {
                    for i in 0..DOF {
                        qd[i] += qdd[i] * h;
                        q[i] += qd[i] * h;
                    }
                    if q.iter().chain(qd.iter()).any(|x| !x.is_finite()) {
                        fault = true;
                        break 'substeps;
                    }
                }
                Err(_) => {
                    fault = true;
                    break 'substeps;
                }
            }
        }

        let next = SimState {
            q,
            qdot: qd,
            time: state.time + self.control_dt(),
            prev_action: *action,
            rng_cursor: state.rng_cursor,
        };
        let terminated = fault || check_termination(&next, &self.terrain, &self.limits);
        StepResult {
            state: next,
            contact,
            terminated,
            fault,
            torques,
        }
    }

    /// Base height above the terrain directly below.
    pub fn base_height(&self, state: &SimState) -> f64 {
        state.q[1] - self.terrain.height(state.q[0])
    }
}
