//! Deterministic planar biped simulation.

pub mod dynamics;
pub mod env;
pub mod model;
pub mod terrain;

pub use dynamics::{DynamicsError, JointKind, PlanarBody, PlanarChain, PlanarJoint, GRAVITY};
pub use env::{
    check_termination, compute_observation, pd_torques, projected_gravity, SimState, Simulator,
    StepResult, TerminationLimits, ACTOR_OBS_DIM, CONTROL_RATE, PRIVILEGED_OBS_DIM, SUBSTEPS,
};
pub use model::{Command, ModelError, RobotModel, DOF, NUM_JOINTS, NUM_LINKS};
pub use terrain::{ContactParams, ContactReport, FootContact, Terrain, TerrainKind};
