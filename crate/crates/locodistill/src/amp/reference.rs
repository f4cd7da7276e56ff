//! Procedural reference gaits standing in for mocap clips, plus the
//! transition features fed to the discriminator.

use serde::{Deserialize, Serialize};

use crate::randomize::ReferenceFrame;
use crate::sim::{projected_gravity, RobotModel, SimState, Terrain, CONTROL_RATE, NUM_JOINTS};

/// Per-state discriminator features: joint pos, joint vel, base height,
/// projected gravity.
pub const STATE_FEATURE_DIM: usize = NUM_JOINTS * 2 + 1 + 2;
/// A transition concatenates two states.
pub const TRANSITION_FEATURE_DIM: usize = 2 * STATE_FEATURE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub joint_pos: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    pub base_height: f64,
    pub pitch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub frames: Vec<ClipFrame>,
    /// Nominal forward speed of the gait, m/s.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionLibrary {
    pub clips: Vec<Clip>,
}

impl MotionLibrary {
    pub fn validate(&self, model: &RobotModel) -> Result<(), String> {
        if self.clips.is_empty() {
            return Err("empty motion library".into());
        }
        for (ci, clip) in self.clips.iter().enumerate() {
            if clip.frames.len() < 2 {
                return Err(format!("clip {ci} has fewer than 2 frames"));
            }
            for (fi, f) in clip.frames.iter().enumerate() {
                let finite = f
                    .joint_pos
                    .iter()
                    .chain(f.joint_vel.iter())
                    .chain([&f.base_height, &f.pitch])
                    .all(|v| v.is_finite());
                if !finite {
                    return Err(format!("clip {ci} frame {fi} not finite"));
                }
                for (j, &q) in f.joint_pos.iter().enumerate() {
                    let (lo, hi) = model.joint_limits[j];
                    if q < lo || q > hi {
                        return Err(format!("clip {ci} frame {fi} joint {j} out of limits"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Frames for reference-state initialization: clip frames lifted to full
    /// generalized coordinates, base velocity set to the clip speed.
    pub fn rsi_frames(&self) -> Vec<Vec<ReferenceFrame>> {
        self.clips
            .iter()
            .map(|clip| {
                clip.frames
                    .iter()
                    .map(|f| {
                        let mut r = ReferenceFrame {
                            q: [0.0; 7],
                            qdot: [0.0; 7],
                        };
                        r.q[1] = f.base_height;
                        r.q[2] = f.pitch;
                        r.q[3..7].copy_from_slice(&f.joint_pos);
                        r.qdot[0] = clip.speed;
                        r.qdot[3..7].copy_from_slice(&f.joint_vel);
                        r
                    })
                    .collect()
            })
            .collect()
    }

    /// All consecutive-frame transition features, for discriminator batches.
    pub fn transition_features(&self) -> Vec<[f64; TRANSITION_FEATURE_DIM]> {
        let mut out = Vec::new();
        for clip in &self.clips {
            for pair in clip.frames.windows(2) {
                let a = frame_features(&pair[0]);
                let b = frame_features(&pair[1]);
                let mut feat = [0.0; TRANSITION_FEATURE_DIM];
                feat[..STATE_FEATURE_DIM].copy_from_slice(&a);
                feat[STATE_FEATURE_DIM..].copy_from_slice(&b);
                out.push(feat);
            }
        }
        out
    }
}

pub fn frame_features(f: &ClipFrame) -> [f64; STATE_FEATURE_DIM] {
    let mut out = [0.0; STATE_FEATURE_DIM];
    out[..NUM_JOINTS].copy_from_slice(&f.joint_pos);
    out[NUM_JOINTS..2 * NUM_JOINTS].copy_from_slice(&f.joint_vel);
    out[2 * NUM_JOINTS] = f.base_height;
    let g = projected_gravity(f.pitch);
    out[2 * NUM_JOINTS + 1] = g[0];
    out[2 * NUM_JOINTS + 2] = g[1];
    out
}

/// Features of a simulated state (base height measured above the terrain).
pub fn state_features(state: &SimState, terrain: &Terrain) -> [f64; STATE_FEATURE_DIM] {
    frame_features(&ClipFrame {
        joint_pos: state.joint_pos(),
        joint_vel: state.joint_vel(),
        base_height: state.q[1] - terrain.height(state.q[0]),
        pitch: state.pitch(),
    })
}

/// Features of one control-step transition; dim 22.
pub fn transition_features(
    s: &SimState,
    s_next: &SimState,
    terrain: &Terrain,
) -> [f64; TRANSITION_FEATURE_DIM] {
    let a = state_features(s, terrain);
    let b = state_features(s_next, terrain);
    let mut out = [0.0; TRANSITION_FEATURE_DIM];
    out[..STATE_FEATURE_DIM].copy_from_slice(&a);
    out[STATE_FEATURE_DIM..].copy_from_slice(&b);
    out
}

/// Procedural gait parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitParams {
    /// Stride frequency, Hz.
    pub frequency: f64,
    /// Clip length, s.
    pub clip_seconds: f64,
    /// One clip per speed, m/s; speed 0 becomes a standing clip.
    pub speeds: Vec<f64>,
    /// Hip swing amplitude per unit speed, rad s/m.
    pub hip_amp_per_speed: f64,
    /// Knee flexion amplitude, rad.
    pub knee_amp: f64,
    /// Knee phase lead over the hip, rad.
    pub knee_phase: f64,
    /// Nominal base height, m.
    pub base_height: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            frequency: 1.4,
            clip_seconds: 4.0,
            speeds: vec![0.3, 0.6, 1.0],
            hip_amp_per_speed: 0.35,
            knee_amp: 0.5,
            knee_phase: std::f64::consts::FRAC_PI_2,
            base_height: 0.78,
        }
    }
}

/// Sinusoidal walk clips: antiphase hips, rectified-sine knees, velocities by
/// analytic differentiation. Sampled at the control rate.
pub fn generate_reference_clips(params: &GaitParams) -> MotionLibrary {
    assert!(params.frequency > 0.0, "gait frequency must be positive");
    let dt = 1.0 / CONTROL_RATE;
    let n = (params.clip_seconds * CONTROL_RATE).round() as usize;
    let omega = std::f64::consts::TAU * params.frequency;
    let clips = params
        .speeds
        .iter()
        .map(|&speed| {
            let a_h = params.hip_amp_per_speed * speed;
            let a_k = if speed == 0.0 { 0.0 } else { params.knee_amp };
            let frames = (0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    let mut joint_pos = [0.0; NUM_JOINTS];
                    let mut joint_vel = [0.0; NUM_JOINTS];
                    for (leg, phase) in [(0usize, 0.0), (1usize, std::f64::consts::PI)] {
                        let th = omega * t + phase;
                        joint_pos[2 * leg] = a_h * th.sin();
                        joint_vel[2 * leg] = a_h * omega * th.cos();
                        let tk = th + params.knee_phase;
                        if tk.sin() > 0.0 {
                            joint_pos[2 * leg + 1] = a_k * tk.sin();
                            joint_vel[2 * leg + 1] = a_k * omega * tk.cos();
                        }
                    }
                    if speed == 0.0 {
                        // standing clip holds the default pose
                        joint_pos = [0.0, 0.2, 0.0, 0.2];
                    }
                    ClipFrame {
                        joint_pos,
                        joint_vel,
                        base_height: params.base_height,
                        pitch: 0.0,
                    }
                })
                .collect();
            Clip { frames, speed }
        })
        .collect();
    MotionLibrary { clips }
}
