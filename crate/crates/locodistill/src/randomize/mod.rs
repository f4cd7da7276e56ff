//! Domain randomization: the eight environment setups, composed from five
//! clusters (dynamics, perturbations, terrain, scales, initial state).
//!
//! Everything here is a pure function over an explicit RNG so episodes can be
//! sampled in parallel from independent streams and replayed exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Command, ModelError, RobotModel, SimState, Terrain, TerrainKind, DOF, NUM_JOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum RandomizeError {
    #[error("invalid range [{0}, {1}]: low > high")]
    BadRange(f64, f64),
    #[error("scale factor must be positive, got {0}")]
    BadScale(f64),
    #[error("unknown setup id {0:?}")]
    UnknownSetup(String),
    #[error("reference library is empty")]
    EmptyLibrary,
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Closed interval for uniform sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn fixed(v: f64) -> Self {
        Self { low: v, high: v }
    }

    pub fn validate(&self) -> Result<(), RandomizeError> {
        if self.low <= self.high && self.low.is_finite() && self.high.is_finite() {
            Ok(())
        } else {
            Err(RandomizeError::BadRange(self.low, self.high))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.gen_range(self.low..=self.high)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }
}

/// Per-parameter uniform ranges for dynamics randomization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRanges {
    pub body_friction: Range,
    pub added_base_mass: Range,
    pub link_mass_multiplier: Range,
    pub pd_gain_multiplier: Range,
    pub com_displacement: Range,
    pub joint_friction: Range,
    pub joint_damping: Range,
}

impl DynamicsRanges {
    /// Full training ranges.
    pub fn training() -> Self {
        Self {
            body_friction: Range::new(0.7, 1.3),
            added_base_mass: Range::new(-2.0, 2.0),
            link_mass_multiplier: Range::new(0.8, 1.2),
            pd_gain_multiplier: Range::new(0.8, 1.2),
            com_displacement: Range::new(-0.15, 0.15),
            joint_friction: Range::new(0.01, 1.15),
            joint_damping: Range::new(0.3, 1.5),
        }
    }

    /// Milder ranges for the randomized evaluation target.
    pub fn evaluation() -> Self {
        Self {
            body_friction: Range::new(0.8, 1.2),
            added_base_mass: Range::new(-1.0, 1.0),
            link_mass_multiplier: Range::new(0.9, 1.1),
            pd_gain_multiplier: Range::new(0.9, 1.1),
            com_displacement: Range::new(-0.1, 0.1),
            joint_friction: Range::new(0.01, 0.5),
            joint_damping: Range::new(0.3, 1.0),
        }
    }

    /// Degenerate ranges that reproduce the nominal model exactly.
    pub fn nominal(model: &RobotModel) -> Self {
        Self {
            body_friction: Range::fixed(1.0),
            added_base_mass: Range::fixed(0.0),
            link_mass_multiplier: Range::fixed(1.0),
            pd_gain_multiplier: Range::fixed(1.0),
            com_displacement: Range::fixed(0.0),
            joint_friction: Range::fixed(model.joint_friction),
            joint_damping: Range::fixed(model.joint_damping),
        }
    }

    pub fn validate(&self) -> Result<(), RandomizeError> {
        for r in [
            self.body_friction,
            self.added_base_mass,
            self.link_mass_multiplier,
            self.pd_gain_multiplier,
            self.com_displacement,
            self.joint_friction,
            self.joint_damping,
        ] {
            r.validate()?;
        }
        Ok(())
    }
}

/// One episode's dynamics draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsDraw {
    pub body_friction: f64,
    pub added_base_mass: f64,
    pub link_mass_multiplier: f64,
    pub pd_gain_multiplier: f64,
    pub com_displacement: f64,
    pub joint_friction: f64,
    pub joint_damping: f64,
}

impl DynamicsDraw {
    pub fn nominal(model: &RobotModel) -> Self {
        Self {
            body_friction: 1.0,
            added_base_mass: 0.0,
            link_mass_multiplier: 1.0,
            pd_gain_multiplier: 1.0,
            com_displacement: 0.0,
            joint_friction: model.joint_friction,
            joint_damping: model.joint_damping,
        }
    }

    /// New model with this draw applied; the input is untouched. Friction is
    /// not part of the model — combine `body_friction` into the terrain.
    pub fn apply(&self, model: &RobotModel) -> RobotModel {
        let mut m = model.clone();
        for i in 0..m.link_masses.len() {
            m.link_masses[i] *= self.link_mass_multiplier;
            m.link_inertias[i] *= self.link_mass_multiplier;
            let len = m.link_lengths[i];
            m.com_offsets[i] =
                (m.com_offsets[i] + self.com_displacement).clamp(0.05 * len, 0.95 * len);
        }
        m.link_masses[0] = (m.link_masses[0] + self.added_base_mass).max(0.1);
        for g in m.pd_gains.iter_mut() {
            g.0 *= self.pd_gain_multiplier;
            g.1 *= self.pd_gain_multiplier;
        }
        m.joint_friction = self.joint_friction;
        m.joint_damping = self.joint_damping;
        m
    }
}

/// Uniform independent draw from each range.
pub fn sample_dynamics(rng: &mut impl Rng, ranges: &DynamicsRanges) -> DynamicsDraw {
    DynamicsDraw {
        body_friction: ranges.body_friction.sample(rng),
        added_base_mass: ranges.added_base_mass.sample(rng),
        link_mass_multiplier: ranges.link_mass_multiplier.sample(rng),
        pd_gain_multiplier: ranges.pd_gain_multiplier.sample(rng),
        com_displacement: ranges.com_displacement.sample(rng),
        joint_friction: ranges.joint_friction.sample(rng),
        joint_damping: ranges.joint_damping.sample(rng),
    }
}

/// Geometric scaling: lengths x k, masses x k^3, inertias x k^5, PD gains and
/// torque limits x k^4.
pub fn apply_scale(model: &RobotModel, k: f64) -> Result<RobotModel, RandomizeError> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(RandomizeError::BadScale(k));
    }
    let mut m = model.clone();
    let k3 = k * k * k;
    let k4 = k3 * k;
    let k5 = k4 * k;
    for i in 0..m.link_masses.len() {
        m.link_lengths[i] *= k;
        m.com_offsets[i] *= k;
        m.link_masses[i] *= k3;
        m.link_inertias[i] *= k5;
    }
    for g in m.pd_gains.iter_mut() {
        g.0 *= k4;
        g.1 *= k4;
    }
    for t in m.torque_limits.iter_mut() {
        *t *= k4;
    }
    m.foot_span.0 *= k;
    m.foot_span.1 *= k;
    m.scale = k;
    Ok(m)
}

/// Velocity-kick perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Cap on kick magnitude, m/s.
    pub max_speed: f64,
    /// Seconds between kicks.
    pub interval: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            max_speed: 0.6,
            interval: 3.0,
        }
    }
}

/// Kick at every positive multiple of the interval: magnitude uniform in
/// [0, max_speed], direction uniform on the circle. `step` is the control
/// step about to be simulated; at 50 Hz and 3 s intervals that means steps
/// 150, 300, 450, ...
pub fn schedule_perturbation(
    step: usize,
    control_rate: f64,
    rng: &mut impl Rng,
    cfg: &PerturbationConfig,
) -> Option<[f64; 2]> {
    let period = (cfg.interval * control_rate).round() as usize;
    if period == 0 || step == 0 || step % period != 0 {
        return None;
    }
    let mag = rng.gen_range(0.0..=cfg.max_speed);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    Some([mag * angle.cos(), mag * angle.sin()])
}

/// Terrain generation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    /// Bumpy: max |height|, m.
    pub amplitude: f64,
    /// Obstacles: max step height, m.
    pub step_height: f64,
    /// Obstacles: min step length, m.
    pub min_step_length: f64,
    /// Half-width of the generated field, m.
    pub extent: f64,
    /// Sample spacing, m.
    pub spacing: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            amplitude: 0.05,
            step_height: 0.08,
            min_step_length: 0.3,
            extent: 20.0,
            spacing: 0.1,
        }
    }
}

/// Generate a heightfield of the requested kind. Friction is left at 1.0;
/// combine the body-friction draw separately.
pub fn generate_terrain(rng: &mut impl Rng, kind: TerrainKind, params: &TerrainParams) -> Terrain {
    let n = (2.0 * params.extent / params.spacing).round() as usize + 1;
    let heightfield = match kind {
        TerrainKind::Flat => vec![0.0; n.max(2)],
        TerrainKind::Bumpy => {
            let mut h: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(-params.amplitude..=params.amplitude))
                .collect();
            // a few box-filter passes; smoothing only shrinks the amplitude
            for _ in 0..3 {
                let prev = h.clone();
                for i in 1..n - 1 {
                    h[i] = (prev[i - 1] + prev[i] + prev[i + 1]) / 3.0;
                }
            }
            flatten_center(&mut h, n, params, 0.3);
            h
        }
        TerrainKind::Obstacles => {
            let mut h = vec![0.0; n];
            let min_len = (params.min_step_length / params.spacing).ceil() as usize;
            let mut i = 0;
            while i < n {
                let len = rng.gen_range(min_len..=3 * min_len);
                let height = if rng.gen_bool(0.5) {
                    0.0
                } else {
                    rng.gen_range(0.0..=params.step_height)
                };
                for j in i..(i + len).min(n) {
                    h[j] = height;
                }
                i += len;
            }
            flatten_center(&mut h, n, params, 0.5);
            h
        }
    };
    Terrain {
        kind,
        heightfield,
        spacing: params.spacing,
        friction: 1.0,
    }
}

/// Zero the field near x = 0 so episodes never spawn on top of a feature.
fn flatten_center(h: &mut [f64], n: usize, params: &TerrainParams, half_width: f64) {
    let center = (n - 1) as f64 / 2.0;
    let margin = (half_width / params.spacing).ceil() as usize;
    let lo = (center as usize).saturating_sub(margin);
    let hi = ((center as usize) + margin + 1).min(n);
    for v in &mut h[lo..hi] {
        *v = 0.0;
    }
}

/// One reference-motion frame usable for reference-state initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub q: [f64; DOF],
    pub qdot: [f64; DOF],
}

/// Initial-state sampling configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitStateConfig {
    /// Draw the starting frame from the reference library (otherwise the
    /// default standing pose at rest is used, the nominal start).
    pub randomize_frame: bool,
    pub noise_probability: f64,
    /// Uniform +/- bound on joint position noise, rad.
    pub joint_pos_range: f64,
    /// Uniform +/- bound on joint velocity noise, rad/s.
    pub joint_vel_range: f64,
}

impl InitStateConfig {
    pub fn reference_only() -> Self {
        Self {
            randomize_frame: false,
            noise_probability: 0.0,
            joint_pos_range: 0.2,
            joint_vel_range: 0.5,
        }
    }

    pub fn randomized() -> Self {
        Self {
            randomize_frame: true,
            noise_probability: 0.5,
            ..Self::reference_only()
        }
    }

    pub fn validate(&self) -> Result<(), RandomizeError> {
        if (0.0..=1.0).contains(&self.noise_probability) {
            Ok(())
        } else {
            Err(RandomizeError::BadProbability(self.noise_probability))
        }
    }
}

/// Reference-state initialization: a clip frame, optional bounded noise, and
/// a base-height fix-up so no foot point starts below the terrain.
pub fn sample_initial_state(
    rng: &mut impl Rng,
    library: &[Vec<ReferenceFrame>],
    cfg: &InitStateConfig,
    model: &RobotModel,
    terrain: &Terrain,
) -> Result<SimState, RandomizeError> {
    if library.is_empty() || library.iter().any(|c| c.is_empty()) {
        return Err(RandomizeError::EmptyLibrary);
    }
    let mut state = SimState::zeroed();
    if cfg.randomize_frame {
        let clip = &library[rng.gen_range(0..library.len())];
        let frame = clip[rng.gen_range(0..clip.len())];
        state.q = frame.q;
        state.qdot = frame.qdot;
        state.q[0] = 0.0;
    } else {
        // nominal start: the default standing pose at rest
        state.q[3..3 + NUM_JOINTS].copy_from_slice(&model.default_pose);
    }

    if cfg.noise_probability > 0.0 && rng.gen_bool(cfg.noise_probability) {
        for i in 0..NUM_JOINTS {
            let (lo, hi) = model.joint_limits[i];
            state.q[3 + i] = (state.q[3 + i]
                + rng.gen_range(-cfg.joint_pos_range..=cfg.joint_pos_range))
            .clamp(lo, hi);
            state.qdot[3 + i] += rng.gen_range(-cfg.joint_vel_range..=cfg.joint_vel_range);
        }
    }

    // raise the base until every foot point clears the ground
    let chain = model.chain();
    let (lb, rb) = RobotModel::shank_bodies();
    let mut deficit: f64 = 0.0;
    for body in [lb, rb] {
        for pt in model.foot_points() {
            let p = chain.point_position(&state.q, body, pt);
            deficit = deficit.max(terrain.height(p[0]) - p[1]);
        }
    }
    if deficit > 0.0 {
        state.q[1] += deficit;
    }
    Ok(state)
}

/// Command sampling ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub v_x: Range,
    pub omega: Range,
}

impl Default for CommandRanges {
    fn default() -> Self {
        Self {
            v_x: Range::new(0.0, 1.0),
            omega: Range::fixed(0.0),
        }
    }
}

pub fn sample_command(rng: &mut impl Rng, ranges: &CommandRanges) -> Command {
    Command {
        v_hat_x: ranges.v_x.sample(rng),
        omega_hat: ranges.omega.sample(rng),
    }
}

/// The eight environment setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupId {
    None,
    Dynamics,
    Perturbations,
    Terrain,
    Scales,
    InitState,
    TerrainPerturb,
    All,
}

impl SetupId {
    pub const ALL: [SetupId; 8] = [
        SetupId::None,
        SetupId::Dynamics,
        SetupId::Perturbations,
        SetupId::Terrain,
        SetupId::Scales,
        SetupId::InitState,
        SetupId::TerrainPerturb,
        SetupId::All,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SetupId::None => "none",
            SetupId::Dynamics => "dynamics",
            SetupId::Perturbations => "perturbations",
            SetupId::Terrain => "terrain",
            SetupId::Scales => "scales",
            SetupId::InitState => "init_state",
            SetupId::TerrainPerturb => "terrain_perturb",
            SetupId::All => "all",
        }
    }
}

impl std::str::FromStr for SetupId {
    type Err = RandomizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SetupId::ALL
            .iter()
            .find(|id| id.as_str() == s)
            .copied()
            .ok_or_else(|| RandomizeError::UnknownSetup(s.to_string()))
    }
}

impl std::fmt::Display for SetupId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Range profile selecting training vs evaluation range tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeProfile {
    Training,
    Evaluation,
}

/// A fully resolved per-setup sampling configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationConfig {
    pub setup_id: SetupId,
    /// None disables the dynamics cluster (nominal model every episode).
    pub dynamics_ranges: Option<DynamicsRanges>,
    pub perturbation: Option<PerturbationConfig>,
    /// Kinds drawn uniformly per episode.
    pub terrain_kinds: Vec<TerrainKind>,
    pub terrain_params: TerrainParams,
    pub scale_choices: Vec<f64>,
    pub init_state: InitStateConfig,
    pub command_ranges: CommandRanges,
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<(), RandomizeError> {
        if let Some(r) = &self.dynamics_ranges {
            r.validate()?;
        }
        if let Some(p) = &self.perturbation {
            if !(p.interval > 0.0) {
                return Err(RandomizeError::BadRange(p.interval, p.interval));
            }
            Range::new(0.0, p.max_speed).validate()?;
        }
        for &k in &self.scale_choices {
            if !(k > 0.0) {
                return Err(RandomizeError::BadScale(k));
            }
        }
        self.init_state.validate()?;
        self.command_ranges.v_x.validate()?;
        self.command_ranges.omega.validate()?;
        Ok(())
    }
}

/// Resolve a setup id + range profile into a sampling configuration.
pub fn build_setup(setup_id: SetupId, profile: RangeProfile) -> RandomizationConfig {
    let dynamics = match profile {
        RangeProfile::Training => DynamicsRanges::training(),
        RangeProfile::Evaluation => DynamicsRanges::evaluation(),
    };
    let (dyn_on, perturb_on, terrain_on, scales_on, init_on) = match setup_id {
        SetupId::None => (false, false, false, false, false),
        SetupId::Dynamics => (true, false, false, false, false),
        SetupId::Perturbations => (false, true, false, false, false),
        SetupId::Terrain => (false, false, true, false, false),
        SetupId::Scales => (false, false, false, true, false),
        SetupId::InitState => (false, false, false, false, true),
        SetupId::TerrainPerturb => (false, true, true, false, false),
        SetupId::All => (true, true, true, true, true),
    };
    // the evaluation profile is terrain + dynamics only, never perturbed
    let (perturb_on, scales_on, init_on) = match profile {
        RangeProfile::Training => (perturb_on, scales_on, init_on),
        RangeProfile::Evaluation => (false, false, false),
    };
    RandomizationConfig {
        setup_id,
        dynamics_ranges: dyn_on.then_some(dynamics),
        perturbation: perturb_on.then(PerturbationConfig::default),
        terrain_kinds: if terrain_on {
            vec![TerrainKind::Bumpy, TerrainKind::Obstacles]
        } else {
            vec![TerrainKind::Flat]
        },
        terrain_params: TerrainParams::default(),
        scale_choices: if scales_on {
            vec![0.8, 1.0, 1.2]
        } else {
            vec![1.0]
        },
        init_state: if init_on {
            InitStateConfig::randomized()
        } else {
            InitStateConfig::reference_only()
        },
        command_ranges: CommandRanges::default(),
    }
}

/// Everything needed to run one randomized episode.
#[derive(Clone, Debug)]
pub struct EpisodeEnv {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub draw: DynamicsDraw,
    pub scale: f64,
    pub perturbation: Option<PerturbationConfig>,
}

/// Draw a full episode environment from the config.
pub fn sample_episode(
    cfg: &RandomizationConfig,
    base: &RobotModel,
    rng: &mut impl Rng,
) -> Result<EpisodeEnv, RandomizeError> {
    let draw = match &cfg.dynamics_ranges {
        Some(ranges) => sample_dynamics(rng, ranges),
        None => DynamicsDraw::nominal(base),
    };
    let k = if cfg.scale_choices.len() > 1 {
        cfg.scale_choices[rng.gen_range(0..cfg.scale_choices.len())]
    } else {
        cfg.scale_choices.first().copied().unwrap_or(1.0)
    };
    let model = draw.apply(&apply_scale(base, k)?);
    model.validate()?;
    let kind = if cfg.terrain_kinds.len() > 1 {
        cfg.terrain_kinds[rng.gen_range(0..cfg.terrain_kinds.len())]
    } else {
        cfg.terrain_kinds.first().copied().unwrap_or(TerrainKind::Flat)
    };
    let mut terrain = generate_terrain(rng, kind, &cfg.terrain_params);
    terrain.friction = draw.body_friction;
    Ok(EpisodeEnv {
        model,
        terrain,
        draw,
        scale: k,
        perturbation: cfg.perturbation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn draws_stay_in_range() {
        let ranges = DynamicsRanges::training();
        let mut r = rng(1);
        for _ in 0..10_000 {
            let d = sample_dynamics(&mut r, &ranges);
            assert!(ranges.body_friction.contains(d.body_friction));
            assert!(ranges.added_base_mass.contains(d.added_base_mass));
            assert!(ranges.link_mass_multiplier.contains(d.link_mass_multiplier));
            assert!(ranges.pd_gain_multiplier.contains(d.pd_gain_multiplier));
            assert!(ranges.com_displacement.contains(d.com_displacement));
            assert!(ranges.joint_friction.contains(d.joint_friction));
            assert!(ranges.joint_damping.contains(d.joint_damping));
        }
    }

    #[test]
    fn degenerate_ranges_are_exact() {
        let model = RobotModel::default();
        let ranges = DynamicsRanges::nominal(&model);
        let d = sample_dynamics(&mut rng(7), &ranges);
        assert_eq!(d, DynamicsDraw::nominal(&model));
        let applied = d.apply(&model);
        assert_eq!(applied, model);
    }

    #[test]
    fn same_seed_same_draw() {
        let ranges = DynamicsRanges::training();
        let a = sample_dynamics(&mut rng(42), &ranges);
        let b = sample_dynamics(&mut rng(42), &ranges);
        assert_eq!(a, b);
    }

    #[test]
    fn apply_leaves_original_untouched() {
        let model = RobotModel::default();
        let copy = model.clone();
        let d = sample_dynamics(&mut rng(3), &DynamicsRanges::training());
        let _ = d.apply(&model);
        assert_eq!(model, copy);
    }

    #[test]
    fn scale_identity() {
        let m = RobotModel::default();
        let s = apply_scale(&m, 1.0).unwrap();
        assert_eq!(s.link_masses, m.link_masses);
        assert_eq!(s.pd_gains, m.pd_gains);
        assert_eq!(s.scale, 1.0);
    }

    #[test]
    fn scale_powers_of_1_2() {
        let m = RobotModel::default();
        let s = apply_scale(&m, 1.2).unwrap();
        for i in 0..5 {
            assert!((s.link_masses[i] / m.link_masses[i] - 1.728).abs() < 1e-12 * 1.728);
            assert!((s.link_inertias[i] / m.link_inertias[i] - 2.48832).abs() < 1e-12 * 2.48832);
            assert!((s.link_lengths[i] / m.link_lengths[i] - 1.2).abs() < 1e-12 * 1.2);
        }
        for i in 0..4 {
            assert!((s.pd_gains[i].0 / m.pd_gains[i].0 - 2.0736).abs() < 1e-12 * 2.0736);
            assert!((s.pd_gains[i].1 / m.pd_gains[i].1 - 2.0736).abs() < 1e-12 * 2.0736);
            assert!(
                (s.torque_limits[i] / m.torque_limits[i] - 2.0736).abs() < 1e-12 * 2.0736
            );
        }
    }

    #[test]
    fn scale_rejects_nonpositive() {
        let m = RobotModel::default();
        assert!(matches!(apply_scale(&m, 0.0), Err(RandomizeError::BadScale(_))));
        assert!(matches!(apply_scale(&m, -1.0), Err(RandomizeError::BadScale(_))));
    }

    #[test]
    fn scale_composes_multiplicatively() {
        let m = RobotModel::default();
        let ab = apply_scale(&apply_scale(&m, 0.8).unwrap(), 1.5).unwrap();
        let prod = apply_scale(&m, 1.2).unwrap();
        for i in 0..5 {
            assert!((ab.link_masses[i] - prod.link_masses[i]).abs() < 1e-9 * prod.link_masses[i]);
            assert!(
                (ab.link_inertias[i] - prod.link_inertias[i]).abs() < 1e-9 * prod.link_inertias[i]
            );
        }
        for i in 0..4 {
            assert!((ab.pd_gains[i].0 - prod.pd_gains[i].0).abs() < 1e-9 * prod.pd_gains[i].0);
        }
    }

    #[test]
    fn kicks_at_three_second_multiples() {
        let cfg = PerturbationConfig::default();
        let mut r = rng(5);
        let mut kick_steps = Vec::new();
        for step in 0..500 {
            if let Some(kick) = schedule_perturbation(step, 50.0, &mut r, &cfg) {
                kick_steps.push(step);
                let mag = (kick[0] * kick[0] + kick[1] * kick[1]).sqrt();
                assert!(mag <= 0.6 + 1e-12);
            }
        }
        assert_eq!(kick_steps, vec![150, 300, 450]);
    }

    #[test]
    fn no_kick_at_one_second() {
        let cfg = PerturbationConfig::default();
        assert!(schedule_perturbation(50, 50.0, &mut rng(1), &cfg).is_none());
    }

    #[test]
    fn flat_terrain_is_zero() {
        let t = generate_terrain(&mut rng(2), TerrainKind::Flat, &TerrainParams::default());
        assert!(t.heightfield.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn bumpy_respects_amplitude() {
        let params = TerrainParams::default();
        for seed in 0..20 {
            let t = generate_terrain(&mut rng(seed), TerrainKind::Bumpy, &params);
            assert!(t.heightfield.iter().all(|&h| h.abs() <= params.amplitude));
        }
    }

    #[test]
    fn obstacles_respect_height_and_length() {
        let params = TerrainParams::default();
        for seed in 0..20 {
            let t = generate_terrain(&mut rng(seed), TerrainKind::Obstacles, &params);
            assert!(t
                .heightfield
                .iter()
                .all(|&h| (0.0..=params.step_height).contains(&h)));
            // runs of equal height must span at least min_step_length,
            // except where the flattened spawn window splits a step
            let min_run = (params.min_step_length / params.spacing).ceil() as usize;
            let n = t.heightfield.len();
            let center = (n - 1) / 2;
            let margin = (0.5 / params.spacing).ceil() as usize + 1;
            let mut run = 1;
            for i in 1..n {
                if t.heightfield[i] == t.heightfield[i - 1] {
                    run += 1;
                } else {
                    let near_center = i.abs_diff(center) <= margin + min_run;
                    assert!(
                        run >= min_run || i < min_run || near_center,
                        "run of {run} ending at {i}"
                    );
                    run = 1;
                }
            }
        }
    }

    #[test]
    fn terrain_deterministic_per_seed() {
        let params = TerrainParams::default();
        let a = generate_terrain(&mut rng(9), TerrainKind::Bumpy, &params);
        let b = generate_terrain(&mut rng(9), TerrainKind::Bumpy, &params);
        assert_eq!(a, b);
    }

    #[test]
    fn terrain_flat_near_spawn() {
        let params = TerrainParams::default();
        for seed in 0..10 {
            let t = generate_terrain(&mut rng(seed), TerrainKind::Obstacles, &params);
            for &x in &[-0.3, 0.0, 0.3] {
                assert_eq!(t.height(x), 0.0, "seed {seed} x {x}");
            }
        }
    }

    fn tiny_library() -> Vec<Vec<ReferenceFrame>> {
        let mut f0 = ReferenceFrame {
            q: [0.0; DOF],
            qdot: [0.0; DOF],
        };
        f0.q[1] = 0.82;
        f0.q[4] = 0.2;
        f0.q[6] = 0.2;
        let mut f1 = f0;
        f1.q[3] = 0.3;
        f1.q[5] = -0.3;
        vec![vec![f0, f1], vec![f1, f0]]
    }

    #[test]
    fn init_state_no_noise_matches_frame() {
        let model = RobotModel::default();
        let terrain = Terrain::flat(1.0);
        let lib = tiny_library();
        let cfg = InitStateConfig::reference_only();
        let s = sample_initial_state(&mut rng(1), &lib, &cfg, &model, &terrain).unwrap();
        assert_eq!(s.joint_pos(), [0.0, 0.2, 0.0, 0.2]);
        assert_eq!(s.qdot, [0.0; DOF]);
    }

    #[test]
    fn init_state_noise_stays_in_limits() {
        let model = RobotModel::default();
        let terrain = Terrain::flat(1.0);
        let lib = tiny_library();
        let cfg = InitStateConfig {
            noise_probability: 1.0,
            ..InitStateConfig::randomized()
        };
        let mut r = rng(11);
        for _ in 0..1000 {
            let s = sample_initial_state(&mut r, &lib, &cfg, &model, &terrain).unwrap();
            for (i, &qj) in s.joint_pos().iter().enumerate() {
                let (lo, hi) = model.joint_limits[i];
                assert!(qj >= lo && qj <= hi);
            }
        }
    }

    #[test]
    fn init_state_noise_probability_statistics() {
        let model = RobotModel::default();
        let terrain = Terrain::flat(1.0);
        let lib = vec![lib_single_frame()];
        let cfg = InitStateConfig {
            randomize_frame: false,
            ..InitStateConfig::randomized()
        };
        let mut r = rng(13);
        let mut perturbed = 0;
        let total = 10_000;
        for _ in 0..total {
            let s = sample_initial_state(&mut r, &lib, &cfg, &model, &terrain).unwrap();
            if s.joint_pos() != [0.0, 0.2, 0.0, 0.2] {
                perturbed += 1;
            }
        }
        let frac = perturbed as f64 / total as f64;
        assert!((0.45..=0.55).contains(&frac), "fraction {frac}");
    }

    fn lib_single_frame() -> Vec<ReferenceFrame> {
        let mut f = ReferenceFrame {
            q: [0.0; DOF],
            qdot: [0.0; DOF],
        };
        f.q[1] = 0.82;
        f.q[4] = 0.2;
        f.q[6] = 0.2;
        vec![f]
    }

    #[test]
    fn init_state_empty_library_errors() {
        let model = RobotModel::default();
        let terrain = Terrain::flat(1.0);
        let cfg = InitStateConfig::reference_only();
        assert_eq!(
            sample_initial_state(&mut rng(1), &[], &cfg, &model, &terrain),
            Err(RandomizeError::EmptyLibrary)
        );
    }

    #[test]
    fn init_state_feet_never_below_terrain() {
        let model = RobotModel::default();
        let params = TerrainParams::default();
        let terrain = generate_terrain(&mut rng(4), TerrainKind::Obstacles, &params);
        let lib = tiny_library();
        let cfg = InitStateConfig {
            noise_probability: 1.0,
            ..InitStateConfig::randomized()
        };
        let chain = model.chain();
        let (lb, rb) = RobotModel::shank_bodies();
        let mut r = rng(21);
        for _ in 0..200 {
            let s = sample_initial_state(&mut r, &lib, &cfg, &model, &terrain).unwrap();
            for body in [lb, rb] {
                for pt in model.foot_points() {
                    let p = chain.point_position(&s.q, body, pt);
                    assert!(p[1] >= terrain.height(p[0]) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn command_defaults_and_fixed() {
        let mut r = rng(2);
        for _ in 0..1000 {
            let c = sample_command(&mut r, &CommandRanges::default());
            assert!((-1.0..=1.0).contains(&c.v_hat_x));
            assert_eq!(c.omega_hat, 0.0);
        }
        let fixed = CommandRanges {
            v_x: Range::fixed(1.0),
            omega: Range::fixed(0.0),
        };
        assert_eq!(sample_command(&mut r, &fixed).v_hat_x, 1.0);
    }

    #[test]
    fn setup_ids_roundtrip_strings() {
        for id in SetupId::ALL {
            assert_eq!(id.as_str().parse::<SetupId>().unwrap(), id);
        }
        assert!("bogus".parse::<SetupId>().is_err());
    }

    #[test]
    fn setup_none_is_nominal_fixed_point() {
        let cfg = build_setup(SetupId::None, RangeProfile::Training);
        cfg.validate().unwrap();
        let base = RobotModel::default();
        let a = sample_episode(&cfg, &base, &mut rng(1)).unwrap();
        let b = sample_episode(&cfg, &base, &mut rng(999)).unwrap();
        assert_eq!(a.model, base);
        assert_eq!(a.model, b.model);
        assert_eq!(a.terrain, b.terrain);
        assert!(a.perturbation.is_none());
    }

    #[test]
    fn setup_flags_match_definition() {
        let all = build_setup(SetupId::All, RangeProfile::Training);
        assert!(all.dynamics_ranges.is_some());
        assert!(all.perturbation.is_some());
        assert!(all.terrain_kinds.len() > 1);
        assert_eq!(all.scale_choices, vec![0.8, 1.0, 1.2]);
        assert!(all.init_state.randomize_frame);

        let tp = build_setup(SetupId::TerrainPerturb, RangeProfile::Training);
        assert!(tp.dynamics_ranges.is_none());
        assert!(tp.perturbation.is_some());
        assert!(tp.terrain_kinds.len() > 1);
        assert_eq!(tp.scale_choices, vec![1.0]);
        assert!(!tp.init_state.randomize_frame);
    }

    #[test]
    fn evaluation_profile_is_terrain_plus_dynamics_only() {
        let cfg = build_setup(SetupId::All, RangeProfile::Evaluation);
        let d = cfg.dynamics_ranges.unwrap();
        assert_eq!(d.body_friction, Range::new(0.8, 1.2));
        assert_eq!(d.com_displacement, Range::new(-0.1, 0.1));
        assert!(cfg.perturbation.is_none());
        assert_eq!(cfg.scale_choices, vec![1.0]);
        assert!(!cfg.init_state.randomize_frame);
        assert_eq!(cfg.init_state.noise_probability, 0.0);
    }

    #[test]
    fn sampled_episode_model_is_valid() {
        let cfg = build_setup(SetupId::All, RangeProfile::Training);
        let base = RobotModel::default();
        let mut r = rng(77);
        for _ in 0..200 {
            let env = sample_episode(&cfg, &base, &mut r).unwrap();
            env.model.validate().unwrap();
            assert!(env.terrain.friction > 0.0);
        }
    }
}
