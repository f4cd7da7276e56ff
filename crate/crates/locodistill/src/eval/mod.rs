//! Evaluation harness: the two target environments (fixed and randomized)
//! and the three metrics — success rate, velocity tracking error, and action
//! smoothness — aggregated over seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::train::PolicyArtifact;
use crate::diffusion::{receding_horizon_act, ControllerState, DpArtifact};
use crate::randomize::{
    build_setup, sample_episode, sample_initial_state, RandomizationConfig, RangeProfile, SetupId,
};
use crate::sim::{
    compute_observation, Command, RobotModel, Simulator, TerrainKind, ACTOR_OBS_DIM, NUM_JOINTS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("policy dims (obs {obs}, act {act}) do not match environment (obs {env_obs}, act {env_act})")]
    DimMismatch {
        obs: usize,
        act: usize,
        env_obs: usize,
        env_act: usize,
    },
    #[error("protocol needs at least one episode and one seed")]
    BadProtocol,
}

/// The two validation targets: nominal flat ground, or randomized terrain
/// and dynamics (never perturbed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Fixed,
    Randomized,
}

impl std::str::FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(TargetKind::Fixed),
            "randomized" => Ok(TargetKind::Randomized),
            other => Err(format!("unknown target kind: {other}")),
        }
    }
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Fixed => "fixed",
            TargetKind::Randomized => "randomized",
        }
    }
}

/// Environment configuration for a target kind. Fixed: flat terrain, nominal
/// dynamics, unit scale, no kicks. Randomized: bumpy terrain plus the
/// evaluation dynamics ranges, still no kicks.
pub fn build_target_env(kind: TargetKind) -> RandomizationConfig {
    match kind {
        TargetKind::Fixed => build_setup(SetupId::None, RangeProfile::Evaluation),
        TargetKind::Randomized => {
            let mut cfg = build_setup(SetupId::All, RangeProfile::Evaluation);
            cfg.terrain_kinds = vec![TerrainKind::Bumpy];
            cfg
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub target: TargetKind,
    pub episodes: usize,
    /// Control steps per episode; 500 at 50 Hz is 10 s.
    pub episode_steps: usize,
    pub command: Command,
    pub seeds: Vec<u64>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            target: TargetKind::Fixed,
            episodes: 100,
            episode_steps: 500,
            command: Command {
                v_hat_x: 1.0,
                omega_hat: 0.0,
            },
            seeds: vec![0, 1, 2],
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.episodes == 0 || self.seeds.is_empty() || self.episode_steps == 0 {
            return Err(EvalError::BadProtocol);
        }
        Ok(())
    }
}

/// A policy under evaluation. Artifacts are shared read-only across episodes.
pub enum EvalPolicy<'a> {
    /// AMP expert acting through its deterministic mean.
    Expert(&'a PolicyArtifact),
    /// Diffusion policy acting through receding-horizon sampling.
    Diffusion(&'a DpArtifact),
    /// Holds the default pose; standing is non-terminal, so this passes
    /// success while failing tracking.
    DoNothing,
}

impl EvalPolicy<'_> {
    fn check_dims(&self) -> Result<(), EvalError> {
        let (obs, act) = match self {
            EvalPolicy::Expert(a) => (a.policy.net.layers[0].w.ncols(), a.policy.act_dim()),
            EvalPolicy::Diffusion(a) => (a.model.cfg.obs_dim, a.model.cfg.act_dim),
            EvalPolicy::DoNothing => (ACTOR_OBS_DIM, NUM_JOINTS),
        };
        if obs != ACTOR_OBS_DIM || act != NUM_JOINTS {
            return Err(EvalError::DimMismatch {
                obs,
                act,
                env_obs: ACTOR_OBS_DIM,
                env_act: NUM_JOINTS,
            });
        }
        Ok(())
    }
}

/// Raw per-episode outcome; every report number is re-derivable from these.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub episode: usize,
    pub survived: bool,
    pub steps: usize,
    pub tracking: f64,
    pub smoothness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub success_rate: f64,
    pub tracking_error: f64,
    pub smoothness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of a slice.
pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub target: TargetKind,
    pub per_seed: Vec<SeedMetrics>,
    pub episodes: Vec<EpisodeOutcome>,
    pub success_rate: MeanStd,
    pub tracking_error: MeanStd,
    pub smoothness: MeanStd,
}

/// Fraction of episodes that ran to the full step budget.
pub fn success_rate(outcomes: &[EpisodeOutcome]) -> f64 {
    outcomes.iter().filter(|o| o.survived).count() as f64 / outcomes.len().max(1) as f64
}

/// Mean absolute deviation of forward velocity from the command over the
/// executed steps.
pub fn tracking_error(velocities: &[f64], v_hat: f64) -> Result<f64, EvalError> {
    if velocities.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    Ok(velocities.iter().map(|v| (v - v_hat).abs()).sum::<f64>() / velocities.len() as f64)
}

/// Sum of squared L2 norms between consecutive actions; 0 for fewer than 2.
pub fn smoothness(actions: &[[f64; NUM_JOINTS]]) -> f64 {
    actions
        .windows(2)
        .map(|p| {
            p[1].iter()
                .zip(&p[0])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

fn run_episode(
    policy: &EvalPolicy,
    cfg: &RandomizationConfig,
    rsi: &[Vec<crate::randomize::ReferenceFrame>],
    protocol: &EvalProtocol,
    seed: u64,
    episode: usize,
) -> EpisodeOutcome {
    let base = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 1);
    let env = sample_episode(cfg, &base, &mut rng).expect("episode draw");
    let mut state =
        sample_initial_state(&mut rng, rsi, &cfg.init_state, &env.model, &env.terrain)
            .expect("initial state");
    let sim = Simulator::new(env.model, env.terrain);
    let command = protocol.command;

    let mut dp_ctrl = match policy {
        EvalPolicy::Diffusion(_) => Some(ControllerState::new(command, seed ^ (episode as u64) << 17)),
        _ => None,
    };

    let mut velocities = Vec::with_capacity(protocol.episode_steps);
    let mut actions: Vec<[f64; NUM_JOINTS]> = Vec::with_capacity(protocol.episode_steps);
    let mut survived = true;
    let mut steps = 0;
    for _ in 0..protocol.episode_steps {
        let obs = compute_observation(&state, &command, false);
        let action: [f64; NUM_JOINTS] = match policy {
            EvalPolicy::Expert(a) => a.mean_action(&obs),
            EvalPolicy::Diffusion(a) => {
                let ctrl = dp_ctrl.as_mut().unwrap();
                let v = receding_horizon_act(
                    ctrl,
                    &a.model,
                    &a.schedule,
                    &a.obs_stats,
                    &a.act_stats,
                    &obs,
                );
                [v[0], v[1], v[2], v[3]]
            }
            EvalPolicy::DoNothing => [0.0; NUM_JOINTS],
        };
        actions.push(action);
        let result = sim.step(&state, &action, &command);
        state = result.state;
        velocities.push(state.qdot[0]);
        steps += 1;
        if result.terminated {
            survived = false;
            break;
        }
    }

    EpisodeOutcome {
        seed,
        episode,
        survived,
        steps,
        tracking: tracking_error(&velocities, command.v_hat_x).expect("at least one step"),
        smoothness: smoothness(&actions),
    }
}

/// Aggregate raw outcomes into per-seed metrics plus mean ± std across
/// seeds. Deterministic regardless of outcome ordering.
pub fn aggregate_outcomes(
    target: TargetKind,
    seeds: &[u64],
    mut episodes: Vec<EpisodeOutcome>,
) -> MetricsReport {
    episodes.sort_by_key(|o| (o.seed, o.episode));
    let per_seed: Vec<SeedMetrics> = seeds
        .iter()
        .map(|&s| {
            let eps: Vec<EpisodeOutcome> =
                episodes.iter().filter(|o| o.seed == s).copied().collect();
            SeedMetrics {
                seed: s,
                success_rate: success_rate(&eps),
                tracking_error: eps.iter().map(|o| o.tracking).sum::<f64>()
                    / eps.len().max(1) as f64,
                smoothness: eps.iter().map(|o| o.smoothness).sum::<f64>()
                    / eps.len().max(1) as f64,
            }
        })
        .collect();
    MetricsReport {
        target,
        success_rate: mean_std(&per_seed.iter().map(|s| s.success_rate).collect::<Vec<_>>()),
        tracking_error: mean_std(&per_seed.iter().map(|s| s.tracking_error).collect::<Vec<_>>()),
        smoothness: mean_std(&per_seed.iter().map(|s| s.smoothness).collect::<Vec<_>>()),
        per_seed,
        episodes,
    }
}

/// Run the full protocol: `episodes` rollouts per seed, three metrics,
/// mean ± std across seeds. Episodes run in parallel; the aggregation is
/// order-independent.
pub fn evaluate(policy: &EvalPolicy, protocol: &EvalProtocol) -> Result<MetricsReport, EvalError> {
    protocol.validate()?;
    policy.check_dims()?;
    let cfg = build_target_env(protocol.target);
    let rsi = crate::amp::reference::generate_reference_clips(&crate::amp::GaitParams::default())
        .rsi_frames();

    let jobs: Vec<(u64, usize)> = protocol
        .seeds
        .iter()
        .flat_map(|&s| (0..protocol.episodes).map(move |e| (s, e)))
        .collect();
    let episodes: Vec<EpisodeOutcome> = jobs
        .par_iter()
        .map(|&(seed, ep)| run_episode(policy, &cfg, &rsi, protocol, seed, ep))
        .collect();
    Ok(aggregate_outcomes(protocol.target, &protocol.seeds, episodes))
}
