//! Expert rollout collection: run the trained policy (mean actions) under a
//! randomization setup and keep exactly the requested number of transitions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::reference::generate_reference_clips;
use crate::amp::train::PolicyArtifact;
use crate::amp::GaitParams;
use crate::randomize::{
    build_setup, sample_command, sample_episode, sample_initial_state, schedule_perturbation,
    RangeProfile, SetupId,
};
use crate::sim::{compute_observation, RobotModel, Simulator, ACTOR_OBS_DIM, CONTROL_RATE, NUM_JOINTS};

use super::format::{write_dataset, DatasetError, DatasetManifest, TransitionRecord, DATASET_VERSION};
use super::stats::dataset_stats;

/// Desk-scale dataset sizes (10x reduction of the reference sizes).
pub const DESK_SIZES: [u64; 3] = [50_000, 200_000, 800_000];
/// Full-scale reference sizes, selectable when the budget allows.
pub const PAPER_SIZES: [u64; 3] = [500_000, 2_000_000, 8_000_000];
pub const SIZE_NAMES: [&str; 3] = ["small", "medium", "large"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub setup: SetupId,
    pub profile: RangeProfile,
    pub n_transitions: u64,
    pub seed: u64,
    /// Shard count; shards collect with derived seeds and concatenate in
    /// worker order, so output depends on this value but not on scheduling.
    pub workers: usize,
    pub episode_seconds: f64,
    pub gait: GaitParams,
    /// Hash of the expert checkpoint, recorded in the manifest.
    pub expert_hash: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            setup: SetupId::None,
            profile: RangeProfile::Training,
            n_transitions: DESK_SIZES[0],
            seed: 0,
            workers: 1,
            episode_seconds: 10.0,
            gait: GaitParams::default(),
            expert_hash: 0,
        }
    }
}

/// Collect transitions in memory. Deterministic given (expert, config).
pub fn collect_records(
    expert: &PolicyArtifact,
    cfg: &CollectConfig,
) -> Result<Vec<TransitionRecord>, DatasetError> {
    let obs_dim = expert.policy.net.layers[0].w.ncols();
    if obs_dim != ACTOR_OBS_DIM {
        return Err(DatasetError::DimMismatch {
            file_obs: obs_dim,
            file_act: expert.policy.act_dim(),
            want_obs: ACTOR_OBS_DIM,
            want_act: NUM_JOINTS,
        });
    }
    let rand_cfg = build_setup(cfg.setup, cfg.profile);
    let rsi = generate_reference_clips(&cfg.gait).rsi_frames();
    let base = RobotModel::default();
    let max_steps = (cfg.episode_seconds * CONTROL_RATE).round() as usize;

    let workers = cfg.workers.max(1);
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shard_seeds: Vec<u64> = (0..workers).map(|_| seeder.gen()).collect();
    let shard_sizes: Vec<u64> = (0..workers as u64)
        .map(|i| cfg.n_transitions / workers as u64 + u64::from(i < cfg.n_transitions % workers as u64))
        .collect();

    let shards: Vec<Vec<TransitionRecord>> = shard_seeds
        .par_iter()
        .zip(&shard_sizes)
        .map(|(&shard_seed, &quota)| {
            let mut rng = ChaCha8Rng::seed_from_u64(shard_seed);
            let mut out = Vec::with_capacity(quota as usize);
            while (out.len() as u64) < quota {
                let env = sample_episode(&rand_cfg, &base, &mut rng).expect("episode draw");
                let mut state = sample_initial_state(
                    &mut rng,
                    &rsi,
                    &rand_cfg.init_state,
                    &env.model,
                    &env.terrain,
                )
                .expect("initial state");
                let command = sample_command(&mut rng, &rand_cfg.command_ranges);
                let sim = Simulator::new(env.model, env.terrain);
                for step in 0..max_steps {
                    if out.len() as u64 == quota {
                        break;
                    }
                    if let Some(p) = &env.perturbation {
                        if let Some(kick) =
                            schedule_perturbation(step, CONTROL_RATE, &mut rng, p)
                        {
                            state.qdot[0] += kick[0];
                            state.qdot[1] += kick[1];
                        }
                    }
                    let obs = compute_observation(&state, &command, false);
                    let action = expert.mean_action(&obs);
                    out.push(TransitionRecord {
                        obs: obs.iter().map(|&v| v as f32).collect(),
                        action: action.iter().map(|&v| v as f32).collect(),
                        episode_id: 0, // renumbered after concatenation
                        step_index: step as u32,
                    });
                    let result = sim.step(&state, &action, &command);
                    state = result.state;
                    if result.terminated {
                        break;
                    }
                }
            }
            out
        })
        .collect();

    let mut records: Vec<TransitionRecord> = shards.into_iter().flatten().collect();
    let mut episode = 0u32;
    let mut first = true;
    for r in records.iter_mut() {
        if r.step_index == 0 && !first {
            episode += 1;
        }
        first = false;
        r.episode_id = episode;
    }
    Ok(records)
}

/// Collect and write payload + manifest. Returns the manifest.
pub fn collect(
    expert: &PolicyArtifact,
    cfg: &CollectConfig,
    out: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let records = collect_records(expert, cfg)?;
    let stats = dataset_stats(&records)?;
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        obs_dim: ACTOR_OBS_DIM,
        act_dim: NUM_JOINTS,
        count: records.len() as u64,
        setup_id: cfg.setup,
        profile: cfg.profile,
        expert_hash: cfg.expert_hash,
        seed: cfg.seed,
        // no wall-clock stamp: dataset bytes must be identical across
        // reruns; creation times live in the run registry instead
        created_at: 0,
        obs_mean: stats.obs.mean,
        obs_std: stats.obs.std,
        act_mean: stats.act.mean,
        act_std: stats.act.std,
    };
    write_dataset(&records, &manifest, out)?;
    Ok(manifest)
}

/// FNV-1a over a file's bytes, for expert-checkpoint provenance.
pub fn file_hash(path: &Path) -> std::io::Result<u64> {
    let bytes = std::fs::read(path)?;
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in &bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(h)
}
