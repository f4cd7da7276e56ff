//! Diffusion-policy training: window assembly from transition datasets,
//! noise-prediction steps, and the trained artifact.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{config_hash, Checkpoint, CheckpointError, Manifest};
use crate::dataset::{DatasetManifest, TransitionRecord};
use crate::nn::{clip_grad_norm, Adam, Arr};

use super::model::{Denoiser, DiffusionConfig, ModelError};
use super::sampler::NormStats;
use super::schedule::{build_noise_schedule, forward_noising, NoiseSchedule, ScheduleError};

#[derive(Debug, Error)]
pub enum DpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("dataset too small: {windows} windows, need at least {need}")]
    DatasetTooSmall { windows: usize, need: usize },
    #[error("dataset dims (obs {obs}, act {act}) do not match model config (obs {cfg_obs}, act {cfg_act})")]
    DimMismatch {
        obs: usize,
        act: usize,
        cfg_obs: usize,
        cfg_act: usize,
    },
    #[error("non-finite loss at epoch {0}")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpTrainConfig {
    pub diffusion: DiffusionConfig,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    /// Every n-th window is held out for validation.
    pub val_every: usize,
    /// Offset of the goal (command) features inside the observation vector.
    pub goal_offset: usize,
}

impl Default for DpTrainConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionConfig::default(),
            epochs: 20,
            batch: 64,
            learning_rate: 1.0e-4,
            max_grad_norm: 1.0,
            val_every: 10,
            goal_offset: 10,
        }
    }
}

/// One training window: normalized history, goal, and clean action targets.
#[derive(Clone, Debug)]
pub struct Window {
    pub history: Vec<f64>,
    pub goal: Vec<f64>,
    /// Flattened H_p x act_dim, row-major.
    pub x0: Vec<f64>,
}

/// Assemble all windows of H_o + H_p consecutive steps that stay within one
/// episode. Observations and actions are normalized with the given stats.
pub fn assemble_windows(
    records: &[TransitionRecord],
    cfg: &DpTrainConfig,
    obs_stats: &NormStats,
    act_stats: &NormStats,
) -> Vec<Window> {
    let d = &cfg.diffusion;
    let span = d.history + d.horizon;
    let mut out = Vec::new();
    let mut start = 0;
    while start + span <= records.len() {
        let w = &records[start..start + span];
        let same_episode = w.iter().all(|r| r.episode_id == w[0].episode_id);
        let contiguous = w
            .windows(2)
            .all(|p| p[1].step_index == p[0].step_index + 1);
        if same_episode && contiguous {
            let mut history = Vec::with_capacity(d.history_dim());
            for r in &w[..d.history] {
                let obs: Vec<f64> = r.obs.iter().map(|&v| v as f64).collect();
                let act: Vec<f64> = r.action.iter().map(|&v| v as f64).collect();
                history.extend(obs_stats.normalize(&obs));
                history.extend(act_stats.normalize(&act));
            }
            let last_obs = &w[d.history - 1].obs;
            let goal: Vec<f64> = last_obs
                [cfg.goal_offset..cfg.goal_offset + d.goal_dim]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let mut x0 = Vec::with_capacity(d.horizon * d.act_dim);
            for r in &w[d.history..] {
                let act: Vec<f64> = r.action.iter().map(|&v| v as f64).collect();
                x0.extend(act_stats.normalize(&act));
            }
            out.push(Window { history, goal, x0 });
        }
        start += 1;
    }
    out
}

/// One noise-prediction gradient step on a window minibatch. Returns the
/// MSE loss between predicted and sampled noise.
pub fn training_step(
    model: &mut Denoiser,
    opt: &mut Adam,
    schedule: &NoiseSchedule,
    windows: &[&Window],
    rng: &mut ChaCha8Rng,
    max_grad_norm: f64,
) -> f64 {
    let (loss, grads) = noise_loss(model, schedule, windows, rng);
    let mut grads = grads;
    clip_grad_norm(&mut grads, max_grad_norm);
    opt.step(&mut model.params_mut(), &grads);
    loss
}

/// Loss and parameter gradients for a window minibatch.
pub fn noise_loss(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    windows: &[&Window],
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<Arr>) {
    let d = &model.cfg;
    let b = windows.len();
    let hist = stack(windows.iter().map(|w| w.history.as_slice()), d.history_dim());
    let goal = stack(windows.iter().map(|w| w.goal.as_slice()), d.goal_dim);
    let mut noisy = Array2::zeros((b * d.horizon, d.act_dim));
    let mut target = Array2::zeros((b * d.horizon, d.act_dim));
    let mut ts = Vec::with_capacity(b);
    for (i, w) in windows.iter().enumerate() {
        let t = rng.gen_range(1..=schedule.k());
        ts.push(t);
        let x0 = Array2::from_shape_vec((d.horizon, d.act_dim), w.x0.clone()).unwrap();
        let eps = Array2::from_shape_fn((d.horizon, d.act_dim), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let xt = forward_noising(&x0, t, &eps, schedule).expect("t in range");
        noisy
            .slice_mut(ndarray::s![i * d.horizon..(i + 1) * d.horizon, ..])
            .assign(&xt);
        target
            .slice_mut(ndarray::s![i * d.horizon..(i + 1) * d.horizon, ..])
            .assign(&eps);
    }

    let mut tape = crate::nn::Tape::new();
    let h = tape.leaf(hist);
    let g = tape.leaf(goal);
    let n = tape.leaf(noisy);
    let (out, leaves) = model.forward(&mut tape, h, g, n, &ts, b);
    let tv = tape.leaf(target);
    let diff = tape.sub(out, tv);
    let sq = tape.square(diff);
    let loss = tape.mean_all(sq);
    tape.backward(loss);
    let grads = leaves.iter().map(|&l| tape.grad(l)).collect();
    (tape.value(loss)[[0, 0]], grads)
}

/// Validation loss with a fixed noise stream (comparable across epochs).
pub fn validation_loss(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    windows: &[&Window],
    seed: u64,
) -> f64 {
    if windows.is_empty() {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for chunk in windows.chunks(64) {
        let (loss, _) = noise_loss(model, schedule, chunk, &mut rng);
        total += loss * chunk.len() as f64;
    }
    total / windows.len() as f64
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Arr {
    let flat: Vec<f64> = rows.flatten().copied().collect();
    let n = flat.len() / cols;
    Array2::from_shape_vec((n, cols), flat).expect("ragged rows")
}

/// A trained diffusion policy plus everything needed to run it.
#[derive(Clone, Debug)]
pub struct DpArtifact {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub obs_stats: NormStats,
    pub act_stats: NormStats,
    /// Hash of the source dataset manifest, linking artifact to data.
    pub dataset_hash: u64,
}

impl DpArtifact {
    pub fn save(&self, path: &Path, seed: u64, step_count: u64) -> Result<(), CheckpointError> {
        let d = &self.model.cfg;
        let mut extra = std::collections::BTreeMap::new();
        extra.insert("history".into(), d.history as f64);
        extra.insert("horizon".into(), d.horizon as f64);
        extra.insert("steps".into(), d.schedule.steps as f64);
        extra.insert("beta_min".into(), d.schedule.beta_min);
        extra.insert("beta_max".into(), d.schedule.beta_max);
        extra.insert("width".into(), d.width as f64);
        extra.insert("heads".into(), d.heads as f64);
        extra.insert("decoder_depth".into(), d.decoder_depth as f64);
        extra.insert("obs_dim".into(), d.obs_dim as f64);
        extra.insert("act_dim".into(), d.act_dim as f64);
        extra.insert("goal_dim".into(), d.goal_dim as f64);
        extra.insert("dataset_hash".into(), self.dataset_hash as f64);
        let mut ck = Checkpoint::new(Manifest {
            kind: "diffusion-policy".into(),
            seed,
            config_hash: config_hash(d),
            step_count,
            extra,
        });
        for (i, p) in self.model.params().iter().enumerate() {
            ck.insert(format!("p{i:04}"), (*p).clone());
        }
        ck.insert("norm.obs.mean", row(&self.obs_stats.mean));
        ck.insert("norm.obs.std", row(&self.obs_stats.std));
        ck.insert("norm.act.mean", row(&self.act_stats.mean));
        ck.insert("norm.act.std", row(&self.act_stats.std));
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, Manifest), DpError> {
        let ck = Checkpoint::load(path)?;
        let get = |k: &str| -> f64 { ck.manifest.extra.get(k).copied().unwrap_or(0.0) };
        let cfg = DiffusionConfig {
            history: get("history") as usize,
            horizon: get("horizon") as usize,
            schedule: super::schedule::ScheduleConfig {
                steps: get("steps") as usize,
                beta_min: get("beta_min"),
                beta_max: get("beta_max"),
            },
            width: get("width") as usize,
            heads: get("heads") as usize,
            decoder_depth: get("decoder_depth") as usize,
            obs_dim: get("obs_dim") as usize,
            act_dim: get("act_dim") as usize,
            goal_dim: get("goal_dim") as usize,
        };
        let mut model = Denoiser::new(0, &cfg)?;
        for (i, p) in model.params_mut().into_iter().enumerate() {
            *p = ck.get(&format!("p{i:04}"))?.clone();
        }
        let schedule = build_noise_schedule(&cfg.schedule)?;
        Ok((
            Self {
                model,
                schedule,
                obs_stats: NormStats {
                    mean: ck.get("norm.obs.mean")?.row(0).to_vec(),
                    std: ck.get("norm.obs.std")?.row(0).to_vec(),
                },
                act_stats: NormStats {
                    mean: ck.get("norm.act.mean")?.row(0).to_vec(),
                    std: ck.get("norm.act.std")?.row(0).to_vec(),
                },
                dataset_hash: get("dataset_hash") as u64,
            },
            ck.manifest.clone(),
        ))
    }
}

fn row(v: &[f64]) -> Arr {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DpEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct DpTrainResult {
    pub artifact: DpArtifact,
    pub history: Vec<DpEpochStats>,
}

/// Train a diffusion policy on a transition dataset. Deterministic per seed;
/// the best-by-validation-loss iterate is returned and checkpointed.
pub fn train_dp(
    records: &[TransitionRecord],
    manifest: &DatasetManifest,
    cfg: &DpTrainConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<DpTrainResult, DpError> {
    let d = &cfg.diffusion;
    d.validate()?;
    if manifest.obs_dim != d.obs_dim || manifest.act_dim != d.act_dim {
        return Err(DpError::DimMismatch {
            obs: manifest.obs_dim,
            act: manifest.act_dim,
            cfg_obs: d.obs_dim,
            cfg_act: d.act_dim,
        });
    }
    let obs_stats = NormStats {
        mean: manifest.obs_mean.clone(),
        std: manifest.obs_std.clone(),
    };
    let act_stats = NormStats {
        mean: manifest.act_mean.clone(),
        std: manifest.act_std.clone(),
    };
    let windows = assemble_windows(records, cfg, &obs_stats, &act_stats);
    if windows.is_empty() {
        return Err(DpError::DatasetTooSmall {
            windows: 0,
            need: 1,
        });
    }
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) =
        (0..windows.len()).partition(|i| cfg.val_every == 0 || (i + 1) % cfg.val_every != 0);
    let val_refs: Vec<&Window> = val_idx.iter().map(|&i| &windows[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Denoiser::new(rng.gen(), d)?;
    let schedule = build_noise_schedule(&d.schedule)?;
    let mut opt = Adam::new(cfg.learning_rate, &model.params());

    let dataset_hash = config_hash(manifest);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut history = Vec::new();
    let mut order: Vec<usize> = train_idx.clone();
    let mut steps: u64 = 0;
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut total = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let refs: Vec<&Window> = chunk.iter().map(|&i| &windows[i]).collect();
            let loss = training_step(
                &mut model,
                &mut opt,
                &schedule,
                &refs,
                &mut rng,
                cfg.max_grad_norm,
            );
            if !loss.is_finite() {
                return Err(DpError::NonFinite(epoch));
            }
            total += loss;
            batches += 1.0;
            steps += 1;
        }
        let val = if val_refs.is_empty() {
            total / batches.max(1.0)
        } else {
            validation_loss(&model, &schedule, &val_refs, seed ^ 0x5eed)
        };
        history.push(DpEpochStats {
            epoch,
            train_loss: total / batches.max(1.0),
            val_loss: val,
        });
        if val <= best_val {
            best_val = val;
            best = model.clone();
        }
    }
    if cfg.epochs == 0 {
        best = model;
    }
    let artifact = DpArtifact {
        model: best,
        schedule,
        obs_stats,
        act_stats,
        dataset_hash,
    };
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(CheckpointError::Io)?;
        }
        artifact.save(path, seed, steps)?;
    }
    Ok(DpTrainResult { artifact, history })
}
