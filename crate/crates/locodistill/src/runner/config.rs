//! Declarative run configuration and counter-based seed splitting.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::train::TrainConfig;
use crate::diffusion::{DiffusionConfig, DpTrainConfig, ScheduleConfig};
use crate::randomize::{RangeProfile, SetupId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Expert-training section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertSection {
    pub total_steps: u64,
    pub num_envs: usize,
    pub hidden: Vec<usize>,
    pub setup: SetupId,
    /// Reuse an existing checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExpertSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            total_steps: t.total_steps,
            num_envs: t.num_envs,
            hidden: t.hidden,
            setup: SetupId::All,
            checkpoint: None,
        }
    }
}

impl ExpertSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_steps: self.total_steps,
            num_envs: self.num_envs,
            hidden: self.hidden.clone(),
            setup: self.setup,
            ..Default::default()
        }
    }
}

/// Dataset-collection section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectSection {
    pub setups: Vec<SetupId>,
    pub sizes: Vec<u64>,
    pub profile: RangeProfile,
    pub workers: usize,
    pub episode_seconds: f64,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self {
            setups: SetupId::ALL.to_vec(),
            sizes: crate::dataset::DESK_SIZES.to_vec(),
            profile: RangeProfile::Training,
            workers: 8,
            episode_seconds: 10.0,
        }
    }
}

/// Diffusion-training section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSection {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub history: usize,
    pub horizon: usize,
    pub steps: usize,
    pub width: usize,
    pub heads: usize,
    pub decoder_depth: usize,
    /// Number of training seeds per dataset.
    pub seeds: usize,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DiffusionConfig::default();
        let t = DpTrainConfig::default();
        Self {
            epochs: t.epochs,
            batch: t.batch,
            learning_rate: t.learning_rate,
            history: d.history,
            horizon: d.horizon,
            steps: d.schedule.steps,
            width: d.width,
            heads: d.heads,
            decoder_depth: d.decoder_depth,
            seeds: 3,
        }
    }
}

impl DiffusionSection {
    pub fn train_config(&self) -> DpTrainConfig {
        DpTrainConfig {
            diffusion: DiffusionConfig {
                history: self.history,
                horizon: self.horizon,
                width: self.width,
                heads: self.heads,
                decoder_depth: self.decoder_depth,
                schedule: ScheduleConfig {
                    steps: self.steps,
                    ..Default::default()
                },
                ..Default::default()
            },
            epochs: self.epochs,
            batch: self.batch,
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }
}

/// Evaluation section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub episodes: usize,
    pub episode_steps: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            episode_steps: 500,
            seeds: vec![0, 1, 2],
        }
    }
}

/// The single declarative document driving the whole matrix.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub output_root: PathBuf,
    pub master_seed: u64,
    pub expert: ExpertSection,
    pub collect: CollectSection,
    pub diffusion: DiffusionSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.collect.setups.is_empty() {
            return Err(ConfigError::Invalid("no setups".into()));
        }
        let uniq: HashSet<_> = self.collect.setups.iter().collect();
        if uniq.len() != self.collect.setups.len() {
            return Err(ConfigError::Invalid("duplicate setup".into()));
        }
        if self.collect.sizes.is_empty() || self.collect.sizes.contains(&0) {
            return Err(ConfigError::Invalid("sizes must be non-empty and positive".into()));
        }
        if self.diffusion.seeds == 0 {
            return Err(ConfigError::Invalid("diffusion.seeds must be >= 1".into()));
        }
        if self.eval.episodes == 0 || self.eval.seeds.is_empty() {
            return Err(ConfigError::Invalid("eval needs episodes and seeds".into()));
        }
        Ok(())
    }
}

/// Human size label: 50_000 -> "50k", 2_000_000 -> "2m".
pub fn size_label(n: u64) -> String {
    if n >= 1_000_000 && n % 1_000_000 == 0 {
        format!("{}m", n / 1_000_000)
    } else if n >= 1_000 && n % 1_000 == 0 {
        format!("{}k", n / 1_000)
    } else {
        n.to_string()
    }
}

/// Derive a sub-stage seed from the master seed and a stable tag. Tags are
/// independent, so adding one stage never perturbs another's seed.
pub fn split_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in master.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
