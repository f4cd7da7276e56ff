//! Per-dimension dataset statistics for diffusion-input normalization.

use serde::{Deserialize, Serialize};

use super::format::{DatasetError, TransitionRecord};

/// Std values are clamped to this floor to keep normalization finite.
pub const STD_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    /// Population std, clamped to `STD_EPS`.
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub obs: ColumnStats,
    pub act: ColumnStats,
    pub count: u64,
}

/// Single-pass (Welford) mean/std plus min/max per dimension.
pub fn dataset_stats(records: &[TransitionRecord]) -> Result<DatasetStats, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let obs_dim = records[0].obs.len();
    let act_dim = records[0].action.len();
    let mut obs = Accumulator::new(obs_dim);
    let mut act = Accumulator::new(act_dim);
    for r in records {
        if r.obs.len() != obs_dim || r.action.len() != act_dim {
            return Err(DatasetError::RaggedRecord);
        }
        obs.push(&r.obs);
        act.push(&r.action);
    }
    Ok(DatasetStats {
        obs: obs.finish(),
        act: act.finish(),
        count: records.len() as u64,
    })
}

struct Accumulator {
    mean: Vec<f64>,
    m2: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
    count: f64,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            min: vec![f64::INFINITY; dim],
            max: vec![f64::NEG_INFINITY; dim],
            count: 0.0,
        }
    }

    fn push(&mut self, row: &[f32]) {
        self.count += 1.0;
        for (j, &v) in row.iter().enumerate() {
            let x = v as f64;
            let d = x - self.mean[j];
            self.mean[j] += d / self.count;
            self.m2[j] += d * (x - self.mean[j]);
            self.min[j] = self.min[j].min(x);
            self.max[j] = self.max[j].max(x);
        }
    }

    fn finish(self) -> ColumnStats {
        let std = self
            .m2
            .iter()
            .map(|&m2| (m2 / self.count).sqrt().max(STD_EPS))
            .collect();
        ColumnStats {
            mean: self.mean,
            std,
            min: self.min,
            max: self.max,
        }
    }
}
