//! Ancestral DDPM sampling and the receding-horizon controller.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::Arr;
use crate::sim::Command;

use super::model::Denoiser;
use super::schedule::NoiseSchedule;

/// Ancestral DDPM sampler over an arbitrary noise predictor
/// `eps_hat(x_t, t) -> eps`. Starts from unit Gaussian noise; the final step
/// adds no noise.
pub fn ddpm_sample(
    eps_hat: impl Fn(&Arr, usize) -> Arr,
    shape: (usize, usize),
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Arr {
    let mut x = Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
    for t in (1..=schedule.k()).rev() {
        let eps = eps_hat(&x, t);
        let beta = schedule.beta_t(t);
        let alpha = schedule.alpha_t(t);
        let ab = schedule.alpha_bar_t(t);
        x = (&x - &(eps * (beta / (1.0 - ab).sqrt()))) / alpha.sqrt();
        if t > 1 {
            let ab_prev = schedule.alpha_bar_t(t - 1);
            let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
            let z = Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
            x = x + z * sigma;
        }
    }
    x
}

/// Sample a normalized H_p x act_dim action plan from the denoiser.
pub fn sample_actions(
    model: &Denoiser,
    history: &Arr,
    goal: &Arr,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Arr {
    let shape = (model.cfg.horizon, model.cfg.act_dim);
    ddpm_sample(
        |x, t| model.predict(history, goal, x, &[t]),
        shape,
        schedule,
        rng,
    )
}

/// Normalization statistics for one vector stream.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Pre-clamped, always > 0.
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }
}

/// Receding-horizon execution state: the last H_o (observation, action)
/// pairs in normalized space, reset at each episode boundary.
#[derive(Clone, Debug)]
pub struct ControllerState {
    /// Oldest first; length <= H_o.
    buffer: Vec<(Vec<f64>, Vec<f64>)>,
    pub command: Command,
    pub rng: ChaCha8Rng,
}

impl ControllerState {
    pub fn new(command: Command, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            buffer: Vec::new(),
            command,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Flattened conditioning history: H_o (obs, action) pairs, padded by
    /// repeating the earliest observation with zero actions.
    pub fn history_vector(&self, h_o: usize, obs_dim: usize, act_dim: usize, obs: &[f64]) -> Vec<f64> {
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = self.buffer.clone();
        pairs.push((obs.to_vec(), vec![0.0; act_dim]));
        // the incoming observation has no action yet; its slot is filled with
        // zeros and overwritten when the chosen action is recorded
        let first_obs = pairs.first().map(|p| p.0.clone()).unwrap_or_else(|| vec![0.0; obs_dim]);
        while pairs.len() < h_o {
            pairs.insert(0, (first_obs.clone(), vec![0.0; act_dim]));
        }
        let start = pairs.len() - h_o;
        let mut out = Vec::with_capacity(h_o * (obs_dim + act_dim));
        for (o, a) in &pairs[start..] {
            out.extend_from_slice(o);
            out.extend_from_slice(a);
        }
        out
    }

    fn record(&mut self, obs: Vec<f64>, action: Vec<f64>, h_o: usize) {
        self.buffer.push((obs, action));
        if self.buffer.len() > h_o {
            let drop = self.buffer.len() - h_o;
            self.buffer.drain(..drop);
        }
    }
}

/// One control step: condition on the rolling history, sample a fresh plan,
/// execute only its first action. Returns the raw (denormalized) action.
pub fn receding_horizon_act(
    ctrl: &mut ControllerState,
    model: &Denoiser,
    schedule: &NoiseSchedule,
    obs_stats: &NormStats,
    act_stats: &NormStats,
    raw_obs: &[f64],
) -> Vec<f64> {
    let cfg = &model.cfg;
    let obs_n = obs_stats.normalize(raw_obs);
    let hist = ctrl.history_vector(cfg.history, cfg.obs_dim, cfg.act_dim, &obs_n);
    let hist = Array2::from_shape_vec((1, hist.len()), hist).unwrap();
    let goal = Array2::from_shape_vec((1, cfg.goal_dim), ctrl.command.as_vec().to_vec()).unwrap();
    let plan = sample_actions(model, &hist, &goal, schedule, &mut ctrl.rng);
    let action_n: Vec<f64> = plan.row(0).to_vec();
    ctrl.record(obs_n, action_n.clone(), cfg.history);
    act_stats.denormalize(&action_n)
}
