//! Clipped-surrogate PPO with a diagonal-Gaussian policy and GAE.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{clip_grad_norm, Activation, Adam, Arr, Mlp, Tape, Var};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            entropy_coef: 0.002,
            learning_rate: 3.0e-4,
            epochs: 5,
            minibatch: 256,
            max_grad_norm: 1.0,
        }
    }
}

/// Diagonal-Gaussian policy: MLP mean plus a state-independent log-std.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    pub net: Mlp,
    /// 1 x act_dim, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Arr,
}

impl GaussianPolicy {
    pub fn new(rng: &mut ChaCha8Rng, obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        let mut net = Mlp::new(rng, &dims, Activation::Tanh);
        // small output head so initial actions stay near the default pose
        let last = net.layers.last_mut().unwrap();
        last.w *= 0.01;
        Self {
            net,
            log_std: Arr::from_elem((1, act_dim), -1.0),
        }
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.ncols()
    }

    /// All trainable arrays: layer weights/biases, then the log-std.
    pub fn params(&self) -> Vec<&Arr> {
        let mut p = self.net.params();
        p.push(&self.log_std);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Arr> {
        let mut p = self.net.params_mut();
        p.push(&mut self.log_std);
        p
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).unwrap();
        self.net.infer(&x).row(0).to_vec()
    }

    /// Sample an action; returns the action and its log-probability.
    pub fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let mean = self.mean_action(obs);
        let mut action = Vec::with_capacity(mean.len());
        for (j, &m) in mean.iter().enumerate() {
            let sigma = self.log_std[[0, j]].exp();
            let eps: f64 = rng.sample(StandardNormal);
            action.push(m + sigma * eps);
        }
        let lp = self.log_prob(obs, &action);
        (action, lp)
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        let mean = self.mean_action(obs);
        let mut lp = 0.0;
        for j in 0..action.len() {
            let ls = self.log_std[[0, j]];
            let z = (action[j] - mean[j]) / ls.exp();
            lp += -0.5 * z * z - ls - 0.5 * LN_2PI;
        }
        lp
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        self.log_std.sum() + 0.5 * self.act_dim() as f64 * (1.0 + LN_2PI)
    }
}

/// Generalized advantage estimation over a (possibly multi-episode) rollout.
/// `dones[t]` marks the last step of an episode; `last_value` bootstraps the
/// final partial episode. Returns (advantages, returns).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * cont * next_v - values[t];
        acc = delta + gamma * lam * cont * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// In-place whitening to zero mean / unit variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// One minibatch of rollout data, row-per-step.
#[derive(Clone, Debug)]
pub struct PpoBatch {
    pub obs: Arr,
    /// Privileged observations for the critic.
    pub priv_obs: Arr,
    pub actions: Arr,
    /// B x 1 columns.
    pub old_log_probs: Arr,
    pub advantages: Arr,
    pub returns: Arr,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Forward an MLP while keeping its parameter leaves for gradient readout,
/// in `params_mut` order.
pub(crate) fn forward_tracked(tape: &mut Tape, net: &Mlp, mut x: Var) -> (Var, Vec<Var>) {
    let n = net.layers.len();
    let mut leaves = Vec::with_capacity(2 * n);
    for (i, layer) in net.layers.iter().enumerate() {
        let (y, w, b) = layer.forward_tracked(tape, x);
        leaves.push(w);
        leaves.push(b);
        x = if i + 1 < n {
            match net.hidden_act {
                Activation::Tanh => tape.tanh(y),
                Activation::Relu => tape.relu(y),
                Activation::Linear => y,
            }
        } else {
            y
        };
    }
    (x, leaves)
}

/// Per-row Gaussian log-probabilities as a B x 1 tape value.
fn log_prob_column(
    tape: &mut Tape,
    mean: Var,
    actions: Var,
    log_std: Var,
    batch: usize,
    act_dim: usize,
) -> Var {
    let diff = tape.sub(actions, mean);
    let neg_ls = tape.neg(log_std);
    let inv_sigma = tape.exp(neg_ls);
    let z = tape.mul_row(diff, inv_sigma);
    let zsq = tape.square(z);
    let ssum = tape.sum_rows(zsq);
    let half = tape.scale(ssum, -0.5);
    let sum_ls = tape.sum_all(log_std);
    let neg_sum = tape.neg(sum_ls);
    let with_ls = tape.add_tiled(half, neg_sum, batch);
    tape.add_scalar(with_ls, -0.5 * act_dim as f64 * LN_2PI)
}

/// One clipped-surrogate gradient step on a minibatch (policy and critic).
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    critic: &mut Mlp,
    opt_policy: &mut Adam,
    opt_critic: &mut Adam,
    batch: &PpoBatch,
    cfg: &PpoConfig,
) -> PpoStats {
    let (stats, mut pol_grads, mut crit_grads) = ppo_grads(policy, critic, batch, cfg);
    clip_grad_norm(&mut pol_grads, cfg.max_grad_norm);
    clip_grad_norm(&mut crit_grads, cfg.max_grad_norm);
    opt_policy.step(&mut policy.params_mut(), &pol_grads);
    policy.clamp_log_std();
    opt_critic.step(&mut critic.params_mut(), &crit_grads);
    stats
}

/// Losses and gradients without applying the optimizers.
pub fn ppo_grads(
    policy: &GaussianPolicy,
    critic: &Mlp,
    batch: &PpoBatch,
    cfg: &PpoConfig,
) -> (PpoStats, Vec<Arr>, Vec<Arr>) {
    let b = batch.obs.nrows();
    let act_dim = policy.act_dim();

    // policy loss
    let mut tape = Tape::new();
    let obs = tape.leaf(batch.obs.clone());
    let actions = tape.leaf(batch.actions.clone());
    let old_lp = tape.leaf(batch.old_log_probs.clone());
    let adv = tape.leaf(batch.advantages.clone());
    let (mean, mut leaves) = forward_tracked(&mut tape, &policy.net, obs);
    let log_std = tape.leaf(policy.log_std.clone());
    leaves.push(log_std);
    let lp = log_prob_column(&mut tape, mean, actions, log_std, b, act_dim);
    let diff = tape.sub(lp, old_lp);
    let ratio = tape.exp(diff);
    let surr1 = tape.mul(ratio, adv);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let surr2 = tape.mul(clipped, adv);
    let surr = tape.minimum(surr1, surr2);
    let mean_surr = tape.mean_all(surr);
    let neg_surr = tape.neg(mean_surr);
    // entropy bonus only touches the log-std
    let ent_sum = tape.sum_all(log_std);
    let ent_term = tape.scale(ent_sum, -cfg.entropy_coef);
    let loss = tape.add(neg_surr, ent_term);
    tape.backward(loss);
    let pol_grads: Vec<Arr> = leaves.iter().map(|&v| tape.grad(v)).collect();

    let ratio_vals = tape.value(ratio);
    let clip_fraction = ratio_vals
        .iter()
        .filter(|&&r| (r - 1.0).abs() > cfg.clip)
        .count() as f64
        / b as f64;
    let approx_kl = (&batch.old_log_probs - tape.value(lp)).mean().unwrap();
    let policy_loss = tape.value(neg_surr)[[0, 0]];

    // critic loss on its own tape
    let mut vtape = Tape::new();
    let obs_v = vtape.leaf(batch.priv_obs.clone());
    let ret = vtape.leaf(batch.returns.clone());
    let (v, v_leaves) = forward_tracked(&mut vtape, critic, obs_v);
    let err = vtape.sub(v, ret);
    let sq = vtape.square(err);
    let v_loss = vtape.mean_all(sq);
    vtape.backward(v_loss);
    let crit_grads: Vec<Arr> = v_leaves.iter().map(|&l| vtape.grad(l)).collect();

    let stats = PpoStats {
        policy_loss,
        value_loss: vtape.value(v_loss)[[0, 0]],
        entropy: policy.entropy(),
        approx_kl,
        clip_fraction,
    };
    (stats, pol_grads, crit_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn policy(seed: u64, obs: usize, act: usize) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GaussianPolicy::new(&mut rng, obs, act, &[6]);
        // non-trivial mean so gradients are informative
        for l in p.net.layers.iter_mut() {
            l.w.mapv_inplace(|v| v * 50.0 + 0.01);
        }
        p
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, obs: usize, act: usize) -> PpoBatch {
        PpoBatch {
            obs: Array2::from_shape_fn((b, obs), |_| rng.gen_range(-1.0..1.0)),
            priv_obs: Array2::from_shape_fn((b, obs), |_| rng.gen_range(-1.0..1.0)),
            actions: Array2::from_shape_fn((b, act), |_| rng.gen_range(-1.0..1.0)),
            old_log_probs: Array2::from_shape_fn((b, 1), |_| rng.gen_range(-4.0..-2.0)),
            advantages: Array2::from_shape_fn((b, 1), |_| rng.gen_range(-1.0..1.0)),
            returns: Array2::from_shape_fn((b, 1), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    /// Pure scalar re-implementation of the policy loss for differencing.
    fn scalar_policy_loss(p: &GaussianPolicy, batch: &PpoBatch, cfg: &PpoConfig) -> f64 {
        let b = batch.obs.nrows();
        let mut surr = 0.0;
        for i in 0..b {
            let obs: Vec<f64> = batch.obs.row(i).to_vec();
            let act: Vec<f64> = batch.actions.row(i).to_vec();
            let lp = p.log_prob(&obs, &act);
            let ratio = (lp - batch.old_log_probs[[i, 0]]).exp();
            let a = batch.advantages[[i, 0]];
            let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
            surr += (ratio * a).min(clipped * a);
        }
        -surr / b as f64 - cfg.entropy_coef * p.log_std.sum()
    }

    #[test]
    fn policy_gradients_match_finite_differences() {
        let mut p = policy(0, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = random_batch(&mut rng, 8, 3, 2);
        let critic = Mlp::new(&mut rng, &[3, 4, 1], Activation::Tanh);
        let cfg = PpoConfig::default();
        let (_, grads, _) = ppo_grads(&p, &critic, &batch, &cfg);
        let h = 1e-6;
        let n = p.params().len();
        for k in 0..n {
            let dim = p.params()[k].dim();
            for i in 0..dim.0 {
                for j in 0..dim.1 {
                    let orig = p.params_mut()[k][[i, j]];
                    p.params_mut()[k][[i, j]] = orig + h;
                    let up = scalar_policy_loss(&p, &batch, &cfg);
                    p.params_mut()[k][[i, j]] = orig - h;
                    let down = scalar_policy_loss(&p, &batch, &cfg);
                    p.params_mut()[k][[i, j]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let g = grads[k][[i, j]];
                    assert!(
                        (fd - g).abs() < 1e-5 * (1.0 + fd.abs()),
                        "param {k} [{i},{j}]: fd {fd} tape {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let p = policy(1, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut critic = Mlp::new(&mut rng, &[3, 5, 1], Activation::Tanh);
        let batch = random_batch(&mut rng, 6, 3, 2);
        let cfg = PpoConfig::default();
        let (_, _, grads) = ppo_grads(&p, &critic, &batch, &cfg);
        let loss = |c: &Mlp| {
            let v = c.infer(&batch.priv_obs);
            (&v - &batch.returns).mapv(|e| e * e).mean().unwrap()
        };
        let h = 1e-6;
        for k in 0..critic.params().len() {
            let dim = critic.params()[k].dim();
            for i in 0..dim.0 {
                for j in 0..dim.1 {
                    let orig = critic.params_mut()[k][[i, j]];
                    critic.params_mut()[k][[i, j]] = orig + h;
                    let up = loss(&critic);
                    critic.params_mut()[k][[i, j]] = orig - h;
                    let down = loss(&critic);
                    critic.params_mut()[k][[i, j]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let g = grads[k][[i, j]];
                    assert!((fd - g).abs() < 1e-5 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn gae_matches_discounted_sums_without_dones() {
        // with lam = 1 and no terminations, the advantage is the full
        // discounted return minus the baseline
        let rewards = [1.0, 2.0, 0.5, -1.0];
        let values = [0.3, 0.1, -0.2, 0.4];
        let dones = [false; 4];
        let last_v = 0.7;
        let gamma = 0.9;
        let (adv, ret) = gae(&rewards, &values, &dones, last_v, gamma, 1.0);
        for t in 0..4 {
            let mut expect = 0.0;
            let mut disc = 1.0;
            for k in t..4 {
                expect += disc * rewards[k];
                disc *= gamma;
            }
            expect += disc * last_v;
            assert!((adv[t] - (expect - values[t])).abs() < 1e-12, "t = {t}");
            assert!((ret[t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_resets_at_episode_boundaries() {
        let rewards = [1.0, 1.0, 1.0, 1.0];
        let values = [0.0; 4];
        let dones = [false, true, false, false];
        let (adv, _) = gae(&rewards, &values, &dones, 100.0, 0.99, 0.95);
        // the done at t = 1 blocks everything after it from leaking back
        let (adv_short, _) = gae(&rewards[..2], &values[..2], &[false, true], 0.0, 0.99, 0.95);
        assert!((adv[0] - adv_short[0]).abs() < 1e-12);
        assert!((adv[1] - adv_short[1]).abs() < 1e-12);
    }

    #[test]
    fn unchanged_policy_gives_unit_ratio_and_zero_kl() {
        let p = policy(6, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let critic = Mlp::new(&mut rng, &[3, 4, 1], Activation::Tanh);
        let mut batch = random_batch(&mut rng, 8, 3, 2);
        // old log-probs recorded from the very policy being updated
        for i in 0..8 {
            let obs: Vec<f64> = batch.obs.row(i).to_vec();
            let act: Vec<f64> = batch.actions.row(i).to_vec();
            batch.old_log_probs[[i, 0]] = p.log_prob(&obs, &act);
        }
        let cfg = PpoConfig::default();
        let (stats, _, _) = ppo_grads(&p, &critic, &batch, &cfg);
        assert!(stats.approx_kl.abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
        // surrogate = mean advantage when every ratio is 1
        let mean_adv = batch.advantages.mean().unwrap();
        assert!((stats.policy_loss - (-mean_adv)).abs() < 1e-10);
    }

    #[test]
    fn single_transition_gae_closed_form() {
        // gamma*lambda = 0: advantage reduces to the one-step TD error
        let (adv, _) = gae(&[2.0], &[0.5], &[false], 1.5, 0.9, 0.0);
        assert!((adv[0] - (2.0 + 0.9 * 1.5 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn advantages_normalize_to_zero_mean_unit_std() {
        let mut a = vec![3.0, -1.0, 2.0, 10.0, 0.5];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / a.len() as f64;
        let var: f64 = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_action_log_prob_is_consistent() {
        let p = policy(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs = [0.1, -0.3, 0.7, 0.0];
        let (a, lp) = p.act(&obs, &mut rng);
        assert!((lp - p.log_prob(&obs, &a)).abs() < 1e-12);
        // mean action has the highest density
        assert!(p.log_prob(&obs, &p.mean_action(&obs)) >= lp);
    }

    #[test]
    fn log_std_clamped_after_updates() {
        let mut p = policy(2, 3, 2);
        p.log_std.fill(5.0);
        p.clamp_log_std();
        assert!(p.log_std.iter().all(|&v| v <= LOG_STD_MAX));
        p.log_std.fill(-9.0);
        p.clamp_log_std();
        assert!(p.log_std.iter().all(|&v| v >= LOG_STD_MIN));
    }

    #[test]
    fn update_reduces_loss_on_fixed_batch() {
        let mut p = policy(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut critic = Mlp::new(&mut rng, &[4, 8, 1], Activation::Tanh);
        let batch = random_batch(&mut rng, 32, 4, 2);
        let cfg = PpoConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut op = Adam::new(cfg.learning_rate, &p.params());
        let mut oc = Adam::new(cfg.learning_rate, &critic.params());
        let first = ppo_update(&mut p, &mut critic, &mut op, &mut oc, &batch, &cfg);
        let mut last = first;
        for _ in 0..50 {
            last = ppo_update(&mut p, &mut critic, &mut op, &mut oc, &batch, &cfg);
        }
        assert!(last.value_loss < first.value_loss);
        assert!(last.policy_loss.is_finite() && last.approx_kl.is_finite());
    }
}
