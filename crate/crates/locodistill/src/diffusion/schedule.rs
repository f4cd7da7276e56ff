//! DDPM noise schedule and the forward (noising) process.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Arr;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule bounds: need 0 < beta_min <= beta_max < 1, got [{0}, {1}]")]
    BadBetas(f64, f64),
    #[error("K must be >= 1")]
    BadSteps,
    #[error("diffusion timestep {t} out of range [1, {k}]")]
    BadTimestep { t: usize, k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            beta_min: 1.0e-4,
            beta_max: 0.02,
        }
    }
}

/// Linear-β schedule with precomputed α and cumulative ᾱ.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    /// 1-based accessors matching the DDPM index convention.
    pub fn beta_t(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_t(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar_t(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}

/// Linear β from `beta_min` to `beta_max` over K steps; α = 1 − β,
/// ᾱ_t = Π α_s.
pub fn build_noise_schedule(cfg: &ScheduleConfig) -> Result<NoiseSchedule, ScheduleError> {
    if cfg.steps < 1 {
        return Err(ScheduleError::BadSteps);
    }
    if !(cfg.beta_min > 0.0 && cfg.beta_min <= cfg.beta_max && cfg.beta_max < 1.0) {
        return Err(ScheduleError::BadBetas(cfg.beta_min, cfg.beta_max));
    }
    let k = cfg.steps;
    let beta: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                cfg.beta_min
            } else {
                cfg.beta_min + (cfg.beta_max - cfg.beta_min) * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(k);
    let mut prod = 1.0;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, t in [1, K].
pub fn forward_noising(
    x0: &Arr,
    t: usize,
    eps: &Arr,
    schedule: &NoiseSchedule,
) -> Result<Arr, ScheduleError> {
    if t < 1 || t > schedule.k() {
        return Err(ScheduleError::BadTimestep {
            t,
            k: schedule.k(),
        });
    }
    assert_eq!(x0.dim(), eps.dim());
    let ab = schedule.alpha_bar_t(t);
    Ok(x0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// Sinusoidal timestep embedding rows (one per batch element), dim must be
/// even.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Arr {
    assert_eq!(dim % 2, 0, "embedding dim must be even");
    let mut out = Array2::zeros((ts.len(), dim));
    for (r, &t) in ts.iter().enumerate() {
        for i in 0..dim / 2 {
            let freq = (10_000.0f64).powf(-2.0 * i as f64 / dim as f64);
            out[[r, 2 * i]] = (t as f64 * freq).sin();
            out[[r, 2 * i + 1]] = (t as f64 * freq).cos();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_schedule() {
        let s = build_noise_schedule(&ScheduleConfig {
            steps: 1,
            beta_min: 0.01,
            beta_max: 0.02,
        })
        .unwrap();
        assert_eq!(s.alpha_bar, vec![1.0 - 0.01]);
    }

    #[test]
    fn alpha_bar_matches_direct_product_and_decreases() {
        let s = build_noise_schedule(&ScheduleConfig::default()).unwrap();
        let mut prod = 1.0;
        for t in 1..=10 {
            prod *= 1.0 - s.beta_t(t);
            assert!((s.alpha_bar_t(t) - prod).abs() < 1e-15);
            if t > 1 {
                assert!(s.alpha_bar_t(t) < s.alpha_bar_t(t - 1));
            }
            // algebraic identity used as a sanity bound
            let sq = s.alpha_bar_t(t).sqrt();
            assert!((sq * sq + (1.0 - s.alpha_bar_t(t)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_beta_closed_form() {
        let b = 0.05;
        let s = build_noise_schedule(&ScheduleConfig {
            steps: 7,
            beta_min: b,
            beta_max: b,
        })
        .unwrap();
        for t in 1..=7 {
            assert!((s.alpha_bar_t(t) - (1.0 - b).powi(t as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        for (lo, hi) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-0.1, 0.5)] {
            assert!(build_noise_schedule(&ScheduleConfig {
                steps: 4,
                beta_min: lo,
                beta_max: hi,
            })
            .is_err());
        }
        assert!(build_noise_schedule(&ScheduleConfig {
            steps: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn noiseless_branch() {
        let s = build_noise_schedule(&ScheduleConfig::default()).unwrap();
        let x0 = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64);
        let z = Array2::zeros((3, 2));
        let xt = forward_noising(&x0, 5, &z, &s).unwrap();
        let expect = &x0 * s.alpha_bar_t(5).sqrt();
        assert!((&xt - &expect).mapv(f64::abs).sum() < 1e-15);
    }

    #[test]
    fn timestep_out_of_range() {
        let s = build_noise_schedule(&ScheduleConfig::default()).unwrap();
        let x = Array2::zeros((1, 1));
        assert!(forward_noising(&x, 0, &x, &s).is_err());
        assert!(forward_noising(&x, 11, &x, &s).is_err());
    }

    #[test]
    fn monte_carlo_variance() {
        // Var(x_t) = abar Var(x0) + (1 - abar) for unit-Gaussian noise
        let s = build_noise_schedule(&ScheduleConfig {
            steps: 10,
            beta_min: 0.01,
            beta_max: 0.2,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = 6;
        let x0v: f64 = 2.0; // Var of x0 draws below
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x0 = Array2::from_elem((1, 1), rng.gen_range(-1.0f64..1.0) * (3.0 * x0v).sqrt());
            let eps = Array2::from_elem((1, 1), {
                let u: f64 = rng.sample(rand_distr::StandardNormal);
                u
            });
            let xt = forward_noising(&x0, t, &eps, &s).unwrap()[[0, 0]];
            sum += xt;
            sumsq += xt * xt;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let expect = s.alpha_bar_t(t) * x0v + (1.0 - s.alpha_bar_t(t));
        assert!(
            (var - expect).abs() / expect < 0.02,
            "var {var} expect {expect}"
        );
    }

    #[test]
    fn embedding_shape_and_range() {
        let e = timestep_embedding(&[1, 5, 9], 8);
        assert_eq!(e.dim(), (3, 8));
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        // distinct timesteps embed distinctly
        assert!((&e.row(0) - &e.row(2)).mapv(f64::abs).sum() > 1e-3);
    }
}
