//! Style discriminator: least-squares GAN objective with a gradient penalty
//! on the reference samples.
//!
//! The penalty needs `|grad_x D|^2` inside the loss, so the input gradient of
//! the two-hidden-layer tanh network is composed explicitly from tape ops
//! (`grad_x D = diag(1-a1^2) W1` chained through both layers); backprop
//! through that expression then yields the required second-order parameter
//! gradients.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{clip_grad_norm, Activation, Adam, Arr, Mlp, Tape, Var};

use super::reference::TRANSITION_FEATURE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    /// Gradient penalty weight.
    pub w_gp: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            w_gp: 10.0,
            learning_rate: 1.0e-4,
            max_grad_norm: 1.0,
        }
    }
}

/// Two-hidden-layer tanh MLP scoring transitions; higher = more reference-like.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn new(seed: u64, cfg: &DiscriminatorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: Mlp::new(
                &mut rng,
                &[TRANSITION_FEATURE_DIM, cfg.hidden, cfg.hidden, 1],
                Activation::Tanh,
            ),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        assert_eq!(net.layers.len(), 3, "discriminator must have 2 hidden layers");
        assert_eq!(net.hidden_act, Activation::Tanh);
        Self { net }
    }

    /// Scores for a batch of transition features (one row each).
    pub fn score(&self, features: &Arr) -> Vec<f64> {
        self.net.infer(features).column(0).to_vec()
    }

    pub fn score_one(&self, feat: &[f64]) -> f64 {
        let x = Array2::from_shape_vec((1, feat.len()), feat.to_vec()).unwrap();
        self.net.infer(&x)[[0, 0]]
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DiscriminatorStats {
    pub loss: f64,
    pub gradient_penalty: f64,
    pub mean_reference_score: f64,
    pub mean_policy_score: f64,
}

struct TapedLayers {
    w: [Var; 3],
    b: [Var; 3],
}

impl TapedLayers {
    fn leaves(tape: &mut Tape, net: &Mlp) -> Self {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for l in &net.layers {
            w.push(tape.leaf(l.w.clone()));
            b.push(tape.leaf(l.b.clone()));
        }
        Self {
            w: [w[0], w[1], w[2]],
            b: [b[0], b[1], b[2]],
        }
    }

    /// Forward pass returning (score, a1, a2) for the input-gradient chain.
    fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Var, Var) {
        let h1 = tape.matmul_nt(x, self.w[0]);
        let h1 = tape.add_row(h1, self.b[0]);
        let a1 = tape.tanh(h1);
        let h2 = tape.matmul_nt(a1, self.w[1]);
        let h2 = tape.add_row(h2, self.b[1]);
        let a2 = tape.tanh(h2);
        let y = tape.matmul_nt(a2, self.w[2]);
        let y = tape.add_row(y, self.b[2]);
        (y, a1, a2)
    }

    /// `mean_i |grad_x D(x_i)|^2`, built from tape ops so it is itself
    /// differentiable with respect to the parameters.
    fn grad_penalty(&self, tape: &mut Tape, a1: Var, a2: Var) -> Var {
        let one_minus = |tape: &mut Tape, a: Var| {
            let sq = tape.square(a);
            let neg = tape.neg(sq);
            tape.add_scalar(neg, 1.0)
        };
        let d2 = one_minus(tape, a2);
        let s2 = tape.mul_row(d2, self.w[2]); // w3 is 1 x hidden
        let back1 = tape.matmul(s2, self.w[1]);
        let d1 = one_minus(tape, a1);
        let s1 = tape.mul(d1, back1);
        let gx = tape.matmul(s1, self.w[0]);
        let gsq = tape.square(gx);
        let norms = tape.sum_rows(gsq);
        tape.mean_all(norms)
    }
}

fn mean_sq_offset(tape: &mut Tape, scores: Var, target: f64) -> Var {
    let shifted = tape.add_scalar(scores, -target);
    let sq = tape.square(shifted);
    tape.mean_all(sq)
}

/// One LSGAN step: reference toward +1, policy toward -1, plus the gradient
/// penalty on reference inputs. Returns the loss terms and mean scores.
pub fn discriminator_update(
    disc: &mut Discriminator,
    opt: &mut Adam,
    policy_features: &Arr,
    reference_features: &Arr,
    cfg: &DiscriminatorConfig,
) -> DiscriminatorStats {
    let (stats, mut grads) = discriminator_grads(disc, policy_features, reference_features, cfg);
    clip_grad_norm(&mut grads, cfg.max_grad_norm);
    opt.step(&mut disc.net.params_mut(), &grads);
    stats
}

/// Loss, stats, and parameter gradients without applying the optimizer.
pub fn discriminator_grads(
    disc: &Discriminator,
    policy_features: &Arr,
    reference_features: &Arr,
    cfg: &DiscriminatorConfig,
) -> (DiscriminatorStats, Vec<Arr>) {
    assert_eq!(disc.net.layers.len(), 3);
    let mut tape = Tape::new();
    let layers = TapedLayers::leaves(&mut tape, &disc.net);

    let x_ref = tape.leaf(reference_features.clone());
    let x_pol = tape.leaf(policy_features.clone());
    let (y_ref, a1, a2) = layers.forward(&mut tape, x_ref);
    let (y_pol, _, _) = layers.forward(&mut tape, x_pol);

    let l_ref = mean_sq_offset(&mut tape, y_ref, 1.0);
    let l_pol = mean_sq_offset(&mut tape, y_pol, -1.0);
    let gp = layers.grad_penalty(&mut tape, a1, a2);
    let gp_term = tape.scale(gp, cfg.w_gp);
    let gan = tape.add(l_ref, l_pol);
    let loss = tape.add(gan, gp_term);
    tape.backward(loss);

    let mut grads = Vec::with_capacity(6);
    for i in 0..3 {
        grads.push(tape.grad(layers.w[i]));
        grads.push(tape.grad(layers.b[i]));
    }
    let stats = DiscriminatorStats {
        loss: tape.value(loss)[[0, 0]],
        gradient_penalty: tape.value(gp)[[0, 0]],
        mean_reference_score: tape.value(y_ref).mean().unwrap(),
        mean_policy_score: tape.value(y_pol).mean().unwrap(),
    };
    (stats, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(seed: u64, in_dim: usize, hidden: usize) -> Discriminator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Discriminator::from_net(Mlp::new(
            &mut rng,
            &[in_dim, hidden, hidden, 1],
            Activation::Tanh,
        ))
    }

    fn batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Arr {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Pure-ndarray loss for finite differencing the tape gradients against.
    fn reference_loss(disc: &Discriminator, pol: &Arr, refs: &Arr, w_gp: f64) -> f64 {
        let d_ref = disc.net.infer(refs);
        let d_pol = disc.net.infer(pol);
        let l_ref = d_ref.mapv(|v| (v - 1.0) * (v - 1.0)).mean().unwrap();
        let l_pol = d_pol.mapv(|v| (v + 1.0) * (v + 1.0)).mean().unwrap();
        // analytic input gradient of the tanh MLP
        let l = &disc.net.layers;
        let a1 = (refs.dot(&l[0].w.t()) + &l[0].b).mapv(f64::tanh);
        let a2 = (a1.dot(&l[1].w.t()) + &l[1].b).mapv(f64::tanh);
        let d2 = a2.mapv(|v| 1.0 - v * v) * &l[2].w; // broadcast 1 x h row
        let s1 = a1.mapv(|v| 1.0 - v * v) * &d2.dot(&l[1].w);
        let gx = s1.dot(&l[0].w);
        let gp = gx
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / gx.nrows() as f64;
        l_ref + l_pol + w_gp * gp
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let disc = tiny(3, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = batch(&mut rng, 1, 5);
        // tape-composed grad_x via the penalty chain on a single row
        let mut tape = Tape::new();
        let layers = TapedLayers::leaves(&mut tape, &disc.net);
        let xv = tape.leaf(x.clone());
        let (_, a1, a2) = layers.forward(&mut tape, xv);
        let d2 = {
            let sq = tape.square(a2);
            let n = tape.neg(sq);
            tape.add_scalar(n, 1.0)
        };
        let s2 = tape.mul_row(d2, layers.w[2]);
        let back1 = tape.matmul(s2, layers.w[1]);
        let d1 = {
            let sq = tape.square(a1);
            let n = tape.neg(sq);
            tape.add_scalar(n, 1.0)
        };
        let s1 = tape.mul(d1, back1);
        let gx = tape.matmul(s1, layers.w[0]);
        let composed = tape.value(gx).clone();

        let h = 1e-6;
        for j in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += h;
            xm[[0, j]] -= h;
            let fd = (disc.net.infer(&xp)[[0, 0]] - disc.net.infer(&xm)[[0, 0]]) / (2.0 * h);
            assert!(
                (fd - composed[[0, j]]).abs() < 1e-7,
                "col {j}: fd {fd} composed {}",
                composed[[0, j]]
            );
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut disc = tiny(7, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pol = batch(&mut rng, 6, 4);
        let refs = batch(&mut rng, 5, 4);
        let cfg = DiscriminatorConfig {
            w_gp: 5.0,
            ..Default::default()
        };
        let (_, grads) = discriminator_grads(&disc, &pol, &refs, &cfg);
        let h = 1e-6;
        let n_params = disc.net.params().len();
        for p in 0..n_params {
            let shape = disc.net.params()[p].dim();
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let orig = disc.net.params()[p][[i, j]];
                    disc.net.params_mut()[p][[i, j]] = orig + h;
                    let up = reference_loss(&disc, &pol, &refs, cfg.w_gp);
                    disc.net.params_mut()[p][[i, j]] = orig - h;
                    let down = reference_loss(&disc, &pol, &refs, cfg.w_gp);
                    disc.net.params_mut()[p][[i, j]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let g = grads[p][[i, j]];
                    assert!(
                        (fd - g).abs() < 1e-4 * (1.0 + fd.abs()),
                        "param {p} [{i},{j}]: fd {fd} tape {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn update_separates_labeled_batches() {
        let mut disc = Discriminator::new(0, &DiscriminatorConfig::default());
        let cfg = DiscriminatorConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg.learning_rate, &disc.net.params());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // two fixed, well-separated clusters
        let refs = batch(&mut rng, 32, TRANSITION_FEATURE_DIM) + 1.0;
        let pol = batch(&mut rng, 32, TRANSITION_FEATURE_DIM) - 1.0;
        let mut last = DiscriminatorStats::default();
        for _ in 0..200 {
            last = discriminator_update(&mut disc, &mut opt, &pol, &refs, &cfg);
        }
        assert!(last.loss.is_finite());
        assert!(
            last.mean_reference_score > last.mean_policy_score + 0.5,
            "ref {} pol {}",
            last.mean_reference_score,
            last.mean_policy_score
        );
    }

    #[test]
    fn penalty_shrinks_input_gradients() {
        // with a huge penalty weight, training should flatten the function
        let mut disc = tiny(9, 6, 8);
        let cfg = DiscriminatorConfig {
            w_gp: 100.0,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg.learning_rate, &disc.net.params());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refs = batch(&mut rng, 16, 6);
        let pol = batch(&mut rng, 16, 6);
        let before = discriminator_grads(&disc, &pol, &refs, &cfg).0.gradient_penalty;
        let mut after = before;
        for _ in 0..100 {
            after = discriminator_update(&mut disc, &mut opt, &pol, &refs, &cfg).gradient_penalty;
        }
        assert!(after < before * 0.5, "before {before} after {after}");
    }

    #[test]
    fn scores_are_deterministic() {
        let disc = Discriminator::new(42, &DiscriminatorConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = batch(&mut rng, 4, TRANSITION_FEATURE_DIM);
        assert_eq!(disc.score(&x), disc.score(&x));
    }
}
