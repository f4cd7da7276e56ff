//! The conditional denoiser: MLP encoders for history and goal, sinusoidal
//! timestep embedding, and a stack of transformer decoder layers with
//! cross-attention to the conditioning tokens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Arr, Linear, Tape, Var};
use crate::sim::{ACTOR_OBS_DIM, NUM_JOINTS};

use super::schedule::{timestep_embedding, ScheduleConfig};

/// Number of conditioning tokens fed to cross-attention: history, goal,
/// timestep.
pub const COND_TOKENS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    BadConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    /// History length H_o in control steps.
    pub history: usize,
    /// Prediction horizon H_p in actions.
    pub horizon: usize,
    pub schedule: ScheduleConfig,
    pub width: usize,
    pub heads: usize,
    pub decoder_depth: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub goal_dim: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            history: 4,
            horizon: 8,
            schedule: ScheduleConfig::default(),
            width: 256,
            heads: 8,
            decoder_depth: 6,
            obs_dim: ACTOR_OBS_DIM,
            act_dim: NUM_JOINTS,
            goal_dim: 2,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.history < 1 || self.horizon < 1 || self.schedule.steps < 1 {
            return Err(ModelError::BadConfig(
                "history, horizon, and K must all be >= 1".into(),
            ));
        }
        if self.width % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "head count {} must divide width {}",
                self.heads, self.width
            )));
        }
        if self.width % 2 != 0 {
            return Err(ModelError::BadConfig("width must be even".into()));
        }
        Ok(())
    }

    pub fn history_dim(&self) -> usize {
        self.history * (self.obs_dim + self.act_dim)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: (Arr, Arr),
    cq: Linear,
    ck: Linear,
    cv: Linear,
    co: Linear,
    ln2: (Arr, Arr),
    ff1: Linear,
    ff2: Linear,
    ln3: (Arr, Arr),
}

impl DecoderLayer {
    fn new(rng: &mut ChaCha8Rng, w: usize) -> Self {
        let ln = |w: usize| (Arr::from_elem((1, w), 1.0), Arr::zeros((1, w)));
        Self {
            wq: Linear::new(rng, w, w),
            wk: Linear::new(rng, w, w),
            wv: Linear::new(rng, w, w),
            wo: Linear::new_scaled(rng, w, w, 0.5),
            ln1: ln(w),
            cq: Linear::new(rng, w, w),
            ck: Linear::new(rng, w, w),
            cv: Linear::new(rng, w, w),
            co: Linear::new_scaled(rng, w, w, 0.5),
            ln2: ln(w),
            ff1: Linear::new(rng, w, 2 * w),
            ff2: Linear::new_scaled(rng, 2 * w, w, 0.5),
            ln3: ln(w),
        }
    }
}

/// Noise-prediction network; output shape always equals the noisy-action
/// input shape.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub cfg: DiffusionConfig,
    hist_enc: [Linear; 2],
    goal_enc: [Linear; 2],
    time_proj: Linear,
    in_proj: Linear,
    pos: Arr,
    layers: Vec<DecoderLayer>,
    out_proj: Linear,
}

impl Denoiser {
    pub fn new(seed: u64, cfg: &DiffusionConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.width;
        Ok(Self {
            cfg: cfg.clone(),
            hist_enc: [Linear::new(&mut rng, cfg.history_dim(), w), Linear::new(&mut rng, w, w)],
            goal_enc: [Linear::new(&mut rng, cfg.goal_dim, w), Linear::new(&mut rng, w, w)],
            time_proj: Linear::new(&mut rng, w, w),
            in_proj: Linear::new(&mut rng, cfg.act_dim, w),
            pos: Arr::from_shape_fn((cfg.horizon, w), |_| {
                use rand::Rng;
                rng.gen_range(-0.02..0.02)
            }),
            layers: (0..cfg.decoder_depth)
                .map(|_| DecoderLayer::new(&mut rng, w))
                .collect(),
            out_proj: Linear::new_scaled(&mut rng, w, cfg.act_dim, 0.1),
        })
    }

    pub fn params(&self) -> Vec<&Arr> {
        let mut p = Vec::new();
        for l in self.hist_enc.iter().chain(self.goal_enc.iter()) {
            p.push(&l.w);
            p.push(&l.b);
        }
        for l in [&self.time_proj, &self.in_proj] {
            p.push(&l.w);
            p.push(&l.b);
        }
        p.push(&self.pos);
        for layer in &self.layers {
            for l in [
                &layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.cq, &layer.ck, &layer.cv,
                &layer.co, &layer.ff1, &layer.ff2,
            ] {
                p.push(&l.w);
                p.push(&l.b);
            }
            for ln in [&layer.ln1, &layer.ln2, &layer.ln3] {
                p.push(&ln.0);
                p.push(&ln.1);
            }
        }
        p.push(&self.out_proj.w);
        p.push(&self.out_proj.b);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Arr> {
        let mut p: Vec<&mut Arr> = Vec::new();
        for l in self.hist_enc.iter_mut().chain(self.goal_enc.iter_mut()) {
            p.push(&mut l.w);
            p.push(&mut l.b);
        }
        for l in [&mut self.time_proj, &mut self.in_proj] {
            p.push(&mut l.w);
            p.push(&mut l.b);
        }
        p.push(&mut self.pos);
        for layer in &mut self.layers {
            let DecoderLayer {
                wq,
                wk,
                wv,
                wo,
                ln1,
                cq,
                ck,
                cv,
                co,
                ln2,
                ff1,
                ff2,
                ln3,
            } = layer;
            for l in [wq, wk, wv, wo, cq, ck, cv, co, ff1, ff2] {
                p.push(&mut l.w);
                p.push(&mut l.b);
            }
            for ln in [ln1, ln2, ln3] {
                p.push(&mut ln.0);
                p.push(&mut ln.1);
            }
        }
        p.push(&mut self.out_proj.w);
        p.push(&mut self.out_proj.b);
        p
    }

    /// Forward pass on a tape. `history` is `B x history_dim`, `goal` is
    /// `B x goal_dim`, `noisy` is `(B*H_p) x act_dim` batch-major, `ts` one
    /// diffusion timestep per batch element. Returns the noise prediction and
    /// the parameter leaves in `params_mut` order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        history: Var,
        goal: Var,
        noisy: Var,
        ts: &[usize],
        batch: usize,
    ) -> (Var, Vec<Var>) {
        let mut leaves = Vec::new();
        let tracked = |tape: &mut Tape, l: &Linear, x: Var, leaves: &mut Vec<Var>| {
            let (y, w, b) = l.forward_tracked(tape, x);
            leaves.push(w);
            leaves.push(b);
            y
        };

        // conditioning tokens
        let h = tracked(tape, &self.hist_enc[0], history, &mut leaves);
        let h = tape.tanh(h);
        let h = tracked(tape, &self.hist_enc[1], h, &mut leaves);
        let g = tracked(tape, &self.goal_enc[0], goal, &mut leaves);
        let g = tape.tanh(g);
        let g = tracked(tape, &self.goal_enc[1], g, &mut leaves);
        let temb = tape.leaf(timestep_embedding(ts, self.cfg.width));
        let tm = tracked(tape, &self.time_proj, temb, &mut leaves);
        let cond = tape.stack_tokens(&[h, g, tm]);

        // noisy action tokens with positional embedding
        let mut x = tracked(tape, &self.in_proj, noisy, &mut leaves);
        let pos = tape.leaf(self.pos.clone());
        leaves.push(pos);
        x = tape.add_tiled(x, pos, batch);

        let hp = self.cfg.horizon;
        let heads = self.cfg.heads;
        for layer in &self.layers {
            // self-attention over the action sequence
            let q = tracked(tape, &layer.wq, x, &mut leaves);
            let k = tracked(tape, &layer.wk, x, &mut leaves);
            let v = tracked(tape, &layer.wv, x, &mut leaves);
            let a = tape.attention(q, k, v, batch, hp, hp, heads);
            let a = tracked(tape, &layer.wo, a, &mut leaves);
            let s = tape.add(x, a);
            let g1 = tape.leaf(layer.ln1.0.clone());
            let b1 = tape.leaf(layer.ln1.1.clone());
            x = tape.layer_norm(s, g1, b1, 1e-5);

            // cross-attention to the conditioning tokens
            let q = tracked(tape, &layer.cq, x, &mut leaves);
            let k = tracked(tape, &layer.ck, cond, &mut leaves);
            let v = tracked(tape, &layer.cv, cond, &mut leaves);
            let a = tape.attention(q, k, v, batch, hp, COND_TOKENS, heads);
            let a = tracked(tape, &layer.co, a, &mut leaves);
            let s = tape.add(x, a);
            let g2 = tape.leaf(layer.ln2.0.clone());
            let b2 = tape.leaf(layer.ln2.1.clone());
            x = tape.layer_norm(s, g2, b2, 1e-5);

            // feed-forward
            let f = tracked(tape, &layer.ff1, x, &mut leaves);
            let f = tape.relu(f);
            let f = tracked(tape, &layer.ff2, f, &mut leaves);
            let s = tape.add(x, f);
            let g3 = tape.leaf(layer.ln3.0.clone());
            let b3 = tape.leaf(layer.ln3.1.clone());
            x = tape.layer_norm(s, g3, b3, 1e-5);

            // reorder leaves so the layer-norm params land in params order
            // (attention/ff linears first, then the three norms)
            leaves.extend([g1, b1, g2, b2, g3, b3]);
        }
        let out = tracked(tape, &self.out_proj, x, &mut leaves);
        (out, leaves)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, history: &Arr, goal: &Arr, noisy: &Arr, ts: &[usize]) -> Arr {
        let batch = history.nrows();
        let mut tape = Tape::new();
        let h = tape.leaf(history.clone());
        let g = tape.leaf(goal.clone());
        let n = tape.leaf(noisy.clone());
        let (out, _) = self.forward(&mut tape, h, g, n, ts, batch);
        tape.value(out).clone()
    }
}
