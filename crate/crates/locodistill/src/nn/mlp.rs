//! Linear layers and feed-forward networks on top of the tape.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Arr, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

/// Dense layer `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Arr,
    pub b: Arr,
}

impl Linear {
    /// He/Xavier-style uniform init scaled by fan-in.
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    /// Same init but with the weight magnitude scaled down; useful for
    /// output heads that should start near zero.
    pub fn new_scaled(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let mut l = Self::new(rng, fan_in, fan_out);
        l.w *= gain;
        l
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        let y = tape.matmul_nt(x, w);
        tape.add_row(y, b)
    }

    /// Forward that also returns the parameter leaves for gradient readout.
    pub fn forward_tracked(&self, tape: &mut Tape, x: Var) -> (Var, Var, Var) {
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        let y = tape.matmul_nt(x, w);
        (tape.add_row(y, b), w, b)
    }

    /// Plain forward without the tape, for inference.
    pub fn infer(&self, x: &Arr) -> Arr {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Feed-forward network with a shared hidden activation and linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_act: Activation,
}

impl Mlp {
    pub fn new(rng: &mut ChaCha8Rng, dims: &[usize], hidden_act: Activation) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        Self { layers, hidden_act }
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x);
            if i + 1 < n {
                x = match self.hidden_act {
                    Activation::Tanh => tape.tanh(x),
                    Activation::Relu => tape.relu(x),
                    Activation::Linear => x,
                };
            }
        }
        x
    }

    pub fn infer(&self, x: &Arr) -> Arr {
        let n = self.layers.len();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h);
            if i + 1 < n {
                match self.hidden_act {
                    Activation::Tanh => h.mapv_inplace(f64::tanh),
                    Activation::Relu => h.mapv_inplace(|e| e.max(0.0)),
                    Activation::Linear => {}
                }
            }
        }
        h
    }

    pub fn params(&self) -> Vec<&Arr> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Arr> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn tape_forward_matches_infer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut rng, &[3, 8, 2], Activation::Tanh);
        let x = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = mlp.forward(&mut tape, xv);
        let via_infer = mlp.infer(&x);
        let diff = (tape.value(y) - &via_infer).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn bias_starts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(&mut rng, 4, 4);
        assert_eq!(l.b.sum(), 0.0);
    }
}
