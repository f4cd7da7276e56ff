//! Adam optimizer over a flat list of parameter arrays.

use super::tape::Arr;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Arr>,
    v: Vec<Arr>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[&Arr]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|a| Arr::zeros(a.raw_dim())).collect(),
            v: shapes.iter().map(|a| Arr::zeros(a.raw_dim())).collect(),
            t: 0,
        }
    }

    /// One update. `params` and `grads` must line up with the construction
    /// order and shapes.
    pub fn step(&mut self, params: &mut [&mut Arr], grads: &[Arr]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.raw_dim(), g.raw_dim());
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(&mut **p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

/// Global L2-norm clipping; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Arr], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|e| e * e).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn converges_on_quadratic() {
        let mut p = array![[5.0, -3.0]];
        let mut adam = Adam::new(0.1, &[&p]);
        for _ in 0..500 {
            let g = p.mapv(|x| 2.0 * x);
            adam.step(&mut [&mut p], &[g]);
        }
        assert!(p.mapv(f64::abs).sum() < 1e-3);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![array![[3.0, 4.0]]];
        let pre = clip_grad_norm(&mut g, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        let post = g[0].iter().map(|e| e * e).sum::<f64>().sqrt();
        assert!((post - 1.0).abs() < 1e-12);
    }
}
