//! Minimal reverse-mode autodiff over dense `f64` matrices.
//!
//! A [`Tape`] records a computation as a flat list of nodes in topological
//! order; [`Tape::backward`] walks the list in reverse accumulating adjoints.
//! Tensors are 2-D; batched sequences are stored flattened as `(batch * tokens)
//! x dim` and the fused [`Tape::attention`] op carries the batch layout.
//!
//! The op set is deliberately small: exactly what the policy, discriminator,
//! and denoiser networks need, each with a hand-written adjoint.

use ndarray::{Array2, Axis};

pub type Arr = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    /// a @ b
    MatMul(Var, Var),
    /// a @ b^T
    MatMulNT(Var, Var),
    /// a^T @ b
    MatMulTN(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// x + row (row broadcast over rows of x)
    AddRow(Var, Var),
    /// x * row
    MulRow(Var, Var),
    /// x + tile(p, reps) where p has x.rows/reps rows
    AddTiled(Var, Var, usize),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Neg(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    /// n x m -> n x 1
    SumRows(Var),
    /// -> 1 x 1
    SumAll(Var),
    /// -> 1 x 1
    MeanAll(Var),
    SoftmaxRows(Var),
    /// layer_norm(x) * gain + bias, rowwise; gain/bias are 1 x m
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
        // cached normalized activations and 1/std per row
        norm: Arr,
        inv_std: Vec<f64>,
    },
    /// multi-head scaled dot-product attention over flattened batches
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        t_q: usize,
        t_kv: usize,
        heads: usize,
        /// softmax weights, one (t_q x t_kv) matrix per (batch, head)
        probs: Vec<Arr>,
    },
    /// interleave k inputs of shape (b x m) into (b*k x m), row b*k+i from input i
    StackTokens(Vec<Var>),
    /// rows [start, start+len) of x
    SliceRows(Var, usize, usize),
}

struct Node {
    value: Arr,
    grad: Option<Arr>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Arr, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Arr) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// Zero if `v` does not influence the target.
    pub fn grad(&self, v: Var) -> Arr {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Arr::zeros(self.nodes[v.0].value.raw_dim()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.t().dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMulTN(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let v = &self.nodes[x.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let v = &self.nodes[x.0].value * &self.nodes[row.0].value;
        self.push(v, Op::MulRow(x, row))
    }

    /// x + p tiled `reps` times along rows (positional embeddings).
    pub fn add_tiled(&mut self, x: Var, p: Var, reps: usize) -> Var {
        let xp = &self.nodes[x.0].value;
        let pp = &self.nodes[p.0].value;
        let tp = pp.nrows();
        assert_eq!(xp.nrows(), tp * reps);
        let mut v = xp.clone();
        for r in 0..reps {
            let mut s = v.slice_mut(ndarray::s![r * tp..(r + 1) * tp, ..]);
            s += pp;
        }
        self.push(v, Op::AddTiled(x, p, reps))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = &self.nodes[x.0].value * c;
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = &self.nodes[x.0].value + c;
        self.push(v, Op::AddScalar(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let v = -&self.nodes[x.0].value;
        self.push(v, Op::Neg(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(f64::ln);
        self.push(v, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e * e);
        self.push(v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(f64::sqrt);
        self.push(v, Op::Sqrt(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut v = av.clone();
        v.zip_mut_with(bv, |x, &y| *x = x.min(y));
        self.push(v, Op::Minimum(a, b))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum_axis(Axis(1));
        let n = s.len();
        let v = s.into_shape_with_order((n, 1)).unwrap();
        self.push(v, Op::SumRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        self.push(Arr::from_elem((1, 1), s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let m = self.nodes[x.0].value.mean().unwrap();
        self.push(Arr::from_elem((1, 1), m), Op::MeanAll(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = softmax_rows(&self.nodes[x.0].value);
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let m = xv.ncols() as f64;
        let mut norm = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in norm.rows_mut() {
            let mu = row.sum() / m;
            row.mapv_inplace(|e| e - mu);
            let var = row.iter().map(|e| e * e).sum::<f64>() / m;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|e| e * is);
            inv_std.push(is);
        }
        let v = &norm * &self.nodes[gain.0].value + &self.nodes[bias.0].value;
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                eps,
                norm,
                inv_std,
            },
        )
    }

    /// Multi-head attention. `q` is `(batch*t_q) x d`, `k`/`v` are
    /// `(batch*t_kv) x d`, with `d` divisible by `heads`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        t_q: usize,
        t_kv: usize,
        heads: usize,
    ) -> Var {
        let d = self.nodes[q.0].value.ncols();
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        assert_eq!(self.nodes[q.0].value.nrows(), batch * t_q);
        assert_eq!(self.nodes[k.0].value.nrows(), batch * t_kv);

        let mut out = Arr::zeros((batch * t_q, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let qb = self.nodes[q.0]
                .value
                .slice(ndarray::s![b * t_q..(b + 1) * t_q, ..]);
            let kb = self.nodes[k.0]
                .value
                .slice(ndarray::s![b * t_kv..(b + 1) * t_kv, ..]);
            let vb = self.nodes[v.0]
                .value
                .slice(ndarray::s![b * t_kv..(b + 1) * t_kv, ..]);
            for h in 0..heads {
                let qh = qb.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
                let kh = kb.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
                let vh = vb.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
                let scores = qh.dot(&kh.t()) * scale;
                let p = softmax_rows(&scores);
                let oh = p.dot(&vh);
                out.slice_mut(ndarray::s![b * t_q..(b + 1) * t_q, h * dh..(h + 1) * dh])
                    .assign(&oh);
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                t_q,
                t_kv,
                heads,
                probs,
            },
        )
    }

    /// Interleave `inputs` (each `b x m`) into `(b*k) x m` token sequences.
    pub fn stack_tokens(&mut self, inputs: &[Var]) -> Var {
        let k = inputs.len();
        let b = self.nodes[inputs[0].0].value.nrows();
        let m = self.nodes[inputs[0].0].value.ncols();
        let mut v = Arr::zeros((b * k, m));
        for (i, &inp) in inputs.iter().enumerate() {
            let src = &self.nodes[inp.0].value;
            assert_eq!(src.dim(), (b, m));
            for r in 0..b {
                v.row_mut(r * k + i).assign(&src.row(r));
            }
        }
        self.push(v, Op::StackTokens(inputs.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0]
            .value
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        self.push(v, Op::SliceRows(x, start, len))
    }

    fn accumulate(&mut self, v: Var, g: Arr) {
        match &mut self.nodes[v.0].grad {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from `target`, which must be `1 x 1`.
    pub fn backward(&mut self, target: Var) {
        assert_eq!(self.nodes[target.0].value.dim(), (1, 1));
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[target.0].grad = Some(Arr::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match self.nodes[i].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            // take the op out so `accumulate` can borrow nodes mutably
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match &op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value);
                    let db = g.t().dot(&self.nodes[a.0].value);
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::MatMulTN(a, b) => {
                    let da = self.nodes[b.0].value.dot(&g.t());
                    let db = self.nodes[a.0].value.dot(&g);
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::Add(a, b) => {
                    self.accumulate(*a, g.clone());
                    self.accumulate(*b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(*a, g.clone());
                    self.accumulate(*b, -g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::AddRow(x, row) => {
                    let dr = g.sum_axis(Axis(0));
                    let m = dr.len();
                    self.accumulate(*x, g);
                    self.accumulate(*row, dr.into_shape_with_order((1, m)).unwrap());
                }
                Op::MulRow(x, row) => {
                    let dx = &g * &self.nodes[row.0].value;
                    let dr = (&g * &self.nodes[x.0].value).sum_axis(Axis(0));
                    let m = dr.len();
                    self.accumulate(*x, dx);
                    self.accumulate(*row, dr.into_shape_with_order((1, m)).unwrap());
                }
                Op::AddTiled(x, p, reps) => {
                    let tp = self.nodes[p.0].value.nrows();
                    let mut dp = Arr::zeros(self.nodes[p.0].value.raw_dim());
                    for r in 0..*reps {
                        dp += &g.slice(ndarray::s![r * tp..(r + 1) * tp, ..]);
                    }
                    self.accumulate(*x, g);
                    self.accumulate(*p, dp);
                }
                Op::Scale(x, c) => self.accumulate(*x, &g * *c),
                Op::AddScalar(x, _) => self.accumulate(*x, g),
                Op::Neg(x) => self.accumulate(*x, -g),
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    let dx = &g * &y.mapv(|e| 1.0 - e * e);
                    self.accumulate(*x, dx);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    dx.zip_mut_with(&self.nodes[x.0].value, |d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    self.accumulate(*x, dx);
                }
                Op::Exp(x) => {
                    let dx = &g * &self.nodes[i].value;
                    self.accumulate(*x, dx);
                }
                Op::Ln(x) => {
                    let dx = &g / &self.nodes[x.0].value;
                    self.accumulate(*x, dx);
                }
                Op::Square(x) => {
                    let dx = 2.0 * &g * &self.nodes[x.0].value;
                    self.accumulate(*x, dx);
                }
                Op::Sqrt(x) => {
                    let dx = &g * &self.nodes[i].value.mapv(|y| 0.5 / y);
                    self.accumulate(*x, dx);
                }
                Op::Clamp(x, lo, hi) => {
                    let mut dx = g;
                    dx.zip_mut_with(&self.nodes[x.0].value, |d, &v| {
                        if v < *lo || v > *hi {
                            *d = 0.0
                        }
                    });
                    self.accumulate(*x, dx);
                }
                Op::Minimum(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut da = g.clone();
                    let mut db = g;
                    ndarray::Zip::from(&mut da).and(av).and(bv).for_each(|d, &x, &y| {
                        if x > y {
                            *d = 0.0
                        }
                    });
                    ndarray::Zip::from(&mut db).and(av).and(bv).for_each(|d, &x, &y| {
                        if x <= y {
                            *d = 0.0
                        }
                    });
                    self.accumulate(*a, da);
                    self.accumulate(*b, db);
                }
                Op::SumRows(x) => {
                    let (n, m) = self.nodes[x.0].value.dim();
                    let mut dx = Arr::zeros((n, m));
                    for r in 0..n {
                        dx.row_mut(r).fill(g[(r, 0)]);
                    }
                    self.accumulate(*x, dx);
                }
                Op::SumAll(x) => {
                    let dx = Arr::from_elem(self.nodes[x.0].value.raw_dim(), g[(0, 0)]);
                    self.accumulate(*x, dx);
                }
                Op::MeanAll(x) => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let dx = Arr::from_elem(self.nodes[x.0].value.raw_dim(), g[(0, 0)] / n);
                    self.accumulate(*x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &self.nodes[i].value;
                    let dx = softmax_backward(y, &g);
                    self.accumulate(*x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    eps: _,
                    norm,
                    inv_std,
                } => {
                    let gain_v = self.nodes[gain.0].value.clone();
                    let dgain = (&g * norm).sum_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0));
                    let m = norm.ncols() as f64;
                    let dnorm = &g * &gain_v;
                    let mut dx = Arr::zeros(norm.raw_dim());
                    for r in 0..norm.nrows() {
                        let nr = norm.row(r);
                        let dnr = dnorm.row(r);
                        let s1 = dnr.sum();
                        let s2 = dnr.iter().zip(nr.iter()).map(|(a, b)| a * b).sum::<f64>();
                        let is = inv_std[r];
                        for c in 0..norm.ncols() {
                            dx[(r, c)] = is * (dnr[c] - s1 / m - nr[c] * s2 / m);
                        }
                    }
                    let mc = dgain.len();
                    let xv = *x;
                    let gv = *gain;
                    let bv = *bias;
                    self.accumulate(xv, dx);
                    self.accumulate(gv, dgain.into_shape_with_order((1, mc)).unwrap());
                    self.accumulate(bv, dbias.into_shape_with_order((1, mc)).unwrap());
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    batch,
                    t_q,
                    t_kv,
                    heads,
                    probs,
                } => {
                    let d = self.nodes[q.0].value.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Arr::zeros(self.nodes[q.0].value.raw_dim());
                    let mut dk = Arr::zeros(self.nodes[k.0].value.raw_dim());
                    let mut dv = Arr::zeros(self.nodes[v.0].value.raw_dim());
                    for b in 0..*batch {
                        for h in 0..*heads {
                            let p = &probs[b * heads + h];
                            let go = g.slice(ndarray::s![
                                b * t_q..(b + 1) * t_q,
                                h * dh..(h + 1) * dh
                            ]);
                            let qh = self.nodes[q.0].value.slice(ndarray::s![
                                b * t_q..(b + 1) * t_q,
                                h * dh..(h + 1) * dh
                            ]);
                            let kh = self.nodes[k.0].value.slice(ndarray::s![
                                b * t_kv..(b + 1) * t_kv,
                                h * dh..(h + 1) * dh
                            ]);
                            let vh = self.nodes[v.0].value.slice(ndarray::s![
                                b * t_kv..(b + 1) * t_kv,
                                h * dh..(h + 1) * dh
                            ]);
                            let dp = go.dot(&vh.t());
                            let dvh = p.t().dot(&go);
                            let ds = softmax_backward(p, &dp) * scale;
                            let dqh = ds.dot(&kh);
                            let dkh = ds.t().dot(&qh);
                            dq.slice_mut(ndarray::s![
                                b * t_q..(b + 1) * t_q,
                                h * dh..(h + 1) * dh
                            ])
                            .assign(&dqh);
                            dk.slice_mut(ndarray::s![
                                b * t_kv..(b + 1) * t_kv,
                                h * dh..(h + 1) * dh
                            ])
                            .assign(&dkh);
                            dv.slice_mut(ndarray::s![
                                b * t_kv..(b + 1) * t_kv,
                                h * dh..(h + 1) * dh
                            ])
                            .assign(&dvh);
                        }
                    }
                    let (qv, kv, vv) = (*q, *k, *v);
                    self.accumulate(qv, dq);
                    self.accumulate(kv, dk);
                    self.accumulate(vv, dv);
                }
                Op::StackTokens(inputs) => {
                    let inputs = inputs.clone();
                    let k = inputs.len();
                    let b = self.nodes[inputs[0].0].value.nrows();
                    for (idx, inp) in inputs.iter().enumerate() {
                        let mut di = Arr::zeros(self.nodes[inp.0].value.raw_dim());
                        for r in 0..b {
                            di.row_mut(r).assign(&g.row(r * k + idx));
                        }
                        self.accumulate(*inp, di);
                    }
                }
                Op::SliceRows(x, start, len) => {
                    let mut dx = Arr::zeros(self.nodes[x.0].value.raw_dim());
                    dx.slice_mut(ndarray::s![*start..*start + *len, ..]).assign(&g);
                    self.accumulate(*x, dx);
                }
            }
            self.nodes[i].op = op;
        }
    }
}

pub fn softmax_rows(x: &Arr) -> Arr {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|e| (e - max).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    out
}

/// Rowwise softmax adjoint: dx = y .* (dy - rowsum(dy .* y)).
fn softmax_backward(y: &Arr, dy: &Arr) -> Arr {
    let mut dx = dy.clone();
    for r in 0..y.nrows() {
        let yr = y.row(r);
        let s = dx.row(r).iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>();
        for c in 0..y.ncols() {
            dx[(r, c)] = yr[c] * (dx[(r, c)] - s);
        }
    }
    dx
}
