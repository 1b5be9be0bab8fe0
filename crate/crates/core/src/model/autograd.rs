//! Minimal reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse. Only nodes that depend on a leaf created with
//! `requires_grad = true` receive gradients.

use ndarray::{s, Array1, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm(Var),
    CausalSoftmax(Var),
    ConcatRows(Var, Var),
    Gather(Var, Vec<usize>),
    CrossEntropy(Var, Vec<(usize, usize)>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Grads(Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn row_softmax_inplace(row: &mut ndarray::ArrayViewMut1<f64>, upto: usize) {
    let max = row
        .iter()
        .take(upto)
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if j < upto {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    row.iter_mut().take(upto).for_each(|v| *v /= sum);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.needs(&[a, b]);
        self.push(value, Op::MatMulBt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let rg = self.needs(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        let rg = self.needs(&[a]);
        self.push(value, Op::LayerNorm(a), rg)
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            row_softmax_inplace(&mut row, i + 1);
        }
        let rg = self.needs(&[a]);
        self.push(value, Op::CausalSoftmax(a), rg)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_rows: equal widths");
        let rg = self.needs(&[a, b]);
        self.push(value, Op::ConcatRows(a, b), rg)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let value = self.value(table).select(Axis(0), ids);
        let rg = self.needs(&[table]);
        self.push(value, Op::Gather(table, ids.to_vec()), rg)
    }

    /// Mean negative log-likelihood of `(row, class)` targets; a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        let l = self.value(logits);
        let mut total = 0.0;
        for &(row, class) in targets {
            let r = l.row(row);
            let max = r.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + r.mapv(|v| (v - max).exp()).sum().ln();
            total += lse - r[class];
        }
        let value = Array2::from_elem((1, 1), total / targets.len().max(1) as f64);
        let rg = self.needs(&[logits]);
        self.push(value, Op::CrossEntropy(logits, targets.to_vec()), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let wants = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if wants(b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if wants(a) {
                        acc(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if wants(b) {
                        acc(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if wants(b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, g * d);
                }
                Op::LayerNorm(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut dx = Array2::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let xr = x.row(i);
                        let n = xr.len() as f64;
                        let mean = xr.sum() / n;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let g_mean = gr.sum() / n;
                        let gy_mean = gr.dot(&yr) / n;
                        let out: Array1<f64> = (&gr - g_mean - &(&yr * gy_mean)) * inv;
                        dx.row_mut(i).assign(&out);
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::CausalSoftmax(a) => {
                    let p = &node.value;
                    let mut dx = Array2::zeros(p.raw_dim());
                    for i in 0..p.nrows() {
                        let pr = p.row(i);
                        let gr = g.row(i);
                        let dot = pr.dot(&gr);
                        dx.row_mut(i).assign(&(&pr * &(&gr - dot)));
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::ConcatRows(a, b) => {
                    let split = self.value(*a).nrows();
                    if wants(a) {
                        acc(&mut grads, *a, g.slice(s![..split, ..]).to_owned());
                    }
                    if wants(b) {
                        acc(&mut grads, *b, g.slice(s![split.., ..]).to_owned());
                    }
                }
                Op::Gather(table, ids) => {
                    let mut dt = Array2::zeros(self.value(*table).raw_dim());
                    for (row, &id) in ids.iter().enumerate() {
                        let mut target = dt.row_mut(id);
                        target += &g.row(row);
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::CrossEntropy(logits, targets) => {
                    let l = self.value(*logits);
                    let scale = g[[0, 0]] / targets.len().max(1) as f64;
                    let mut dl = Array2::zeros(l.raw_dim());
                    for &(row, class) in targets {
                        let r = l.row(row);
                        let max = r.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                        let e = r.mapv(|v| (v - max).exp());
                        let p = &e / e.sum();
                        let mut d = dl.row_mut(row);
                        d.scaled_add(scale, &p);
                        d[class] -= scale;
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        Grads(grads)
    }
}
