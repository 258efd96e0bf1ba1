//! Reverse-mode gradient tape over 2-D tensors.
//!
//! A tape lives for one forward/backward pass. Nodes are appended in
//! evaluation order, so walking them backwards is a valid topological order.

use std::borrow::Cow;

use rand::Rng;

use super::attention::{self, AttnSpec};
use super::loss::{xent_backward, xent_forward, XentCache};
use super::tensor::gemm;
use super::{NeuralError, ParamId, ParamStore, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttnSpec,
        probs: Vec<f64>,
    },
    Place {
        x: Var,
        positions: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        classes: usize,
        targets: Vec<usize>,
        allowed: Vec<bool>,
        severity: Option<Vec<f64>>,
        lambda: f64,
        cache: XentCache,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Parameters and constant inputs are borrowed, not copied, for the
/// lifetime `'a` of the tape.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

fn mismatch(msg: String) -> NeuralError {
    NeuralError::ShapeMismatch(msg)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_cow(Cow::Owned(value), op)
    }

    fn push_cow(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Constant input borrowed for the life of the tape.
    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        self.push_cow(Cow::Borrowed(t), Op::Leaf)
    }

    /// Trainable parameter; repeated calls with the same id share one node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf_ref(store.get(id));
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(mismatch(format!(
                "matmul {m}x{k} by {}x{n}",
                tb.rows()
            )));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(m, k, n, &ta.data, k, 1, &tb.data, n, 1, 0.0, &mut out.data, n, 1);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.cols() != tb.cols() {
            return Err(mismatch(format!("add {:?} + {:?}", ta.shape, tb.shape)));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape.clone(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `[cols]` (or `[1, cols]`) row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NeuralError> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.len() != tx.cols() {
            return Err(mismatch(format!("bias {:?} for input {:?}", tb.shape, tx.shape)));
        }
        let mut out = Tensor::clone(tx);
        for row in out.data.chunks_mut(tb.len()) {
            row.iter_mut().zip(&tb.data).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NeuralError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape.clone(), tx.data.iter().map(|&v| super::relu(v)).collect());
        self.push(out, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NeuralError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(mismatch(format!("layer norm over width {d} with gain {:?}", tg.shape)));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(tx.shape.clone());
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out.data[r * d + j] = tg.data[j] * h + tb.data[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Rows of `x` selected by `idx` (embedding lookup, row selection).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, NeuralError> {
        let tx = self.value(x);
        let (rows, d) = (tx.rows(), tx.cols());
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(mismatch(format!("row {bad} out of {rows}")));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::matrix(idx.len(), d, data);
        Ok(self.push(out, Op::Gather { x, idx }))
    }

    /// Inverted dropout. `p == 0` returns `x` itself.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = tx.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(tx.shape.clone(), data);
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttnSpec) -> Result<Var, NeuralError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        attention::check_shapes(tq, tk, tv, &spec)?;
        let (out, probs) = attention::forward(tq, tk, tv, &spec);
        Ok(self.push(out, Op::Attention { q, k, v, spec, probs }))
    }

    /// Scatters the elements of `x` into a zero tensor of `shape`:
    /// element `i` lands at flat index `positions[i]`.
    pub fn place(&mut self, x: Var, shape: Vec<usize>, positions: Vec<usize>) -> Result<Var, NeuralError> {
        let tx = self.value(x);
        let mut out = Tensor::zeros(shape);
        if positions.len() != tx.len() || positions.iter().any(|&p| p >= out.len()) {
            return Err(mismatch("place positions do not fit".into()));
        }
        for (&p, v) in positions.iter().zip(&tx.data) {
            out.data[p] = *v;
        }
        Ok(self.push(out, Op::Place { x, positions }))
    }

    /// Mean masked cross-entropy over the rows of `logits`, plus
    /// `lambda · E_p[severity]` when a combined severity is given.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<usize>,
        allowed: Vec<bool>,
        severity: Option<Vec<f64>>,
        lambda: f64,
    ) -> Result<Var, NeuralError> {
        let tl = self.value(logits);
        let classes = tl.cols();
        let (value, cache) = xent_forward(&tl.data, classes, &targets, &allowed, severity.as_deref(), lambda)?;
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                classes,
                targets,
                allowed,
                severity,
                lambda,
                cache,
            },
        ))
    }

    /// `Σ x_i w_i`; handy for probing gradients of arbitrary outputs.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var, NeuralError> {
        let tx = self.value(x);
        if weights.len() != tx.len() {
            return Err(mismatch("weight count differs from input size".into()));
        }
        let s = tx.data.iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var, delta: &[f64]) {
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
        g.iter_mut().zip(delta).for_each(|(a, b)| *a += b);
    }

    fn grad_buf<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> &'g mut Vec<f64> {
        grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<(), NeuralError> {
        if self.value(root).len() != 1 {
            return Err(mismatch("backward needs a scalar root".into()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA += dC · Bᵀ
                    gemm(m, n, k, &g, n, 1, &tb.data, 1, n, 1.0, Self::grad_buf(grads, nodes, *a), k, 1);
                    // dB += Aᵀ · dC
                    gemm(k, m, n, &ta.data, 1, k, &g, n, 1, 1.0, Self::grad_buf(grads, nodes, *b), n, 1);
                }
                Op::Add(a, b) => {
                    Self::accumulate(grads, nodes, *a, &g);
                    Self::accumulate(grads, nodes, *b, &g);
                }
                Op::AddBias(x, b) => {
                    Self::accumulate(grads, nodes, *x, &g);
                    let width = nodes[b.0].value.len();
                    let gb = Self::grad_buf(grads, nodes, *b);
                    for row in g.chunks(width) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                }
                Op::Relu(x) => {
                    let tx = &nodes[x.0].value;
                    let gx = Self::grad_buf(grads, nodes, *x);
                    for ((a, gv), xv) in gx.iter_mut().zip(&g).zip(&tx.data) {
                        if *xv > 0.0 {
                            *a += gv;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let d = nodes[gamma.0].value.len();
                    let gam = &nodes[gamma.0].value.data;
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    let mut dx = vec![0.0; g.len()];
                    let mut dxhat = vec![0.0; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum = 0.0;
                        let mut sum_h = 0.0;
                        for j in 0..d {
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                            dxhat[j] = gr[j] * gam[j];
                            sum += dxhat[j];
                            sum_h += dxhat[j] * hr[j];
                        }
                        let df = d as f64;
                        for j in 0..d {
                            dx[r * d + j] = is / df * (df * dxhat[j] - sum - hr[j] * sum_h);
                        }
                    }
                    Self::accumulate(grads, nodes, *x, &dx);
                    Self::accumulate(grads, nodes, *gamma, &dgamma);
                    Self::accumulate(grads, nodes, *beta, &dbeta);
                }
                Op::Gather { x, idx } => {
                    let d = nodes[x.0].value.cols();
                    let gx = Self::grad_buf(grads, nodes, *x);
                    for (r, &i) in idx.iter().enumerate() {
                        gx[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    Self::accumulate(grads, nodes, *x, &dx);
                }
                Op::Attention { q, k, v, spec, probs } => {
                    let (dq, dk, dv) = attention::backward(
                        &g,
                        &nodes[q.0].value,
                        &nodes[k.0].value,
                        &nodes[v.0].value,
                        probs,
                        spec,
                    );
                    Self::accumulate(grads, nodes, *q, &dq);
                    Self::accumulate(grads, nodes, *k, &dk);
                    Self::accumulate(grads, nodes, *v, &dv);
                }
                Op::Place { x, positions } => {
                    let dx: Vec<f64> = positions.iter().map(|&p| g[p]).collect();
                    Self::accumulate(grads, nodes, *x, &dx);
                }
                Op::CrossEntropy {
                    logits,
                    classes,
                    targets,
                    allowed,
                    severity,
                    lambda,
                    cache,
                } => {
                    let dl = xent_backward(cache, *classes, targets, allowed, severity.as_deref(), *lambda, g[0]);
                    Self::accumulate(grads, nodes, *logits, &dl);
                }
                Op::WeightedSum { x, weights } => {
                    let dx: Vec<f64> = weights.iter().map(|w| w * g[0]).collect();
                    Self::accumulate(grads, nodes, *x, &dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradients for every parameter used on this tape, aligned with the
    /// store; unused parameters get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.grad(v) {
                out[id.0].copy_from_slice(g);
            }
        }
        out
    }
}
