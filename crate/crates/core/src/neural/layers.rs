//! Parameterised layers. Each layer only records parameter ids; the values
//! live in a [`ParamStore`] so a model is a plain struct plus a store.

use rand::Rng;

use super::attention::AttnSpec;
use super::{NeuralError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Xavier-uniform weights `[fan_in, fan_out]`, zero bias.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::xavier(fan_in, fan_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
        Linear { w, b }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var, NeuralError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }

    /// Tape-free evaluation on a plain matrix.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let (w, b) = (store.get(self.w), store.get(self.b));
        let (m, k, n) = (x.rows(), x.cols(), w.cols());
        let mut out = Tensor::zeros(vec![m, n]);
        for row in out.data.chunks_mut(n) {
            row.copy_from_slice(&b.data);
        }
        super::tensor::gemm(m, k, n, &x.data, k, 1, &w.data, n, 1, 1.0, &mut out.data, n, 1);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::new(vec![width], vec![1.0; width]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![width]));
        LayerNorm { gamma, beta }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var, NeuralError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention with query, key, value and output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            heads,
        }
    }

    /// `spec.heads` is overwritten with the layer's head count.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        query: Var,
        memory: Var,
        mut spec: AttnSpec,
    ) -> Result<Var, NeuralError> {
        let (k, v) = self.project_memory(tape, store, memory)?;
        spec.heads = self.heads;
        self.forward_projected(tape, store, query, k, v, spec)
    }

    /// Key and value projections of `memory`, reusable across query sets.
    pub fn project_memory<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, memory: Var) -> Result<(Var, Var), NeuralError> {
        Ok((self.wk.forward(tape, store, memory)?, self.wv.forward(tape, store, memory)?))
    }

    pub fn forward_projected<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        query: Var,
        k: Var,
        v: Var,
        spec: AttnSpec,
    ) -> Result<Var, NeuralError> {
        let q = self.wq.forward(tape, store, query)?;
        let a = tape.attention(q, k, v, spec)?;
        self.wo.forward(tape, store, a)
    }
}
