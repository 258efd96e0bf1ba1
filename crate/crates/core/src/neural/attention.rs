//! Scaled dot-product attention over grouped rows.
//!
//! A batch is a list of groups; each group's query rows attend only to that
//! group's key/value rows. This lets one call cover a whole mini-batch of
//! variable-length token sets, and lets many query groups share one block of
//! keys (a weather memory shared by samples from the same time frame).

use serde::{Deserialize, Serialize};

use super::tensor::gemm;
use super::{NeuralError, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub dropout_p: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            d_model: 128,
            n_heads: 4,
            dropout_p: 0.1,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(NeuralError::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NeuralError::InvalidConfig(format!("dropout_p={}", self.dropout_p)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Query rows `[q_start, q_start + q_len)` attend to key rows
/// `[k_start, k_start + k_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnGroup {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnSpec {
    pub heads: usize,
    pub groups: Vec<AttnGroup>,
    /// `false` removes a key row from every softmax it takes part in.
    pub key_mask: Option<Vec<bool>>,
}

impl AttnSpec {
    pub fn single(q_rows: usize, k_rows: usize, heads: usize) -> Self {
        AttnSpec {
            heads,
            groups: vec![AttnGroup {
                q_start: 0,
                q_len: q_rows,
                k_start: 0,
                k_len: k_rows,
            }],
            key_mask: None,
        }
    }

    fn prob_len(&self) -> usize {
        self.groups.iter().map(|g| g.q_len * g.k_len).sum::<usize>() * self.heads
    }
}

pub(crate) fn check_shapes(q: &Tensor, k: &Tensor, v: &Tensor, spec: &AttnSpec) -> Result<(), NeuralError> {
    let (d, dv) = (q.cols(), v.cols());
    if k.cols() != d {
        return Err(NeuralError::ShapeMismatch(format!(
            "query width {d} differs from key width {}",
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    if spec.heads == 0 || d % spec.heads != 0 || dv % spec.heads != 0 {
        return Err(NeuralError::ShapeMismatch(format!(
            "widths {d}/{dv} are not divisible by {} heads",
            spec.heads
        )));
    }
    for g in &spec.groups {
        if g.q_start + g.q_len > q.rows() || g.k_start + g.k_len > k.rows() {
            return Err(NeuralError::ShapeMismatch(format!("attention group {g:?} out of range")));
        }
    }
    if let Some(m) = &spec.key_mask {
        if m.len() != k.rows() {
            return Err(NeuralError::ShapeMismatch("key mask length differs from key rows".into()));
        }
    }
    Ok(())
}

/// Returns the concatenated head outputs `[q_rows, v_cols]` and the
/// attention probabilities, group by group and head by head.
pub(crate) fn forward(q: &Tensor, k: &Tensor, v: &Tensor, spec: &AttnSpec) -> (Tensor, Vec<f64>) {
    let (d, dv) = (q.cols(), v.cols());
    let (dh, dvh) = (d / spec.heads, dv / spec.heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(vec![q.rows(), dv]);
    let mut probs = vec![0.0; spec.prob_len()];
    let mut off = 0;
    for g in &spec.groups {
        if g.q_len == 0 || g.k_len == 0 {
            continue;
        }
        for h in 0..spec.heads {
            let p = &mut probs[off..off + g.q_len * g.k_len];
            off += g.q_len * g.k_len;
            gemm(
                g.q_len,
                dh,
                g.k_len,
                &q.data[g.q_start * d + h * dh..],
                d,
                1,
                &k.data[g.k_start * d + h * dh..],
                1,
                d,
                0.0,
                p,
                g.k_len,
                1,
            );
            for row in p.chunks_mut(g.k_len) {
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    let live = spec.key_mask.as_ref().is_none_or(|m| m[g.k_start + j]);
                    *s = if live { *s * scale } else { f64::NEG_INFINITY };
                    max = max.max(*s);
                }
                if max == f64::NEG_INFINITY {
                    row.iter_mut().for_each(|s| *s = 0.0);
                    continue;
                }
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                row.iter_mut().for_each(|s| *s /= sum);
            }
            gemm(
                g.q_len,
                g.k_len,
                dvh,
                p,
                g.k_len,
                1,
                &v.data[g.k_start * dv + h * dvh..],
                dv,
                1,
                0.0,
                &mut out.data[g.q_start * dv + h * dvh..],
                dv,
                1,
            );
        }
    }
    (out, probs)
}

/// Gradients with respect to q, k and v, given the upstream gradient of the
/// forward output.
pub(crate) fn backward(
    dout: &[f64],
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[f64],
    spec: &AttnSpec,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d, dv) = (q.cols(), v.cols());
    let (dh, dvh) = (d / spec.heads, dv / spec.heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dvv = vec![0.0; v.len()];
    let mut ds = Vec::new();
    let mut off = 0;
    for g in &spec.groups {
        if g.q_len == 0 || g.k_len == 0 {
            continue;
        }
        for h in 0..spec.heads {
            let n = g.q_len * g.k_len;
            let p = &probs[off..off + n];
            off += n;
            let dout_h = &dout[g.q_start * dv + h * dvh..];
            // dV_h += Pᵀ dO_h
            gemm(
                g.k_len,
                g.q_len,
                dvh,
                p,
                1,
                g.k_len,
                dout_h,
                dv,
                1,
                1.0,
                &mut dvv[g.k_start * dv + h * dvh..],
                dv,
                1,
            );
            // dP = dO_h V_hᵀ
            ds.clear();
            ds.resize(n, 0.0);
            gemm(
                g.q_len,
                dvh,
                g.k_len,
                dout_h,
                dv,
                1,
                &v.data[g.k_start * dv + h * dvh..],
                1,
                dv,
                0.0,
                &mut ds,
                g.k_len,
                1,
            );
            for (drow, prow) in ds.chunks_mut(g.k_len).zip(p.chunks(g.k_len)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (dval, pv) in drow.iter_mut().zip(prow) {
                    *dval = pv * (*dval - dot) * scale;
                }
            }
            gemm(
                g.q_len,
                g.k_len,
                dh,
                &ds,
                g.k_len,
                1,
                &k.data[g.k_start * d + h * dh..],
                d,
                1,
                1.0,
                &mut dq[g.q_start * d + h * dh..],
                d,
                1,
            );
            gemm(
                g.k_len,
                g.q_len,
                dh,
                &ds,
                1,
                g.k_len,
                &q.data[g.q_start * d + h * dh..],
                d,
                1,
                1.0,
                &mut dk[g.k_start * d + h * dh..],
                d,
                1,
            );
        }
    }
    (dq, dk, dvv)
}

/// Multi-head scaled dot-product attention without projections:
/// per head `softmax(Q_h K_hᵀ / √d_head) V_h`, heads concatenated.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    n_heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Tensor, NeuralError> {
    let mut spec = AttnSpec::single(q.rows(), k.rows(), n_heads);
    spec.key_mask = key_mask.map(<[bool]>::to_vec);
    check_shapes(q, k, v, &spec)?;
    Ok(forward(q, k, v, &spec).0)
}

/// Attention weights for a single group, `[heads, q_rows, k_rows]`.
pub fn attention_weights(
    q: &Tensor,
    k: &Tensor,
    n_heads: usize,
) -> Result<Vec<f64>, NeuralError> {
    let spec = AttnSpec::single(q.rows(), k.rows(), n_heads);
    let v = Tensor::zeros(vec![k.rows(), n_heads]);
    check_shapes(q, k, &v, &spec)?;
    Ok(forward(q, k, &v, &spec).1)
}
