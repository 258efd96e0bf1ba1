//! Masked cross-entropy with an optional weather-severity penalty.
//!
//! Rows are softmaxed over their allowed classes only. The penalty is the
//! expected severity of the chosen move under the predicted distribution,
//! `λ · Σ_c p_c · Σ_i w_i · severity_i(c)`, which keeps it differentiable.

use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    /// One weight per severity feature.
    pub weather_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.0,
            weather_weights: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(NeuralError::InvalidConfig(format!("lambda={}", self.lambda)));
        }
        if self.weather_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(NeuralError::InvalidConfig("weather weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Collapses `[rows, classes, features]` severities into one scalar per
    /// (row, class) with the configured weights.
    pub fn combine(&self, severity: &[f64], features: usize) -> Result<Vec<f64>, NeuralError> {
        if features != self.weather_weights.len() || !severity.len().is_multiple_of(features.max(1)) {
            return Err(NeuralError::ShapeMismatch(format!(
                "severity has {features} features but {} weights are configured",
                self.weather_weights.len()
            )));
        }
        Ok(severity
            .chunks(features)
            .map(|f| f.iter().zip(&self.weather_weights).map(|(s, w)| s * w).sum())
            .collect())
    }
}

/// Softmax over the allowed entries of `logits`; disallowed entries get 0.
/// A row with nothing allowed is all zeros.
pub fn masked_softmax(logits: &[f64], allowed: &[bool], out: &mut [f64]) {
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, a)| **a)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut sum = 0.0;
    for ((o, l), a) in out.iter_mut().zip(logits).zip(allowed) {
        *o = if *a { (l - max).exp() } else { 0.0 };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Per-row forward results kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct XentCache {
    pub probs: Vec<f64>,
    pub expected_severity: Vec<f64>,
}

/// Mean over rows of `-log p_target + λ Σ_c p_c s_c`, plus the cached
/// probabilities. `severity` is already combined to one value per entry.
pub(crate) fn xent_forward(
    logits: &[f64],
    classes: usize,
    targets: &[usize],
    allowed: &[bool],
    severity: Option<&[f64]>,
    lambda: f64,
) -> Result<(f64, XentCache), NeuralError> {
    let rows = targets.len();
    if logits.len() != rows * classes || allowed.len() != logits.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "logits {} / mask {} for {rows} rows x {classes} classes",
            logits.len(),
            allowed.len()
        )));
    }
    if let Some(s) = severity {
        if s.len() != logits.len() {
            return Err(NeuralError::ShapeMismatch("severity does not match logits".into()));
        }
    }
    let mut probs = vec![0.0; logits.len()];
    let mut expected_severity = vec![0.0; rows];
    let mut total = 0.0;
    for r in 0..rows {
        let span = r * classes..(r + 1) * classes;
        let t = targets[r];
        if t >= classes || !allowed[r * classes + t] {
            return Err(NeuralError::ShapeMismatch(format!(
                "row {r}: target {t} is not an allowed class"
            )));
        }
        masked_softmax(&logits[span.clone()], &allowed[span.clone()], &mut probs[span.clone()]);
        // log-sum-exp form keeps -log p finite for large margins
        let max = logits[span.clone()]
            .iter()
            .zip(&allowed[span.clone()])
            .filter(|(_, a)| **a)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + logits[span.clone()]
                .iter()
                .zip(&allowed[span.clone()])
                .filter(|(_, a)| **a)
                .map(|(l, _)| (l - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - logits[r * classes + t];
        if let Some(s) = severity {
            let e: f64 = probs[span.clone()].iter().zip(&s[span]).map(|(p, s)| p * s).sum();
            expected_severity[r] = e;
            total += lambda * e;
        }
    }
    Ok((
        total / rows.max(1) as f64,
        XentCache {
            probs,
            expected_severity,
        },
    ))
}

pub(crate) fn xent_backward(
    cache: &XentCache,
    classes: usize,
    targets: &[usize],
    allowed: &[bool],
    severity: Option<&[f64]>,
    lambda: f64,
    upstream: f64,
) -> Vec<f64> {
    let rows = targets.len();
    let scale = upstream / rows.max(1) as f64;
    let mut grad = vec![0.0; cache.probs.len()];
    for r in 0..rows {
        for c in 0..classes {
            let i = r * classes + c;
            if !allowed[i] {
                continue;
            }
            let p = cache.probs[i];
            let mut g = p - if c == targets[r] { 1.0 } else { 0.0 };
            if let Some(s) = severity {
                g += lambda * p * (s[i] - cache.expected_severity[r]);
            }
            grad[i] = g * scale;
        }
    }
    grad
}

/// Loss value and gradient with respect to `logits` (`[rows, classes]`).
///
/// `severity` is `[rows, classes, features]`, combined with
/// `cfg.weather_weights`; pass `None` for plain cross-entropy.
pub fn loss(
    logits: &[f64],
    classes: usize,
    targets: &[usize],
    allowed: &[bool],
    severity: Option<(&[f64], usize)>,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), NeuralError> {
    cfg.validate()?;
    let combined = match severity {
        Some((s, features)) => Some(cfg.combine(s, features)?),
        None => None,
    };
    let (value, cache) = xent_forward(logits, classes, targets, allowed, combined.as_deref(), cfg.lambda)?;
    let grad = xent_backward(&cache, classes, targets, allowed, combined.as_deref(), cfg.lambda, 1.0);
    Ok((value, grad))
}
