//! AdamW, global-norm gradient clipping and the warmup-cosine schedule.

use serde::{Deserialize, Serialize};

use super::{NeuralError, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let positive = [self.lr, self.beta1, self.beta2, self.eps, self.clip_norm]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.weight_decay < 0.0 || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(NeuralError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl ScheduleConfig {
    pub fn new(warmup_steps: u64, total_steps: u64) -> Result<Self, NeuralError> {
        if warmup_steps == 0 || warmup_steps >= total_steps {
            return Err(NeuralError::InvalidConfig(format!(
                "need 0 < warmup ({warmup_steps}) < total ({total_steps})"
            )));
        }
        Ok(ScheduleConfig {
            warmup_steps,
            total_steps,
        })
    }
}

/// Linear warmup to 1, then half-cosine decay to 0 at `total_steps`.
pub fn lr_factor(step: u64, sched: &ScheduleConfig) -> f64 {
    let (w, t) = (sched.warmup_steps, sched.total_steps);
    if step < w {
        return step as f64 / w as f64;
    }
    let progress = (step.min(t) - w) as f64 / (t - w) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1.0 when already inside the bound).
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm {
        return 1.0;
    }
    // g * max / norm rounds once, so (3, 4) clips to exactly (0.6, 0.8)
    grads.iter_mut().flatten().for_each(|g| *g = *g * max_norm / norm);
    max_norm / norm
}

/// One decoupled-weight-decay Adam step at learning rate `lr`.
///
/// Weight decay is applied to the pre-step value, then the Adam update.
/// Nothing is modified if any gradient is non-finite.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<(), NeuralError> {
    if grads.len() != store.len() || grads.iter().zip(store.tensors()).any(|(g, t)| g.len() != t.len()) {
        return Err(NeuralError::ShapeMismatch("gradients do not match parameters".into()));
    }
    if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(NeuralError::NonFiniteGradient {
            name: store.names()[i].clone(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, p) in store.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data.iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w *= 1.0 - lr * cfg.weight_decay;
            *w -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;
    use proptest::prelude::*;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![1], vec![w]));
        s
    }

    #[test]
    fn decay_only_when_gradient_is_zero() {
        let mut s = single(1.0);
        let mut st = AdamState::new(&s);
        let cfg = OptimConfig::default();
        adamw_step(&mut s, &[vec![0.0]], &mut st, cfg.lr, &cfg).unwrap();
        assert_eq!(s.tensors()[0].data[0], 1.0 * (1.0 - cfg.lr * cfg.weight_decay));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(0.0);
        let mut st = AdamState::new(&s);
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        adamw_step(&mut s, &[vec![1.0]], &mut st, cfg.lr, &cfg).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
        let expect = -cfg.lr / (1.0 + cfg.eps);
        assert!((s.tensors()[0].data[0] - expect).abs() < 1e-15);
        assert!((s.tensors()[0].data[0] + 0.0005).abs() < 1e-8);
    }

    #[test]
    fn identical_parameters_update_identically() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(vec![2], vec![0.3, 0.3]));
        s.add("b", Tensor::new(vec![1], vec![0.3]));
        let mut st = AdamState::new(&s);
        let cfg = OptimConfig::default();
        for k in 0..5 {
            let g = 0.1 * k as f64 - 0.2;
            adamw_step(&mut s, &[vec![g, g], vec![g]], &mut st, cfg.lr, &cfg).unwrap();
        }
        let t = s.tensors();
        assert_eq!(t[0].data[0], t[0].data[1]);
        assert_eq!(t[0].data[0], t[1].data[0]);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut s = single(0.5);
        let mut st = AdamState::new(&s);
        let cfg = OptimConfig::default();
        let err = adamw_step(&mut s, &[vec![f64::NAN]], &mut st, cfg.lr, &cfg).unwrap_err();
        assert_eq!(err, NeuralError::NonFiniteGradient { name: "w".into() });
        assert_eq!(s.tensors()[0].data[0], 0.5);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clip_three_four_five() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let scale = clip_grad_norm(&mut g, 1.0);
        assert!((scale - 0.2).abs() < 1e-15);
        assert_eq!(g, vec![vec![0.6], vec![0.8]]);

        let mut small = vec![vec![0.1, 0.2]];
        assert_eq!(clip_grad_norm(&mut small, 1.0), 1.0);
        assert_eq!(small, vec![vec![0.1, 0.2]]);
    }

    #[test]
    fn schedule_reference_points() {
        let s = ScheduleConfig::new(100, 1100).unwrap();
        assert_eq!(lr_factor(0, &s), 0.0);
        assert_eq!(lr_factor(50, &s), 0.5);
        assert_eq!(lr_factor(100, &s), 1.0);
        assert!((lr_factor(600, &s) - 0.5).abs() < 1e-15);
        assert!(lr_factor(1100, &s).abs() < 1e-15);
        assert!(ScheduleConfig::new(0, 10).is_err());
        assert!(ScheduleConfig::new(10, 10).is_err());
    }

    #[test]
    fn schedule_matches_closed_form_everywhere() {
        let s = ScheduleConfig::new(100, 2000).unwrap();
        for step in 0..=2000u64 {
            let expect = if step < 100 {
                step as f64 / 100.0
            } else {
                let x = (step - 100) as f64 / 1900.0;
                (1.0 + (x * std::f64::consts::PI).cos()) / 2.0
            };
            assert!((lr_factor(step, &s) - expect).abs() < 1e-12, "step {step}");
        }
    }

    proptest! {
        #[test]
        fn clipped_norm_within_bound(
            grads in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 1..20), 1..6),
            max_norm in 0.01f64..10.0,
        ) {
            let mut g = grads.clone();
            let scale = clip_grad_norm(&mut g, max_norm);
            let norm = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= max_norm + 1e-9);
            prop_assert!(scale > 0.0 && scale <= 1.0);
            for (a, b) in g.iter().flatten().zip(grads.iter().flatten()) {
                prop_assert!((a - b * scale).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
