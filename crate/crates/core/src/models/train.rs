//! Mini-batch training shared by the neural models.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ffnn::Ffnn, greedy::Greedy, knn::Knn, transformer::Transformer, GraphView, ModelConfig, ModelError, ModelKind,
    Sample, TrainedModel,
};
use crate::neural::{
    adamw_step, clip_grad_norm, lr_factor, masked_softmax, AdamState, LossConfig, OptimConfig, ParamStore,
    ScheduleConfig, Tape, Var,
};

/// Logits for a batch plus everything the loss needs to read them.
pub struct BatchLogits {
    pub logits: Var,
    pub classes: usize,
    pub targets: Vec<usize>,
    pub allowed: Vec<bool>,
    /// `[rows, classes, SEVERITY_FEATURES]` when every sample carries weather.
    pub severity: Option<Vec<f64>>,
}

pub trait Learner {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// `dropout` is `Some` only while training.
    fn forward_batch<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &[&Sample],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchLogits, ModelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
    pub warmup_steps: u64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 30,
            optim: OptimConfig::default(),
            warmup_steps: 100,
            loss: LossConfig::default(),
            seed: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.optim.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::InvalidConfig("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Schedule for `samples` training samples. Warmup is capped below the
    /// total step count so very small runs still decay.
    pub fn schedule(&self, samples: usize) -> Result<ScheduleConfig, ModelError> {
        let total = (self.epochs * samples.div_ceil(self.batch_size)) as u64;
        if total < 2 {
            return Err(ModelError::InvalidConfig(format!("only {total} optimizer steps")));
        }
        Ok(ScheduleConfig::new(self.warmup_steps.clamp(1, total - 1), total)?)
    }

    /// Learning rate used for the update at global step `step` (0-based).
    pub fn lr_at(&self, step: u64, sched: &ScheduleConfig) -> f64 {
        self.optim.lr * lr_factor(step, sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub fn curves_to_csv(curves: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for c in curves {
        out.push_str(&format!("{},{},{},{}\n", c.epoch, c.train_loss, c.val_loss, c.val_accuracy));
    }
    out
}

pub fn write_curves(curves: &[CurvePoint], path: &Path) -> Result<(), ModelError> {
    std::fs::File::create(path)?.write_all(curves_to_csv(curves).as_bytes())?;
    Ok(())
}

/// Mean loss and accuracy over `samples`, no dropout, no updates.
pub fn score<L: Learner>(model: &L, samples: &[Sample], batch_size: usize, loss: &LossConfig) -> Result<(f64, f64), ModelError> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let out = model.forward_batch(&mut tape, &batch, None)?;
        let root = batch_loss(&mut tape, &out, loss)?;
        total_loss += tape.value(root).data[0] * chunk.len() as f64;
        let logits = &tape.value(out.logits).data;
        let mut probs = vec![0.0; out.classes];
        for (r, &t) in out.targets.iter().enumerate() {
            let span = r * out.classes..(r + 1) * out.classes;
            masked_softmax(&logits[span.clone()], &out.allowed[span], &mut probs);
            let best = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b })
                .0;
            correct += usize::from(best == t);
        }
    }
    let n = samples.len().max(1) as f64;
    Ok((total_loss / n, correct as f64 / n))
}

fn batch_loss(tape: &mut Tape<'_>, out: &BatchLogits, cfg: &LossConfig) -> Result<Var, ModelError> {
    let severity = if cfg.lambda > 0.0 {
        let raw = out.severity.as_ref().ok_or_else(|| {
            ModelError::InvalidConfig("the weather penalty needs samples with weather frames".into())
        })?;
        Some(cfg.combine(raw, super::SEVERITY_FEATURES)?)
    } else {
        None
    };
    Ok(tape.cross_entropy(out.logits, out.targets.clone(), out.allowed.clone(), severity, cfg.lambda)?)
}

/// Runs the optimisation loop and leaves the parameters of the epoch with
/// the best validation accuracy (ties: lower validation loss) in `model`.
pub fn fit<L: Learner>(
    model: &mut L,
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
) -> Result<Vec<CurvePoint>, ModelError> {
    cfg.validate()?;
    let sched = cfg.schedule(train.len())?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut state = AdamState::new(model.store());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (value, mut grads) = {
                let mut tape = Tape::new();
                let out = model.forward_batch(&mut tape, &batch, Some(&mut dropout_rng))?;
                let root = batch_loss(&mut tape, &out, &cfg.loss)?;
                let value = tape.value(root).data[0];
                if !value.is_finite() {
                    return Err(ModelError::Diverged { epoch, loss: value });
                }
                tape.backward(root)?;
                (value, tape.param_grads(model.store()))
            };
            loss_sum += value * chunk.len() as f64;
            clip_grad_norm(&mut grads, cfg.optim.clip_norm);
            let lr = cfg.lr_at(step, &sched);
            adamw_step(model.store_mut(), &grads, &mut state, lr, &cfg.optim)?;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, val_accuracy) = score(model, val, cfg.batch_size, &cfg.loss)?;
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.4}");
        curves.push(CurvePoint {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        let better = match &best {
            None => true,
            Some((acc, loss, _)) => val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss),
        };
        if better {
            best = Some((val_accuracy, val_loss, model.store().clone()));
        }
    }
    if let Some((_, _, store)) = best {
        *model.store_mut() = store;
    }
    Ok(curves)
}

/// Builds and trains a model of `model_cfg.kind`. Greedy has no parameters;
/// KNN memorises the training samples; the neural models run [`fit`].
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    graph: &GraphView,
    train: &[Sample],
    val: &[Sample],
) -> Result<(TrainedModel, Vec<CurvePoint>), ModelError> {
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::NoSamples("training set"));
    }
    if val.is_empty() {
        return Err(ModelError::NoSamples("validation set"));
    }
    let mut classes: Vec<usize> = train.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ModelError::TooFewClasses(classes.len()));
    }
    for s in train.iter().chain(val) {
        if graph.neighbors[s.current_node].binary_search(&s.label).is_err() {
            return Err(ModelError::LabelNotNeighbor {
                request_id: s.request_id,
                current: s.current_node,
                label: s.label,
            });
        }
    }
    let payload_scale = train.iter().map(|s| s.payload).fold(0.0, f64::max).max(1.0);
    match model_cfg.kind {
        ModelKind::Greedy => Ok((TrainedModel::Greedy(Greedy::new(graph.clone())), Vec::new())),
        ModelKind::Knn => Ok((
            TrainedModel::Knn(Knn::fit(graph.clone(), model_cfg.knn_k, payload_scale, train)),
            Vec::new(),
        )),
        ModelKind::Ffnn => {
            let mut m = Ffnn::new(graph.clone(), model_cfg.ffnn_hidden, payload_scale, model_cfg.seed);
            let curves = fit(&mut m, train_cfg, train, val)?;
            Ok((TrainedModel::Ffnn(m), curves))
        }
        ModelKind::Transformer => {
            let mut m = Transformer::new(graph.clone(), model_cfg, payload_scale)?;
            let curves = fit(&mut m, train_cfg, train, val)?;
            Ok((TrainedModel::Transformer(m), curves))
        }
    }
}
