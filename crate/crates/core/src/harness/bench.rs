//! Same-machine latency comparisons between learned predictors and A*.
//!
//! Nothing here asserts absolute times; reports carry distributions and
//! ratios, and callers check orderings.

use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::fleetsim::weather_time;
use crate::flightcost::DroneSpec;
use crate::models::{
    checkpoint, rollout, Episode, Ffnn, FrameCache, GraphView, LatencyStats, ModelConfig, ModelKind,
    NextNodePredictor, Sample, TrainedModel, Transformer, WeatherFrame,
};
use crate::planner::plan_request;
use crate::skynet::{generate_network, NetConfig, Network};
use crate::weathersim::WeatherSeries;

/// Printed into every report.
pub const COMPARISON_NOTE: &str = "A* returns a whole path while a model call returns one decision; \
speedup_per_decision divides A* path time by one model call, speedup_per_rollout divides it by a \
complete model rollout to the destination.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            warmup: 10,
            repetitions: 30,
        }
    }
}

impl TimingConfig {
    pub const MIN_WARMUP: usize = 10;
    pub const MIN_REPETITIONS: usize = 30;

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.warmup < Self::MIN_WARMUP || self.repetitions < Self::MIN_REPETITIONS {
            return Err(HarnessError::InvalidConfig(format!(
                "timing needs >= {} warm-up calls and >= {} repetitions, got {} and {}",
                Self::MIN_WARMUP,
                Self::MIN_REPETITIONS,
                self.warmup,
                self.repetitions
            )));
        }
        Ok(())
    }

    /// Runs `f` `warmup` times untimed, then `repetitions` times timed, and
    /// appends the timings in nanoseconds (never below 1).
    fn measure(&self, out: &mut Vec<f64>, mut f: impl FnMut()) {
        for _ in 0..self.warmup {
            f();
        }
        for _ in 0..self.repetitions {
            let t = Instant::now();
            f();
            out.push(t.elapsed().as_nanos().max(1) as f64);
        }
    }
}

/// The planner side of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct PlannerSetup<'a> {
    pub net: &'a Network,
    pub wx: &'a WeatherSeries,
    pub drone: &'a DroneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: ModelKind,
    pub nodes: usize,
    /// Weather features per node the model reads (0 if weather-blind).
    pub weather_features: usize,
    pub model_bytes: u64,
    pub instances: usize,
    pub warmup: usize,
    pub repetitions: usize,
    pub decision: LatencyStats,
    pub rollout: LatencyStats,
    pub astar: LatencyStats,
    /// Median A* path time over median model decision time.
    pub speedup_per_decision: f64,
    /// Median A* path time over median full rollout time.
    pub speedup_per_rollout: f64,
    pub note: String,
}

fn decision_sample(model: &TrainedModel, setup: &PlannerSetup, ep: &Episode, frames: &mut FrameCache) -> Result<Sample, HarnessError> {
    let frame = if model.weather_aware() {
        Some(frames.at(setup.wx, ep.t0).map_err(|e| HarnessError::Bench(e.to_string()))?)
    } else {
        None
    };
    Ok(Sample {
        request_id: 0,
        start_node: ep.origin,
        end_node: ep.dest,
        current_node: ep.origin,
        payload: ep.payload_kg,
        total_distance: 0.0,
        label: ep.origin,
        weather_features: Vec::new(),
        frame,
    })
}

/// Times single decisions, full rollouts and A* plans on the same episodes.
///
/// Each episode is measured in turn (warm-up, then repetitions), so a model
/// that caches per weather frame is timed in its steady state.
pub fn bench_inference(
    model: &TrainedModel,
    setup: &PlannerSetup,
    episodes: &[Episode],
    timing: &TimingConfig,
) -> Result<BenchReport, HarnessError> {
    timing.validate()?;
    if episodes.is_empty() {
        return Err(HarnessError::Bench("no bench instances".into()));
    }
    if model.graph().len() != setup.net.len() {
        return Err(HarnessError::Bench(format!(
            "model has {} nodes, network has {}",
            model.graph().len(),
            setup.net.len()
        )));
    }
    let weather_aware = model.weather_aware();
    let mut frames = FrameCache::default();
    let (mut decision, mut rollouts, mut astar) = (Vec::new(), Vec::new(), Vec::new());
    for ep in episodes {
        let sample = decision_sample(model, setup, ep, &mut frames)?;
        timing.measure(&mut decision, || {
            black_box(model.predict_next(black_box(&sample)));
        });
        let mut failure = None;
        timing.measure(&mut rollouts, || {
            if let Err(e) = rollout(model, setup.net, setup.wx, setup.drone, weather_aware, ep) {
                failure = Some(e.to_string());
            }
        });
        let t = weather_time(setup.wx, ep.t0);
        timing.measure(&mut astar, || {
            if let Err(e) = plan_request(setup.net, setup.wx, setup.drone, ep.payload_kg, ep.origin, ep.dest, t) {
                failure = Some(e.to_string());
            }
        });
        if let Some(e) = failure {
            return Err(HarnessError::Bench(e));
        }
    }
    let decision = LatencyStats::from_samples(&mut decision);
    let rollout = LatencyStats::from_samples(&mut rollouts);
    let astar = LatencyStats::from_samples(&mut astar);
    Ok(BenchReport {
        model: model.kind(),
        nodes: setup.net.len(),
        weather_features: match model {
            TrainedModel::Transformer(t) => t.cfg.weather_features,
            _ => 0,
        },
        model_bytes: checkpoint::to_bytes(model).len() as u64,
        instances: episodes.len(),
        warmup: timing.warmup,
        repetitions: timing.repetitions,
        speedup_per_decision: astar.p50_ns / decision.p50_ns,
        speedup_per_rollout: astar.p50_ns / rollout.p50_ns,
        decision,
        rollout,
        astar,
        note: COMPARISON_NOTE.into(),
    })
}

/// Something whose per-call latency can be measured at a network size `n`
/// and weather width `w`.
pub trait LatencySubject {
    fn label(&self) -> String;
    /// Builds an instance and returns the operation to time.
    fn instance(&self, n: usize, w: usize) -> Result<Box<dyn FnMut()>, HarnessError>;
}

/// An untrained model of a given architecture on a generated network.
/// Latency does not depend on the weights.
#[derive(Debug, Clone)]
pub struct ModelFamily {
    pub config: ModelConfig,
    pub seed: u64,
}

impl ModelFamily {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        ModelFamily {
            config: ModelConfig::of_kind(kind),
            seed,
        }
    }
}

/// A connected network of `n` nodes at the desk-scale node density.
pub fn scaled_network(n: usize, seed: u64) -> Result<Network, HarnessError> {
    let base = NetConfig::default();
    let side = base.bbox.0 * (n as f64 / base.node_count as f64).sqrt();
    generate_network(&NetConfig {
        node_count: n,
        bbox: (side, side),
        extra_edges: n / 2,
        seed,
        ..base
    })
    .map_err(|e| HarnessError::Bench(e.to_string()))
}

/// Picks an origin and a distant destination so decisions are not trivial.
fn far_pair(graph: &GraphView) -> (usize, usize) {
    let dest = (1..graph.len())
        .max_by(|&a, &b| graph.distance(0, a).total_cmp(&graph.distance(0, b)))
        .unwrap_or(0);
    (0, dest)
}

impl LatencySubject for ModelFamily {
    fn label(&self) -> String {
        self.config.kind.to_string()
    }

    /// FFNN: one prediction. Transformer: one prediction with the weather
    /// memory rebuilt, the full per-decision cost in `n` and `w`.
    fn instance(&self, n: usize, w: usize) -> Result<Box<dyn FnMut()>, HarnessError> {
        let net = scaled_network(n, self.seed)?;
        let graph = GraphView::from_network(&net);
        let (origin, dest) = far_pair(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((w as u64) << 32));
        let frame = WeatherFrame {
            step: 0,
            width: w,
            features: (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let sample = Sample {
            request_id: 0,
            start_node: origin,
            end_node: dest,
            current_node: origin,
            payload: 2.0,
            total_distance: 0.0,
            label: origin,
            weather_features: Vec::new(),
            frame: Some(Arc::new(frame)),
        };
        let err = |e: crate::models::ModelError| HarnessError::Bench(e.to_string());
        match self.config.kind {
            ModelKind::Transformer => {
                let cfg = ModelConfig {
                    weather_features: w,
                    seed: self.seed,
                    ..self.config.clone()
                };
                let m = Transformer::new(graph, &cfg, 5.0).map_err(err)?;
                m.scores_uncached(&sample).map_err(err)?;
                Ok(Box::new(move || {
                    black_box(m.scores_uncached(black_box(&sample)).expect("checked above"));
                }))
            }
            ModelKind::Ffnn => {
                let m = Ffnn::new(graph, self.config.ffnn_hidden, 5.0, self.seed);
                Ok(Box::new(move || {
                    black_box(m.predict_next(black_box(&sample)));
                }))
            }
            other => Err(HarnessError::Bench(format!("no scaling instance for {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub w: usize,
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub subject: String,
    /// Varying `n` at `w = w_values[0]`.
    pub n_axis: Vec<ScalingPoint>,
    /// Varying `w` at `n = n_values[0]`.
    pub w_axis: Vec<ScalingPoint>,
    /// Least-squares slope of log median latency against log n.
    pub slope_n: f64,
    pub slope_w: f64,
}

fn strictly_increasing(points: &[ScalingPoint]) -> bool {
    points.windows(2).all(|p| p[1].latency.p50_ns > p[0].latency.p50_ns)
}

impl ScalingTable {
    pub fn monotone_in_n(&self) -> bool {
        strictly_increasing(&self.n_axis)
    }

    pub fn monotone_in_w(&self) -> bool {
        strictly_increasing(&self.w_axis)
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Measures `subject` along each axis and fits log-log slopes.
pub fn bench_scaling(
    subject: &dyn LatencySubject,
    n_values: &[usize],
    w_values: &[usize],
    timing: &TimingConfig,
) -> Result<ScalingTable, HarnessError> {
    timing.validate()?;
    for (axis, values) in [("n", n_values), ("w", w_values)] {
        let mut distinct = values.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 || distinct[0] == 0 {
            return Err(HarnessError::InvalidConfig(format!(
                "scaling needs >= 3 distinct positive {axis} values, got {values:?}"
            )));
        }
    }
    // All instances are built and warmed first, then timed round-robin, so
    // drift over the run (allocator state, clock changes) hits every point
    // alike instead of biasing whichever was measured first.
    let configs: Vec<(usize, usize)> = n_values
        .iter()
        .map(|&n| (n, w_values[0]))
        .chain(w_values.iter().map(|&w| (n_values[0], w)))
        .collect();
    let mut ops = configs
        .iter()
        .map(|&(n, w)| subject.instance(n, w))
        .collect::<Result<Vec<_>, _>>()?;
    for op in &mut ops {
        for _ in 0..timing.warmup {
            op();
        }
    }
    let mut samples = vec![Vec::with_capacity(timing.repetitions); ops.len()];
    for _ in 0..timing.repetitions {
        for (op, ns) in ops.iter_mut().zip(&mut samples) {
            let t = Instant::now();
            op();
            ns.push(t.elapsed().as_nanos().max(1) as f64);
        }
    }
    let mut points = configs.iter().zip(&mut samples).map(|(&(n, w), ns)| ScalingPoint {
        n,
        w,
        latency: LatencyStats::from_samples(ns),
    });
    let n_axis: Vec<ScalingPoint> = points.by_ref().take(n_values.len()).collect();
    let w_axis: Vec<ScalingPoint> = points.collect();
    let slope = |pts: &[ScalingPoint], x: fn(&ScalingPoint) -> usize| {
        log_log_slope(&pts.iter().map(|p| (x(p) as f64, p.latency.p50_ns)).collect::<Vec<_>>())
    };
    Ok(ScalingTable {
        subject: subject.label(),
        slope_n: slope(&n_axis, |p| p.n),
        slope_w: slope(&w_axis, |p| p.w),
        n_axis,
        w_axis,
    })
}
