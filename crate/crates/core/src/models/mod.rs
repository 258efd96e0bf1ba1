//! Next-node predictors trained on planner traces: feature encoding,
//! baselines, the weather-attention transformer, training, evaluation and
//! route rollout.

pub mod checkpoint;
pub mod ffnn;
pub mod greedy;
pub mod knn;
pub mod train;
pub mod transformer;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fleetsim::RouteRecord;
use crate::flightcost::DroneSpec;
use crate::neural::{AttentionConfig, NeuralError};
use crate::planner::{Route, SegmentCost, WeatherCost};
use crate::skynet::Network;
use crate::weathersim::{WeatherSample, WeatherSeries, MAX_VISIBILITY_KM, MAX_WIND_SPEED};

pub use ffnn::Ffnn;
pub use greedy::Greedy;
pub use knn::Knn;
pub use train::{train, CurvePoint, TrainConfig};
pub use transformer::Transformer;

/// Features per weather sample: wind speed, wind bearing (sin, cos),
/// temperature, visibility, cloud cover.
pub const WEATHER_FEATURES: usize = 6;
/// Features per candidate move used by the weather penalty.
pub const SEVERITY_FEATURES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("request {request_id} references node {node} outside the network")]
    UnknownNode { request_id: u64, node: usize },
    #[error("request {request_id} has no dispatch time or payload to rebuild weather features")]
    MissingProvenance { request_id: u64 },
    #[error("weather lookup failed: {0}")]
    Weather(String),
    #[error("training needs at least 2 label classes, found {0}")]
    TooFewClasses(usize),
    #[error("no samples in {0}")]
    NoSamples(&'static str),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("request {request_id}: label {label} is not a neighbour of node {current}")]
    LabelNotNeighbor { request_id: u64, current: usize, label: usize },
    #[error("model expects {expected} weather features, sample has {found}")]
    WeatherMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The network as a model sees it: coordinates scaled into the unit square
/// (one scale for both axes) and sorted adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub coords: Vec<[f64; 2]>,
    pub neighbors: Vec<Vec<usize>>,
    /// Edge lengths aligned with `neighbors`, in scaled units.
    pub edge_lengths: Vec<Vec<f64>>,
    /// Metres per scaled unit.
    pub scale: f64,
}

impl GraphView {
    pub fn from_network(net: &Network) -> Self {
        let (x0, y0, x1, y1) = net.extent();
        let scale = (x1 - x0).max(y1 - y0).max(1.0);
        GraphView {
            coords: net
                .nodes()
                .iter()
                .map(|n| [(n.x - x0) / scale, (n.y - y0) / scale])
                .collect(),
            neighbors: (0..net.len())
                .map(|u| net.neighbors(u).iter().map(|l| l.to).collect())
                .collect(),
            edge_lengths: (0..net.len())
                .map(|u| net.neighbors(u).iter().map(|l| l.distance / scale).collect())
                .collect(),
            scale,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.coords[a], self.coords[b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Normalised weather features of one node.
pub fn weather_features(s: &WeatherSample) -> [f64; WEATHER_FEATURES] {
    let b = s.wind_bearing.to_radians();
    [
        s.wind_speed / MAX_WIND_SPEED,
        b.sin(),
        b.cos(),
        (s.temperature - 15.0) / 20.0,
        s.visibility / MAX_VISIBILITY_KM,
        s.cloud_cover / 100.0,
    ]
}

/// Severity of flying out of a node, each component in [0, 1]: wind,
/// lost visibility, cloud, temperature away from 15 °C.
pub fn severity_features(f: &[f64; WEATHER_FEATURES]) -> [f64; SEVERITY_FEATURES] {
    [f[0], 1.0 - f[4], f[5], f[3].abs().min(1.0)]
}

/// One weather time step for every node, row-major `[nodes, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherFrame {
    pub step: usize,
    pub width: usize,
    pub features: Vec<f64>,
}

impl WeatherFrame {
    pub fn from_samples(step: usize, frame: &[WeatherSample]) -> Self {
        WeatherFrame {
            step,
            width: WEATHER_FEATURES,
            features: frame.iter().flat_map(weather_features).collect(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.features.len() / self.width.max(1)
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.features[node * self.width..(node + 1) * self.width]
    }

    /// Severity of leaving `node`; zeros when the frame is not in the
    /// standard feature layout.
    pub fn severity(&self, node: usize) -> [f64; SEVERITY_FEATURES] {
        match <&[f64; WEATHER_FEATURES]>::try_from(self.row(node)) {
            Ok(f) if self.width == WEATHER_FEATURES => severity_features(f),
            _ => [0.0; SEVERITY_FEATURES],
        }
    }
}

/// One routing decision: at `current_node`, heading for `end_node`, the
/// planner chose `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub request_id: u64,
    pub start_node: usize,
    pub end_node: usize,
    pub current_node: usize,
    pub payload: f64,
    /// Length of the planned route in metres. Not known during rollout, so
    /// no model reads it.
    pub total_distance: f64,
    pub label: usize,
    /// Current node first, then each neighbour in adjacency order. Empty for
    /// weather-blind encodings.
    pub weather_features: Vec<[f64; WEATHER_FEATURES]>,
    pub frame: Option<Arc<WeatherFrame>>,
}

/// Caches one shared frame per weather step.
#[derive(Debug, Default)]
pub struct FrameCache {
    frames: HashMap<usize, Arc<WeatherFrame>>,
}

impl FrameCache {
    pub fn at(&mut self, wx: &WeatherSeries, t: f64) -> Result<Arc<WeatherFrame>, ModelError> {
        let t = crate::fleetsim::weather_time(wx, t);
        let step = wx.step_at(t).map_err(|e| ModelError::Weather(e.to_string()))?;
        Ok(self
            .frames
            .entry(step)
            .or_insert_with(|| Arc::new(WeatherFrame::from_samples(step, wx.frame(step))))
            .clone())
    }
}

fn neighbour_weather(graph: &GraphView, frame: &WeatherFrame, current: usize) -> Vec<[f64; WEATHER_FEATURES]> {
    std::iter::once(current)
        .chain(graph.neighbors[current].iter().copied())
        .map(|u| frame.row(u).try_into().expect("standard frame width"))
        .collect()
}

/// Turns route records into one sample per flown segment.
pub fn encode_dataset(
    records: &[RouteRecord],
    net: &Network,
    wx: &WeatherSeries,
    weather_aware: bool,
) -> Result<Vec<Sample>, ModelError> {
    let graph = GraphView::from_network(net);
    let mut frames = FrameCache::default();
    let mut out = Vec::new();
    for r in records {
        let (Some(start), Some(end)) = (r.origin(), r.destination()) else {
            continue;
        };
        for s in &r.route_segments {
            for node in [s.from_node, s.to_node] {
                if node >= net.len() {
                    return Err(ModelError::UnknownNode {
                        request_id: r.request_id,
                        node,
                    });
                }
            }
        }
        let frame = if weather_aware {
            let t = r.dispatch_time.ok_or(ModelError::MissingProvenance {
                request_id: r.request_id,
            })?;
            Some(frames.at(wx, t)?)
        } else {
            None
        };
        let total_distance = r.total_distance();
        for s in &r.route_segments {
            let weather_features = match &frame {
                Some(f) => {
                    let mut w = neighbour_weather(&graph, f, s.from_node);
                    // the record's own values for the departure node
                    let b = s.wind_direction.to_radians();
                    w[0][0] = s.wind_speed / MAX_WIND_SPEED;
                    w[0][1] = b.sin();
                    w[0][2] = b.cos();
                    w[0][3] = (s.temperature - 15.0) / 20.0;
                    w
                }
                None => Vec::new(),
            };
            out.push(Sample {
                request_id: r.request_id,
                start_node: start,
                end_node: end,
                current_node: s.from_node,
                payload: r.payload_kg.unwrap_or(0.0),
                total_distance,
                label: s.to_node,
                weather_features,
                frame: frame.clone(),
            });
        }
    }
    Ok(out)
}

/// Fractions of requests assigned to train, validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataSplit {
    pub train: Vec<RouteRecord>,
    pub val: Vec<RouteRecord>,
    pub test: Vec<RouteRecord>,
}

/// Splits whole records, so every segment of a route lands in the same
/// partition. Records keep their input order within each partition.
pub fn split_records(records: &[RouteRecord], cfg: &SplitConfig) -> Result<DataSplit, ModelError> {
    let parts = [cfg.train, cfg.val, cfg.test];
    if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(ModelError::InvalidConfig(format!("split fractions {parts:?}")));
    }
    let mut ids: Vec<u64> = records.iter().map(|r| r.request_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n = ids.len() as f64;
    let n_train = (cfg.train * n).round() as usize;
    let n_val = ((cfg.train + cfg.val) * n).round() as usize - n_train;
    let which: HashMap<u64, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, if i < n_train { 0 } else if i < n_train + n_val { 1 } else { 2 }))
        .collect();
    let mut split = DataSplit::default();
    for r in records {
        match which[&r.request_id] {
            0 => split.train.push(r.clone()),
            1 => split.val.push(r.clone()),
            _ => split.test.push(r.clone()),
        }
    }
    Ok(split)
}

/// Anything that scores the next move. The result lists every neighbour of
/// `sample.current_node` in adjacency order with its probability.
pub trait NextNodePredictor {
    fn predict_next(&self, sample: &Sample) -> Vec<(usize, f64)>;
}

pub fn argmax(probs: &[(usize, f64)]) -> Option<usize> {
    probs
        .iter()
        .fold(None, |best: Option<(usize, f64)>, &(n, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((n, p)),
        })
        .map(|(n, _)| n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Greedy,
    Knn,
    Ffnn,
    Transformer,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(ModelKind::Greedy),
            "knn" => Ok(ModelKind::Knn),
            "ffnn" => Ok(ModelKind::Ffnn),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Greedy => "greedy",
            ModelKind::Knn => "knn",
            ModelKind::Ffnn => "ffnn",
            ModelKind::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub ffnn_hidden: (usize, usize),
    pub attention: AttentionConfig,
    pub n_layers: usize,
    pub ff_dim: usize,
    /// Weather features per node; 0 builds a weather-blind transformer.
    pub weather_features: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Transformer,
            ffnn_hidden: (128, 64),
            attention: AttentionConfig::default(),
            n_layers: 2,
            ff_dim: 256,
            weather_features: WEATHER_FEATURES,
            knn_k: 5,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn of_kind(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.attention.validate()?;
        if self.ffnn_hidden.0 == 0 || self.ffnn_hidden.1 == 0 || self.n_layers == 0 || self.ff_dim == 0 || self.knn_k == 0 {
            return Err(ModelError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn weather_aware(&self) -> bool {
        self.kind == ModelKind::Transformer && self.weather_features > 0
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Greedy(Greedy),
    Knn(Knn),
    Ffnn(Ffnn),
    Transformer(Transformer),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Greedy(_) => ModelKind::Greedy,
            TrainedModel::Knn(_) => ModelKind::Knn,
            TrainedModel::Ffnn(_) => ModelKind::Ffnn,
            TrainedModel::Transformer(_) => ModelKind::Transformer,
        }
    }

    pub fn graph(&self) -> &GraphView {
        match self {
            TrainedModel::Greedy(m) => &m.graph,
            TrainedModel::Knn(m) => &m.graph,
            TrainedModel::Ffnn(m) => &m.graph,
            TrainedModel::Transformer(m) => &m.graph,
        }
    }

    /// Whether samples for this model need weather features.
    pub fn weather_aware(&self) -> bool {
        matches!(self, TrainedModel::Transformer(t) if t.cfg.weather_features > 0)
    }
}

impl NextNodePredictor for TrainedModel {
    fn predict_next(&self, sample: &Sample) -> Vec<(usize, f64)> {
        match self {
            TrainedModel::Greedy(m) => m.predict_next(sample),
            TrainedModel::Knn(m) => m.predict_next(sample),
            TrainedModel::Ffnn(m) => m.predict_next(sample),
            TrainedModel::Transformer(m) => m.predict_next(sample),
        }
    }
}

/// Result of following a predictor from origin toward destination.
#[derive(Debug, Clone, PartialEq)]
pub enum Rollout {
    Reached(Route),
    Failure { reason: String, visited: Vec<usize> },
}

impl Rollout {
    pub fn route(&self) -> Option<&Route> {
        match self {
            Rollout::Reached(r) => Some(r),
            Rollout::Failure { .. } => None,
        }
    }
}

/// Everything a rollout needs besides the predictor.
#[derive(Debug, Clone, Copy)]
pub struct Episode {
    pub origin: usize,
    pub dest: usize,
    pub payload_kg: f64,
    pub t0: f64,
    pub max_steps: usize,
}

/// Applies argmax predictions with visited nodes masked out until the
/// destination is reached, a dead end is hit, or `max_steps` runs out. The
/// realised path is priced against the weather frame in force at `t0`, the
/// same frame the planner used for its label.
pub fn rollout(
    model: &dyn NextNodePredictor,
    net: &Network,
    wx: &WeatherSeries,
    drone: &DroneSpec,
    weather_aware: bool,
    ep: &Episode,
) -> Result<Rollout, ModelError> {
    let started = Instant::now();
    for node in [ep.origin, ep.dest] {
        if node >= net.len() {
            return Err(ModelError::UnknownNode { request_id: 0, node });
        }
    }
    let graph = GraphView::from_network(net);
    let t = crate::fleetsim::weather_time(wx, ep.t0);
    let frame = if weather_aware {
        Some(FrameCache::default().at(wx, t)?)
    } else {
        None
    };
    let mut visited = vec![ep.origin];
    let mut current = ep.origin;
    while current != ep.dest {
        if visited.len() > ep.max_steps {
            return Ok(Rollout::Failure {
                reason: format!("no arrival within {} steps", ep.max_steps),
                visited,
            });
        }
        let sample = Sample {
            request_id: 0,
            start_node: ep.origin,
            end_node: ep.dest,
            current_node: current,
            payload: ep.payload_kg,
            total_distance: 0.0,
            label: current,
            weather_features: frame
                .as_ref()
                .map(|f| neighbour_weather(&graph, f, current))
                .unwrap_or_default(),
            frame: frame.clone(),
        };
        let probs: Vec<(usize, f64)> = model
            .predict_next(&sample)
            .into_iter()
            .filter(|(n, _)| !visited.contains(n))
            .collect();
        let Some(next) = argmax(&probs) else {
            return Ok(Rollout::Failure {
                reason: format!("dead end at node {current}"),
                visited,
            });
        };
        visited.push(next);
        current = next;
    }

    let wc = WeatherCost::at_time(net, wx, drone, ep.payload_kg, t).map_err(|e| ModelError::Weather(e.to_string()))?;
    let mut segment_costs = Vec::new();
    for w in visited.windows(2) {
        let d = net.edge_between(w[0], w[1]).expect("rollout follows edges");
        let c = wc.cost(w[0], w[1], d.distance);
        if let Some(err) = c.infeasible {
            return Ok(Rollout::Failure {
                reason: format!("edge {}-{} infeasible: {err}", w[0], w[1]),
                visited,
            });
        }
        segment_costs.push(SegmentCost {
            duration: c.duration,
            energy: c.energy,
        });
    }
    Ok(Rollout::Reached(Route {
        total_duration: segment_costs.iter().map(|s| s.duration).sum(),
        total_energy: segment_costs.iter().map(|s| s.energy).sum(),
        expanded_nodes: visited.len() - 1,
        node_sequence: visited,
        segment_costs,
        plan_time_ns: started.elapsed().as_nanos() as u64,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p95_ns: f64,
}

impl LatencyStats {
    pub fn from_samples(ns: &mut [f64]) -> Self {
        if ns.is_empty() {
            return LatencyStats::default();
        }
        ns.sort_by(f64::total_cmp);
        let pct = |q: f64| ns[((q * (ns.len() - 1) as f64).round() as usize).min(ns.len() - 1)];
        LatencyStats {
            mean_ns: ns.iter().sum::<f64>() / ns.len() as f64,
            p50_ns: pct(0.5),
            p95_ns: pct(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub label: usize,
    pub predicted: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Most frequent mistakes, largest first.
    pub top_confusions: Vec<Confusion>,
    pub latency: LatencyStats,
}

/// Exact-match accuracy and macro-averaged precision, recall and F1 over
/// every class that occurs as a label or a prediction.
pub fn evaluate(model: &dyn NextNodePredictor, samples: &[Sample]) -> EvalReport {
    let mut latencies = Vec::with_capacity(samples.len());
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let t = Instant::now();
        let probs = model.predict_next(s);
        latencies.push(t.elapsed().as_nanos() as f64);
        pairs.push((s.label, argmax(&probs).unwrap_or(usize::MAX)));
    }
    let mut report = metrics(&pairs);
    report.latency = LatencyStats::from_samples(&mut latencies);
    report
}

/// Classification metrics from (label, prediction) pairs.
pub fn metrics(pairs: &[(usize, usize)]) -> EvalReport {
    // per class: (true positives, predicted count, label count)
    let mut per: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    let mut wrong: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut correct = 0;
    for &(y, p) in pairs {
        per.entry(y).or_default().2 += 1;
        per.entry(p).or_default().1 += 1;
        if y == p {
            correct += 1;
            per.entry(y).or_default().0 += 1;
        } else {
            *wrong.entry((y, p)).or_default() += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let k = per.len().max(1) as f64;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for &(tp, pred, lab) in per.values() {
        let (p, r) = (ratio(tp, pred), ratio(tp, lab));
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let mut top: Vec<Confusion> = wrong
        .into_iter()
        .map(|((label, predicted), count)| Confusion { label, predicted, count })
        .collect();
    top.sort_by_key(|c| std::cmp::Reverse(c.count));
    top.truncate(10);
    EvalReport {
        samples: pairs.len(),
        accuracy: ratio(correct, pairs.len()),
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
        top_confusions: top,
        latency: LatencyStats::default(),
    }
}

/// Normalised probabilities over `graph.neighbors[current]` from per-neighbour
/// scores (softmax). A single neighbour always gets probability 1.
pub(crate) fn softmax_over(neighbors: &[usize], scores: &[f64]) -> Vec<(usize, f64)> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    neighbors.iter().zip(exps).map(|(&n, e)| (n, e / sum)).collect()
}
