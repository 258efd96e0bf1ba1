//! Delivery workload simulation and the route dataset it emits.
//!
//! A fleet of drones serves time-ordered requests. Each delivery is planned
//! with A* against the weather frame at departure, flown segment by segment
//! with battery debits, and written out as one [`RouteRecord`] per success.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flightcost::DroneSpec;
use crate::planner::{plan_request, PlanError, Route};
use crate::skynet::Network;
use crate::weathersim::WeatherSeries;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid request parameters: {0}")]
    InvalidRequests(String),
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    pub origin: usize,
    pub destination: usize,
    pub payload_kg: f64,
    pub request_time: f64,
}

/// One flown edge, with field names as they appear on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment {
    pub from_node: usize,
    pub to_node: usize,
    pub wind_speed: f64,
    pub wind_direction: f64,
    pub temperature: f64,
    pub distance: f64,
    pub flight_duration: f64,
    pub battery_consumed: f64,
}

/// One successful delivery. `request_id` and `route_segments` form the core
/// schema; the remaining fields are optional provenance needed to rebuild
/// features and re-plan the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub request_id: u64,
    pub route_segments: Vec<RouteSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_kg: Option<f64>,
    /// Departure time from the origin; the weather frame in force at this
    /// time priced every segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatch_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drone_id: Option<usize>,
}

impl RouteRecord {
    pub fn origin(&self) -> Option<usize> {
        self.route_segments.first().map(|s| s.from_node)
    }

    pub fn destination(&self) -> Option<usize> {
        self.route_segments.last().map(|s| s.to_node)
    }

    pub fn node_sequence(&self) -> Vec<usize> {
        let mut seq: Vec<usize> = self.route_segments.iter().map(|s| s.from_node).collect();
        if let Some(last) = self.route_segments.last() {
            seq.push(last.to_node);
        }
        seq
    }

    pub fn total_duration(&self) -> f64 {
        self.route_segments.iter().map(|s| s.flight_duration).sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.route_segments.iter().map(|s| s.battery_consumed).sum()
    }

    pub fn total_distance(&self) -> f64 {
        self.route_segments.iter().map(|s| s.distance).sum()
    }

    /// Segment chaining and adjacency against `net`.
    pub fn check_chain(&self, net: &Network) -> Result<(), String> {
        if self.route_segments.is_empty() {
            return Err(format!("record {} has no segments", self.request_id));
        }
        for (i, s) in self.route_segments.iter().enumerate() {
            let link = net
                .edge_between(s.from_node, s.to_node)
                .ok_or_else(|| format!("record {}: segment {i} is not an edge", self.request_id))?;
            if link.distance != s.distance {
                return Err(format!("record {}: segment {i} distance mismatch", self.request_id));
            }
            if !(s.flight_duration > 0.0 && s.battery_consumed > 0.0) {
                return Err(format!("record {}: segment {i} has non-positive cost", self.request_id));
            }
        }
        for (i, w) in self.route_segments.windows(2).enumerate() {
            if w[0].to_node != w[1].from_node {
                return Err(format!("record {}: segments {i} and {} do not chain", self.request_id, i + 1));
            }
        }
        if self.origin() == self.destination() {
            return Err(format!("record {}: origin equals destination", self.request_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub drone_id: usize,
    pub current_node: usize,
    pub battery_remaining: f64,
    pub available_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub drone: DroneSpec,
    /// Recharge when battery falls below this fraction of capacity.
    pub recharge_threshold: f64,
    pub charge_time_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            drone: DroneSpec::default(),
            recharge_threshold: 0.2,
            charge_time_s: 1_800.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryEventKind {
    Reposition,
    Delivery,
    Recharge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatteryEvent {
    pub drone_id: usize,
    pub t: f64,
    pub kind: BatteryEventKind,
    /// Signed change in Wh: negative for flight, positive for recharge.
    pub delta: f64,
    pub battery_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedRequest {
    pub request_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub requests: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub success_rate: f64,
    pub mean_route_duration_s: f64,
    pub mean_route_energy_wh: f64,
    pub recharge_threshold: f64,
    pub charge_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<RouteRecord>,
    pub failures: Vec<FailedRequest>,
    pub events: Vec<BatteryEvent>,
    pub report: SimReport,
}

/// Chooses which drone serves a request.
pub trait Dispatcher {
    fn choose(&self, fleet: &[DroneState], request: &Request, net: &Network) -> usize;
}

/// Nearest idle drone to the origin; when none is idle, the one that frees
/// up first (ties by distance, then id).
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestEarliest;

impl Dispatcher for NearestEarliest {
    fn choose(&self, fleet: &[DroneState], request: &Request, net: &Network) -> usize {
        let origin = net.node(request.origin);
        let dist = |d: &DroneState| net.node(d.current_node).distance_to(origin);
        let idle = fleet
            .iter()
            .filter(|d| d.available_at <= request.request_time)
            .min_by(|a, b| dist(a).total_cmp(&dist(b)).then(a.drone_id.cmp(&b.drone_id)));
        match idle {
            Some(d) => d.drone_id,
            None => {
                fleet
                    .iter()
                    .min_by(|a, b| {
                        a.available_at
                            .total_cmp(&b.available_at)
                            .then(dist(a).total_cmp(&dist(b)))
                            .then(a.drone_id.cmp(&b.drone_id))
                    })
                    .expect("fleet is non-empty")
                    .drone_id
            }
        }
    }
}

/// Uniform distinct origin/destination pairs, uniform payloads in
/// `payload_range`, uniform request times over `[0, horizon_s]`; sorted by
/// time with ids assigned in that order.
pub fn generate_requests(
    net: &Network,
    count: usize,
    horizon_s: f64,
    payload_range: (f64, f64),
    max_payload: f64,
    seed: u64,
) -> Result<Vec<Request>, SimError> {
    let (lo, hi) = payload_range;
    if count == 0 {
        return Err(SimError::InvalidRequests("count must be >= 1".into()));
    }
    if net.len() < 2 {
        return Err(SimError::InvalidRequests("need at least two nodes".into()));
    }
    if !(lo > 0.0 && lo <= hi) {
        return Err(SimError::InvalidRequests(format!("bad payload range ({lo}, {hi})")));
    }
    if hi > max_payload {
        return Err(SimError::InvalidRequests(format!(
            "payload up to {hi} kg exceeds the drone limit of {max_payload} kg"
        )));
    }
    if !(horizon_s >= 0.0 && horizon_s.is_finite()) {
        return Err(SimError::InvalidRequests(format!("bad horizon {horizon_s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = net.len();
    let mut reqs: Vec<Request> = (0..count)
        .map(|_| {
            let origin = rng.random_range(0..n);
            let mut destination = rng.random_range(0..n - 1);
            if destination >= origin {
                destination += 1;
            }
            Request {
                request_id: 0,
                origin,
                destination,
                payload_kg: rng.random_range(lo..=hi),
                request_time: rng.random::<f64>() * horizon_s,
            }
        })
        .collect();
    reqs.sort_by(|a, b| a.request_time.total_cmp(&b.request_time));
    for (i, r) in reqs.iter_mut().enumerate() {
        r.request_id = i as u64;
    }
    Ok(reqs)
}

/// Drones parked at seeded random nodes with full batteries.
pub fn initial_fleet(net: &Network, count: usize, drone: &DroneSpec, seed: u64) -> Vec<DroneState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|drone_id| DroneState {
            drone_id,
            current_node: rng.random_range(0..net.len()),
            battery_remaining: drone.battery_capacity,
            available_at: 0.0,
        })
        .collect()
}

/// Weather lookups past the end of the series hold the final frame.
pub fn weather_time(wx: &WeatherSeries, t: f64) -> f64 {
    t.min(wx.horizon_s())
}

struct Legs {
    reposition: Option<Route>,
    delivery: Route,
    depart: f64,
}

impl Legs {
    fn energy(&self) -> f64 {
        self.reposition.as_ref().map_or(0.0, |r| r.total_energy) + self.delivery.total_energy
    }
}

fn plan_legs(
    net: &Network,
    wx: &WeatherSeries,
    cfg: &SimConfig,
    drone: &DroneState,
    req: &Request,
    ready: f64,
) -> Result<Legs, PlanError> {
    let reposition = if drone.current_node != req.origin {
        Some(plan_request(
            net,
            wx,
            &cfg.drone,
            0.0,
            drone.current_node,
            req.origin,
            weather_time(wx, ready),
        )?)
    } else {
        None
    };
    let depart = ready + reposition.as_ref().map_or(0.0, |r| r.total_duration);
    let delivery = plan_request(
        net,
        wx,
        &cfg.drone,
        req.payload_kg,
        req.origin,
        req.destination,
        weather_time(wx, depart),
    )?;
    Ok(Legs {
        reposition,
        delivery,
        depart,
    })
}

struct Ledger<'a> {
    events: Vec<BatteryEvent>,
    capacity: f64,
    cfg: &'a SimConfig,
}

impl Ledger<'_> {
    fn recharge(&mut self, d: &mut DroneState, t: f64) {
        let delta = self.capacity - d.battery_remaining;
        d.battery_remaining = self.capacity;
        d.available_at = t + self.cfg.charge_time_s;
        self.events.push(BatteryEvent {
            drone_id: d.drone_id,
            t,
            kind: BatteryEventKind::Recharge,
            delta,
            battery_after: d.battery_remaining,
        });
    }

    fn fly(&mut self, d: &mut DroneState, route: &Route, start: f64, kind: BatteryEventKind) {
        let mut t = start;
        for seg in &route.segment_costs {
            t += seg.duration;
            d.battery_remaining -= seg.energy;
            self.events.push(BatteryEvent {
                drone_id: d.drone_id,
                t,
                kind,
                delta: -seg.energy,
                battery_after: d.battery_remaining,
            });
        }
        d.current_node = *route.node_sequence.last().expect("route has nodes");
    }

    fn low(&self, d: &DroneState) -> bool {
        d.battery_remaining < self.cfg.recharge_threshold * self.capacity
    }
}

/// Runs the single-threaded event loop over time-ordered requests.
pub fn run_simulation(
    net: &Network,
    wx: &WeatherSeries,
    fleet: &[DroneState],
    requests: &[Request],
    cfg: &SimConfig,
    dispatcher: &dyn Dispatcher,
) -> Result<SimOutcome, SimError> {
    if fleet.is_empty() {
        return Err(SimError::EmptyFleet);
    }
    let mut fleet = fleet.to_vec();
    let mut ledger = Ledger {
        events: Vec::new(),
        capacity: cfg.drone.battery_capacity,
        cfg,
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();

    for req in requests {
        if req.payload_kg > cfg.drone.max_payload || req.origin == req.destination {
            failures.push(FailedRequest {
                request_id: req.request_id,
                reason: "request violates payload or endpoint preconditions".into(),
            });
            continue;
        }
        let idx = dispatcher.choose(&fleet, req, net);
        let drone = &mut fleet[idx];
        let mut ready = req.request_time.max(drone.available_at);
        if ledger.low(drone) {
            ledger.recharge(drone, ready);
            ready = drone.available_at;
        }
        let mut legs = plan_legs(net, wx, cfg, drone, req, ready);
        if let Ok(l) = &legs {
            if l.energy() > drone.battery_remaining && drone.battery_remaining < ledger.capacity {
                ledger.recharge(drone, ready);
                ready = drone.available_at;
                legs = plan_legs(net, wx, cfg, drone, req, ready);
            }
        }
        let legs = match legs {
            Ok(l) if l.energy() <= drone.battery_remaining => l,
            Ok(l) => {
                failures.push(FailedRequest {
                    request_id: req.request_id,
                    reason: format!(
                        "route needs {:.2} Wh but only {:.2} Wh available after recharge",
                        l.energy(),
                        drone.battery_remaining
                    ),
                });
                continue;
            }
            Err(e) => {
                failures.push(FailedRequest {
                    request_id: req.request_id,
                    reason: e.to_string(),
                });
                continue;
            }
        };

        if let Some(rep) = &legs.reposition {
            ledger.fly(drone, rep, ready, BatteryEventKind::Reposition);
        }
        ledger.fly(drone, &legs.delivery, legs.depart, BatteryEventKind::Delivery);
        let arrival = legs.depart + legs.delivery.total_duration;
        drone.available_at = arrival;
        if ledger.low(drone) {
            ledger.recharge(drone, arrival);
        }

        let step = wx
            .step_at(weather_time(wx, legs.depart))
            .expect("weather time is inside the horizon");
        let frame = wx.frame(step);
        let seq = &legs.delivery.node_sequence;
        let route_segments = seq
            .windows(2)
            .zip(&legs.delivery.segment_costs)
            .map(|(w, c)| {
                let sample = &frame[w[0]];
                RouteSegment {
                    from_node: w[0],
                    to_node: w[1],
                    wind_speed: sample.wind_speed,
                    wind_direction: sample.wind_bearing,
                    temperature: sample.temperature,
                    distance: net.edge_between(w[0], w[1]).expect("route edge").distance,
                    flight_duration: c.duration,
                    battery_consumed: c.energy,
                }
            })
            .collect();
        records.push(RouteRecord {
            request_id: req.request_id,
            route_segments,
            payload_kg: Some(req.payload_kg),
            dispatch_time: Some(legs.depart),
            drone_id: Some(drone.drone_id),
        });
    }

    let succeeded = records.len();
    let mean = |f: &dyn Fn(&RouteRecord) -> f64| {
        if succeeded == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / succeeded as f64
        }
    };
    let report = SimReport {
        requests: requests.len(),
        succeeded,
        failed: failures.len(),
        success_rate: if requests.is_empty() {
            0.0
        } else {
            succeeded as f64 / requests.len() as f64
        },
        mean_route_duration_s: mean(&|r| r.total_duration()),
        mean_route_energy_wh: mean(&|r| r.total_energy()),
        recharge_threshold: cfg.recharge_threshold,
        charge_time_s: cfg.charge_time_s,
    };
    Ok(SimOutcome {
        records,
        failures,
        events: ledger.events,
        report,
    })
}

/// Re-plans a record from the weather frame it was dispatched under and
/// checks that A* reproduces the stored node sequence.
pub fn verify_label(
    record: &RouteRecord,
    net: &Network,
    wx: &WeatherSeries,
    drone: &DroneSpec,
) -> Result<(), String> {
    let (Some(payload), Some(t)) = (record.payload_kg, record.dispatch_time) else {
        return Err(format!("record {} lacks dispatch provenance", record.request_id));
    };
    let (Some(o), Some(d)) = (record.origin(), record.destination()) else {
        return Err(format!("record {} is empty", record.request_id));
    };
    let route = plan_request(net, wx, drone, payload, o, d, weather_time(wx, t)).map_err(|e| e.to_string())?;
    if route.node_sequence != record.node_sequence() {
        return Err(format!(
            "record {}: stored path {:?} differs from re-planned {:?}",
            record.request_id,
            record.node_sequence(),
            route.node_sequence
        ));
    }
    for (seg, c) in record.route_segments.iter().zip(&route.segment_costs) {
        if seg.flight_duration != c.duration || seg.battery_consumed != c.energy {
            return Err(format!("record {}: segment costs differ on re-plan", record.request_id));
        }
    }
    Ok(())
}

/// Per-drone battery bookkeeping: never negative, never above capacity, and
/// each event's balance follows from the previous one.
pub fn check_battery_log(events: &[BatteryEvent], fleet: &[DroneState], capacity: f64) -> Result<(), String> {
    let mut balance: Vec<f64> = fleet.iter().map(|d| d.battery_remaining).collect();
    for (i, e) in events.iter().enumerate() {
        let expected = balance[e.drone_id] + e.delta;
        if (expected - e.battery_after).abs() > 1e-9 * capacity {
            return Err(format!("event {i}: balance does not follow from previous state"));
        }
        if e.battery_after < 0.0 || e.battery_after > capacity + 1e-9 {
            return Err(format!("event {i}: battery {} outside [0, {capacity}]", e.battery_after));
        }
        balance[e.drone_id] = e.battery_after;
    }
    Ok(())
}

pub fn dataset_to_jsonl(records: &[RouteRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn dataset_from_jsonl(text: &str) -> Result<Vec<RouteRecord>, SimError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())), "<memory>")
}

fn parse_lines<I>(lines: I, path: &str) -> Result<Vec<RouteRecord>, SimError>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|source| SimError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SimError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_dataset(records: &[RouteRecord], path: &Path) -> Result<(), SimError> {
    let io = |source| SimError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(dataset_to_jsonl(records).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<Vec<RouteRecord>, SimError> {
    let file = fs::File::open(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lines(BufReader::new(file).lines(), &path.display().to_string())
}
