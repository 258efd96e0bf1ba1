//! Classical optimal routing over weather-adjusted edge durations.
//!
//! Both planners minimize total duration and break ties deterministically:
//! lower cost, then fewer hops, then lower predecessor id. Dataset labels come
//! from these routes, so identical inputs must yield identical paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::flightcost::{edge_cost, heuristic_lower_bound, DroneSpec, EdgeCost};
use crate::skynet::Network;
use crate::weathersim::{WeatherError, WeatherSample, WeatherSeries};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("node {0} is not in the network")]
    UnknownNode(usize),
    #[error("no feasible route from {origin} to {dest}")]
    NoRoute { origin: usize, dest: usize },
    #[error(transparent)]
    Weather(#[from] WeatherErrorKind),
}

/// Comparable stand-in for [`WeatherError`], which wraps io errors.
#[derive(Debug, Error, PartialEq)]
#[error("{0}")]
pub struct WeatherErrorKind(pub String);

impl From<WeatherError> for PlanError {
    fn from(e: WeatherError) -> Self {
        PlanError::Weather(WeatherErrorKind(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentCost {
    pub duration: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub node_sequence: Vec<usize>,
    pub total_duration: f64,
    pub total_energy: f64,
    pub segment_costs: Vec<SegmentCost>,
    pub expanded_nodes: usize,
    pub plan_time_ns: u64,
}

impl Route {
    pub fn hops(&self) -> usize {
        self.node_sequence.len().saturating_sub(1)
    }

    /// Checks adjacency, endpoints, and that the totals equal the segment sums.
    pub fn check(&self, net: &Network, origin: usize, dest: usize) -> Result<(), String> {
        if self.node_sequence.first() != Some(&origin) || self.node_sequence.last() != Some(&dest) {
            return Err(format!("route does not run {origin} -> {dest}"));
        }
        if self.segment_costs.len() != self.hops() {
            return Err("segment count does not match hop count".into());
        }
        for w in self.node_sequence.windows(2) {
            if net.edge_between(w[0], w[1]).is_none() {
                return Err(format!("{} and {} are not adjacent", w[0], w[1]));
            }
        }
        let d: f64 = self.segment_costs.iter().map(|s| s.duration).sum();
        let e: f64 = self.segment_costs.iter().map(|s| s.energy).sum();
        if d != self.total_duration || e != self.total_energy {
            return Err("totals do not equal segment sums".into());
        }
        Ok(())
    }
}

/// Edge cost for one request, frozen against a single weather frame.
#[derive(Debug, Clone, Copy)]
pub struct WeatherCost<'a> {
    pub net: &'a Network,
    pub frame: &'a [WeatherSample],
    pub drone: &'a DroneSpec,
    pub payload_kg: f64,
}

impl<'a> WeatherCost<'a> {
    pub fn at_time(
        net: &'a Network,
        wx: &'a WeatherSeries,
        drone: &'a DroneSpec,
        payload_kg: f64,
        t: f64,
    ) -> Result<Self, PlanError> {
        let step = wx.step_at(t)?;
        Ok(WeatherCost {
            net,
            frame: wx.frame(step),
            drone,
            payload_kg,
        })
    }

    pub fn cost(&self, from: usize, to: usize, distance: f64) -> EdgeCost {
        edge_cost(
            self.net.node(from),
            self.net.node(to),
            distance,
            &self.frame[from],
            self.drone,
            self.payload_kg,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Label {
    cost: f64,
    hops: usize,
    pred: usize,
}

impl Label {
    fn better_than(&self, other: &Label) -> bool {
        match self.cost.total_cmp(&other.cost) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (self.hops, self.pred) < (other.hops, other.pred),
        }
    }
}

/// Min-heap entry: smallest key, then fewer hops, then lower node id.
#[derive(Debug, Clone, Copy)]
struct Entry {
    key: f64,
    cost: f64,
    hops: usize,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.cost.total_cmp(&self.cost))
    }
}

fn check_nodes(net: &Network, origin: usize, dest: usize) -> Result<(), PlanError> {
    for id in [origin, dest] {
        if !net.contains(id) {
            return Err(PlanError::UnknownNode(id));
        }
    }
    Ok(())
}

fn build_route<F>(
    labels: &[Option<Label>],
    cost: &F,
    net: &Network,
    origin: usize,
    dest: usize,
    expanded: usize,
    started: Instant,
) -> Route
where
    F: Fn(usize, usize, f64) -> EdgeCost,
{
    let mut seq = vec![dest];
    let mut cur = dest;
    while cur != origin {
        cur = labels[cur].expect("reached node has a label").pred;
        seq.push(cur);
    }
    seq.reverse();
    let segment_costs: Vec<SegmentCost> = seq
        .windows(2)
        .map(|w| {
            let link = net.edge_between(w[0], w[1]).expect("route follows edges");
            let c = cost(w[0], w[1], link.distance);
            SegmentCost {
                duration: c.duration,
                energy: c.energy,
            }
        })
        .collect();
    let total_duration = segment_costs.iter().map(|s| s.duration).sum();
    let total_energy = segment_costs.iter().map(|s| s.energy).sum();
    Route {
        node_sequence: seq,
        total_duration,
        total_energy,
        segment_costs,
        expanded_nodes: expanded,
        plan_time_ns: started.elapsed().as_nanos().max(1) as u64,
    }
}

/// Dijkstra with lazy deletion and a settled set.
pub fn dijkstra<F>(net: &Network, cost: F, origin: usize, dest: usize) -> Result<Route, PlanError>
where
    F: Fn(usize, usize, f64) -> EdgeCost,
{
    let started = Instant::now();
    check_nodes(net, origin, dest)?;
    let n = net.len();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    labels[origin] = Some(Label {
        cost: 0.0,
        hops: 0,
        pred: origin,
    });
    heap.push(Entry {
        key: 0.0,
        cost: 0.0,
        hops: 0,
        node: origin,
    });
    let mut expanded = 0;
    while let Some(Entry { node: u, cost: cu, hops, .. }) = heap.pop() {
        if settled[u] {
            continue;
        }
        let lu = labels[u].expect("queued node has a label");
        if lu.cost != cu || lu.hops != hops {
            continue;
        }
        settled[u] = true;
        expanded += 1;
        if u == dest {
            return Ok(build_route(&labels, &cost, net, origin, dest, expanded, started));
        }
        for link in net.neighbors(u) {
            let v = link.to;
            if settled[v] {
                continue;
            }
            let c = cost(u, v, link.distance);
            if !c.feasible() {
                continue;
            }
            let cand = Label {
                cost: cu + c.duration,
                hops: hops + 1,
                pred: u,
            };
            if labels[v].is_none_or(|old| cand.better_than(&old)) {
                labels[v] = Some(cand);
                heap.push(Entry {
                    key: cand.cost,
                    cost: cand.cost,
                    hops: cand.hops,
                    node: v,
                });
            }
        }
    }
    Err(PlanError::NoRoute { origin, dest })
}

/// A* with re-opening, so any admissible heuristic yields an optimal route.
pub fn astar<F, H>(
    net: &Network,
    cost: F,
    heuristic: H,
    origin: usize,
    dest: usize,
) -> Result<Route, PlanError>
where
    F: Fn(usize, usize, f64) -> EdgeCost,
    H: Fn(usize) -> f64,
{
    let started = Instant::now();
    check_nodes(net, origin, dest)?;
    let n = net.len();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    labels[origin] = Some(Label {
        cost: 0.0,
        hops: 0,
        pred: origin,
    });
    heap.push(Entry {
        key: heuristic(origin),
        cost: 0.0,
        hops: 0,
        node: origin,
    });
    let mut expanded = 0;
    while let Some(Entry { node: u, cost: cu, hops, .. }) = heap.pop() {
        let lu = labels[u].expect("queued node has a label");
        if lu.cost != cu || lu.hops != hops {
            continue;
        }
        expanded += 1;
        if u == dest {
            return Ok(build_route(&labels, &cost, net, origin, dest, expanded, started));
        }
        for link in net.neighbors(u) {
            let v = link.to;
            let c = cost(u, v, link.distance);
            if !c.feasible() {
                continue;
            }
            let cand = Label {
                cost: cu + c.duration,
                hops: hops + 1,
                pred: u,
            };
            if labels[v].is_none_or(|old| cand.better_than(&old)) {
                labels[v] = Some(cand);
                heap.push(Entry {
                    key: cand.cost + heuristic(v),
                    cost: cand.cost,
                    hops: cand.hops,
                    node: v,
                });
            }
        }
    }
    Err(PlanError::NoRoute { origin, dest })
}

/// Plans one request with A* against the weather frame in force at `t`.
///
/// The heuristic bound uses the series-wide maximum wind, which is admissible
/// for every frame.
pub fn plan_request(
    net: &Network,
    wx: &WeatherSeries,
    drone: &DroneSpec,
    payload_kg: f64,
    origin: usize,
    dest: usize,
    t: f64,
) -> Result<Route, PlanError> {
    let wc = WeatherCost::at_time(net, wx, drone, payload_kg, t)?;
    check_nodes(net, origin, dest)?;
    let max_wind = wx.max_wind_speed();
    let goal = *net.node(dest);
    astar(
        net,
        |u, v, d| wc.cost(u, v, d),
        |u| heuristic_lower_bound(net.node(u), &goal, drone, max_wind),
        origin,
        dest,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skynet::{Edge, Node};

    fn triangle() -> Network {
        // A(0)–B(1)–C(2), plus a direct A–C edge.
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0 },
            Node { id: 1, x: 1.0, y: 0.0 },
            Node { id: 2, x: 1.0, y: 1.0 },
        ];
        let e = |a: usize, b: usize| Edge {
            u: a,
            v: b,
            distance: nodes[a].distance_to(&nodes[b]),
        };
        Network::from_parts(nodes.clone(), vec![e(0, 1), e(1, 2), e(0, 2)]).unwrap()
    }

    fn fixed(u: usize, v: usize) -> EdgeCost {
        let d = match (u.min(v), u.max(v)) {
            (0, 1) | (1, 2) => 1.0,
            _ => 3.0,
        };
        EdgeCost {
            duration: d,
            energy: d / 10.0,
            infeasible: None,
        }
    }

    #[test]
    fn triangle_prefers_two_short_hops() {
        let net = triangle();
        let r = dijkstra(&net, |u, v, _| fixed(u, v), 0, 2).unwrap();
        assert_eq!(r.node_sequence, vec![0, 1, 2]);
        assert_eq!(r.total_duration, 2.0);
        r.check(&net, 0, 2).unwrap();
        let a = astar(&net, |u, v, _| fixed(u, v), |_| 0.0, 0, 2).unwrap();
        assert_eq!(a.node_sequence, r.node_sequence);
    }

    #[test]
    fn origin_equals_destination() {
        let net = triangle();
        for r in [
            dijkstra(&net, |u, v, _| fixed(u, v), 1, 1).unwrap(),
            astar(&net, |u, v, _| fixed(u, v), |_| 0.0, 1, 1).unwrap(),
        ] {
            assert_eq!(r.node_sequence, vec![1]);
            assert_eq!(r.total_duration, 0.0);
            assert!(r.segment_costs.is_empty());
        }
    }

    #[test]
    fn tie_prefers_fewer_hops() {
        let net = triangle();
        let cost = |u: usize, v: usize, _| {
            let d = if (u.min(v), u.max(v)) == (0, 2) { 2.0 } else { 1.0 };
            EdgeCost {
                duration: d,
                energy: 1.0,
                infeasible: None,
            }
        };
        assert_eq!(dijkstra(&net, cost, 0, 2).unwrap().node_sequence, vec![0, 2]);
        assert_eq!(astar(&net, cost, |_| 0.0, 0, 2).unwrap().node_sequence, vec![0, 2]);
    }

    #[test]
    fn tie_prefers_lower_predecessor() {
        // Square 0-1-3, 0-2-3 with equal costs: predecessor 1 wins.
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0 },
            Node { id: 1, x: 1.0, y: 0.0 },
            Node { id: 2, x: 0.0, y: 1.0 },
            Node { id: 3, x: 1.0, y: 1.0 },
        ];
        let e = |a: usize, b: usize| Edge { u: a, v: b, distance: 1.0 };
        let net = Network::from_parts(nodes, vec![e(0, 1), e(1, 3), e(0, 2), e(2, 3)]).unwrap();
        let unit = |_, _, _| EdgeCost {
            duration: 1.0,
            energy: 1.0,
            infeasible: None,
        };
        assert_eq!(dijkstra(&net, unit, 0, 3).unwrap().node_sequence, vec![0, 1, 3]);
        assert_eq!(astar(&net, unit, |_| 0.0, 0, 3).unwrap().node_sequence, vec![0, 1, 3]);
    }

    #[test]
    fn infeasible_edges_give_no_route() {
        let net = triangle();
        let blocked = |u: usize, v: usize, _| {
            if u == 2 || v == 2 {
                EdgeCost {
                    duration: f64::INFINITY,
                    energy: f64::INFINITY,
                    infeasible: Some(crate::flightcost::FlightError::CrosswindExceedsAirspeed {
                        crosswind: 30.0,
                        airspeed: 20.0,
                    }),
                }
            } else {
                fixed(u, v)
            }
        };
        assert_eq!(
            dijkstra(&net, blocked, 0, 2),
            Err(PlanError::NoRoute { origin: 0, dest: 2 })
        );
        assert_eq!(
            astar(&net, blocked, |_| 0.0, 0, 2),
            Err(PlanError::NoRoute { origin: 0, dest: 2 })
        );
    }

    #[test]
    fn unknown_node() {
        let net = triangle();
        assert_eq!(
            dijkstra(&net, |u, v, _| fixed(u, v), 0, 9),
            Err(PlanError::UnknownNode(9))
        );
    }
}
