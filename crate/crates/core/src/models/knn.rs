//! Baseline: k-nearest training decisions in the feedforward model's input
//! space, voting only for neighbours of the current node.

use super::ffnn::{dense_inputs, DENSE_INPUTS};
use super::{GraphView, NextNodePredictor, Sample};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KnnPoint {
    pub start: usize,
    pub end: usize,
    pub current: usize,
    pub dense: [f64; DENSE_INPUTS],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub graph: GraphView,
    pub k: usize,
    pub payload_scale: f64,
    pub points: Vec<KnnPoint>,
}

impl Knn {
    pub fn fit(graph: GraphView, k: usize, payload_scale: f64, samples: &[Sample]) -> Self {
        let points = samples
            .iter()
            .map(|s| KnnPoint {
                start: s.start_node,
                end: s.end_node,
                current: s.current_node,
                dense: dense_inputs(&graph, payload_scale, s),
                label: s.label,
            })
            .collect();
        Knn {
            graph,
            k,
            payload_scale,
            points,
        }
    }

    /// Squared Euclidean distance over one-hot ids plus dense inputs.
    fn distance(&self, p: &KnnPoint, s: &Sample, dense: &[f64; DENSE_INPUTS]) -> f64 {
        let mismatch = |a: usize, b: usize| if a == b { 0.0 } else { 2.0 };
        mismatch(p.start, s.start_node)
            + mismatch(p.end, s.end_node)
            + mismatch(p.current, s.current_node)
            + p.dense.iter().zip(dense).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }
}

impl NextNodePredictor for Knn {
    /// Vote shares among the k nearest points whose label is a neighbour of
    /// the current node; uniform when none are.
    fn predict_next(&self, s: &Sample) -> Vec<(usize, f64)> {
        let nb = &self.graph.neighbors[s.current_node];
        let dense = dense_inputs(&self.graph, self.payload_scale, s);
        let mut scored: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (self.distance(p, s, &dense), i))
            .collect();
        let k = self.k.min(scored.len());
        if k > 0 {
            scored.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let mut votes = vec![0.0; nb.len()];
        for &(_, i) in &scored[..k] {
            if let Ok(j) = nb.binary_search(&self.points[i].label) {
                votes[j] += 1.0;
            }
        }
        let total: f64 = votes.iter().sum();
        nb.iter()
            .zip(votes)
            .map(|(&n, v)| (n, if total > 0.0 { v / total } else { 1.0 / nb.len() as f64 }))
            .collect()
    }
}
