//! Baseline: step to the neighbour closest (in a straight line) to the
//! destination.

use super::{softmax_over, GraphView, NextNodePredictor, Sample};

/// Softmax temperature over negated scaled distances. Small enough that the
/// closest neighbour dominates, large enough that the ranking of the others
/// survives in the probabilities.
const TEMPERATURE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Greedy {
    pub graph: GraphView,
}

impl Greedy {
    pub fn new(graph: GraphView) -> Self {
        Greedy { graph }
    }
}

impl NextNodePredictor for Greedy {
    fn predict_next(&self, s: &Sample) -> Vec<(usize, f64)> {
        let nb = &self.graph.neighbors[s.current_node];
        let scores: Vec<f64> = nb
            .iter()
            .map(|&n| -self.graph.distance(n, s.end_node) / TEMPERATURE)
            .collect();
        softmax_over(nb, &scores)
    }
}
