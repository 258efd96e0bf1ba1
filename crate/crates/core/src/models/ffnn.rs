//! Feedforward next-node classifier: one-hot start, destination and current
//! node plus scaled coordinates and payload, two ReLU hidden layers, one
//! logit per node masked to the current node's neighbours.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{BatchLogits, Learner};
use super::{softmax_over, GraphView, ModelError, NextNodePredictor, Sample, SEVERITY_FEATURES};
use crate::neural::{relu, Linear, ParamStore, Tape, Tensor};

/// Dense inputs after the three one-hot blocks.
pub(crate) const DENSE_INPUTS: usize = 5;

/// Coordinates of the current node and destination, then scaled payload.
pub(crate) fn dense_inputs(graph: &GraphView, payload_scale: f64, s: &Sample) -> [f64; DENSE_INPUTS] {
    let (c, e) = (graph.coords[s.current_node], graph.coords[s.end_node]);
    [c[0], c[1], e[0], e[1], s.payload / payload_scale]
}

#[derive(Debug, Clone)]
pub struct Ffnn {
    pub graph: GraphView,
    pub hidden: (usize, usize),
    pub payload_scale: f64,
    pub store: ParamStore,
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

impl Ffnn {
    pub fn new(graph: GraphView, hidden: (usize, usize), payload_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = graph.len();
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, "ffnn.l1", 3 * n + DENSE_INPUTS, hidden.0, &mut rng);
        let l2 = Linear::new(&mut store, "ffnn.l2", hidden.0, hidden.1, &mut rng);
        let l3 = Linear::new(&mut store, "ffnn.l3", hidden.1, n, &mut rng);
        Ffnn {
            graph,
            hidden,
            payload_scale: payload_scale.max(f64::MIN_POSITIVE),
            store,
            l1,
            l2,
            l3,
        }
    }

    pub fn input_width(&self) -> usize {
        3 * self.graph.len() + DENSE_INPUTS
    }

    fn dense_inputs(&self, s: &Sample) -> [f64; DENSE_INPUTS] {
        dense_inputs(&self.graph, self.payload_scale, s)
    }

    /// The full input vector (also the KNN feature space).
    pub fn features(&self, s: &Sample) -> Vec<f64> {
        let n = self.graph.len();
        let mut x = vec![0.0; self.input_width()];
        x[s.start_node] = 1.0;
        x[n + s.end_node] = 1.0;
        x[2 * n + s.current_node] = 1.0;
        x[3 * n..].copy_from_slice(&self.dense_inputs(s));
        x
    }

    /// Logits for every node, without a tape. The one-hot blocks select
    /// rows of the first weight matrix instead of multiplying by zeros.
    pub fn logits(&self, s: &Sample) -> Vec<f64> {
        let n = self.graph.len();
        let (w1, b1) = (self.store.get(self.l1.w), self.store.get(self.l1.b));
        let h0 = self.hidden.0;
        let mut h = b1.data.clone();
        for row in [s.start_node, n + s.end_node, 2 * n + s.current_node] {
            h.iter_mut().zip(w1.row(row)).for_each(|(a, w)| *a += w);
        }
        for (i, x) in self.dense_inputs(s).iter().enumerate() {
            h.iter_mut().zip(w1.row(3 * n + i)).for_each(|(a, w)| *a += x * w);
        }
        h.iter_mut().for_each(|v| *v = relu(*v));
        let h = Tensor::matrix(1, h0, h);
        let mut h2 = self.l2.apply(&self.store, &h);
        h2.data.iter_mut().for_each(|v| *v = relu(*v));
        self.l3.apply(&self.store, &h2).data
    }
}

impl NextNodePredictor for Ffnn {
    fn predict_next(&self, s: &Sample) -> Vec<(usize, f64)> {
        let nb = &self.graph.neighbors[s.current_node];
        let logits = self.logits(s);
        let scores: Vec<f64> = nb.iter().map(|&n| logits[n]).collect();
        softmax_over(nb, &scores)
    }
}

impl Learner for Ffnn {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward_batch<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &[&Sample],
        _dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchLogits, ModelError> {
        let n = self.graph.len();
        let width = self.input_width();
        let mut x = Vec::with_capacity(batch.len() * width);
        let mut allowed = vec![false; batch.len() * n];
        let mut severity = batch
            .iter()
            .all(|s| s.frame.is_some())
            .then(|| vec![0.0; batch.len() * n * SEVERITY_FEATURES]);
        for (r, s) in batch.iter().enumerate() {
            x.extend(self.features(s));
            for &nb in &self.graph.neighbors[s.current_node] {
                allowed[r * n + nb] = true;
                if let (Some(sev), Some(f)) = (severity.as_mut(), s.frame.as_ref()) {
                    let at = (r * n + nb) * SEVERITY_FEATURES;
                    sev[at..at + SEVERITY_FEATURES].copy_from_slice(&f.severity(nb));
                }
            }
        }
        let x = tape.leaf(Tensor::matrix(batch.len(), width, x));
        let h = self.l1.forward(tape, &self.store, x)?;
        let h = tape.relu(h);
        let h = self.l2.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let logits = self.l3.forward(tape, &self.store, h)?;
        Ok(BatchLogits {
            logits,
            classes: n,
            targets: batch.iter().map(|s| s.label).collect(),
            allowed,
            severity,
        })
    }
}
