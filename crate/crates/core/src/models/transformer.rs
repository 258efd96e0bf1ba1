//! Weather-attention transformer over a small token set per decision.
//!
//! Query tokens are the current node, the destination and one token per
//! neighbour. Each token is a learned node embedding plus a role embedding,
//! projected geometric features and projected local weather. The memory is
//! one row per network node (embedding, coordinates and that node's
//! weather), shared by every decision taken in the same weather frame.
//!
//! Each layer is post-norm: self-attention among the query tokens,
//! cross-attention into the weather memory, then a ReLU feedforward block.
//! A linear head scores the neighbour tokens; the scores are the logits.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{BatchLogits, Learner};
use super::{softmax_over, GraphView, ModelConfig, ModelError, NextNodePredictor, Sample, WeatherFrame, SEVERITY_FEATURES};
use crate::neural::{AttentionConfig, AttnGroup, AttnSpec, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Tape, Tensor, Var};

/// Geometric features per query token.
const TOKEN_FEATURES: usize = 9;
const ROLE_CURRENT: usize = 0;
const ROLE_DEST: usize = 1;
const ROLE_NEIGHBOR: usize = 2;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformerConfig {
    pub attention: AttentionConfig,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub weather_features: usize,
    pub seed: u64,
}

impl From<&ModelConfig> for TransformerConfig {
    fn from(m: &ModelConfig) -> Self {
        TransformerConfig {
            attention: m.attention.clone(),
            n_layers: m.n_layers,
            ff_dim: m.ff_dim,
            weather_features: m.weather_features,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln3: LayerNorm,
}

#[derive(Debug, Clone)]
struct Params {
    node_emb: ParamId,
    role_emb: ParamId,
    token: Linear,
    memory_coord: Linear,
    weather: Option<Linear>,
    blocks: Vec<Block>,
    head: Linear,
}

/// Per-layer key/value projections of one frame's memory.
#[derive(Debug)]
struct MemoryCache {
    step: Option<usize>,
    kv: Vec<(Tensor, Tensor)>,
}

#[derive(Debug)]
pub struct Transformer {
    pub graph: GraphView,
    pub cfg: TransformerConfig,
    pub payload_scale: f64,
    pub store: ParamStore,
    p: Params,
    cache: Mutex<Option<MemoryCache>>,
}

impl Clone for Transformer {
    fn clone(&self) -> Self {
        Transformer {
            graph: self.graph.clone(),
            cfg: self.cfg.clone(),
            payload_scale: self.payload_scale,
            store: self.store.clone(),
            p: self.p.clone(),
            cache: Mutex::new(None),
        }
    }
}

/// Where each sample's tokens sit in a batch.
struct Layout {
    starts: Vec<usize>,
    lens: Vec<usize>,
    rows: usize,
}

impl Transformer {
    pub fn new(graph: GraphView, cfg: &ModelConfig, payload_scale: f64) -> Result<Self, ModelError> {
        cfg.validate()?;
        Self::with_config(graph, TransformerConfig::from(cfg), payload_scale)
    }

    pub fn with_config(graph: GraphView, cfg: TransformerConfig, payload_scale: f64) -> Result<Self, ModelError> {
        cfg.attention.validate()?;
        if cfg.n_layers == 0 || cfg.ff_dim == 0 {
            return Err(ModelError::InvalidConfig(format!("{cfg:?}")));
        }
        let d = cfg.attention.d_model;
        let heads = cfg.attention.n_heads;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let node_emb = store.add("tf.node_emb", Tensor::xavier(graph.len(), d, &mut rng));
        let role_emb = store.add("tf.role_emb", Tensor::xavier(3, d, &mut rng));
        let token = Linear::new(&mut store, "tf.token", TOKEN_FEATURES, d, &mut rng);
        let memory_coord = Linear::new(&mut store, "tf.memory_coord", 2, d, &mut rng);
        let weather = (cfg.weather_features > 0)
            .then(|| Linear::new(&mut store, "tf.weather", cfg.weather_features, d, &mut rng));
        let blocks = (0..cfg.n_layers)
            .map(|i| Block {
                self_attn: MultiHeadAttention::new(&mut store, &format!("tf.{i}.self"), d, heads, &mut rng),
                ln1: LayerNorm::new(&mut store, &format!("tf.{i}.ln1"), d),
                cross_attn: MultiHeadAttention::new(&mut store, &format!("tf.{i}.cross"), d, heads, &mut rng),
                ln2: LayerNorm::new(&mut store, &format!("tf.{i}.ln2"), d),
                ff1: Linear::new(&mut store, &format!("tf.{i}.ff1"), d, cfg.ff_dim, &mut rng),
                ff2: Linear::new(&mut store, &format!("tf.{i}.ff2"), cfg.ff_dim, d, &mut rng),
                ln3: LayerNorm::new(&mut store, &format!("tf.{i}.ln3"), d),
            })
            .collect();
        let head = Linear::new(&mut store, "tf.head", d, 1, &mut rng);
        Ok(Transformer {
            graph,
            cfg,
            payload_scale: payload_scale.max(f64::MIN_POSITIVE),
            store,
            p: Params {
                node_emb,
                role_emb,
                token,
                memory_coord,
                weather,
                blocks,
                head,
            },
            cache: Mutex::new(None),
        })
    }

    fn heads(&self) -> usize {
        self.cfg.attention.n_heads
    }

    fn check_frame(&self, frame: Option<&WeatherFrame>) -> Result<(), ModelError> {
        let w = self.cfg.weather_features;
        if w == 0 {
            return Ok(());
        }
        match frame {
            Some(f) if f.width == w && f.nodes() == self.graph.len() => Ok(()),
            Some(f) => Err(ModelError::WeatherMismatch {
                expected: w,
                found: f.width,
            }),
            None => Err(ModelError::WeatherMismatch { expected: w, found: 0 }),
        }
    }

    fn token_nodes(&self, s: &Sample) -> impl Iterator<Item = (usize, usize)> + '_ {
        [(s.current_node, ROLE_CURRENT), (s.end_node, ROLE_DEST)]
            .into_iter()
            .chain(self.graph.neighbors[s.current_node].iter().map(|&n| (n, ROLE_NEIGHBOR)))
    }

    fn token_features(&self, s: &Sample, node: usize, role: usize, slot: usize) -> [f64; TOKEN_FEATURES] {
        let g = &self.graph;
        let (p, e) = (g.coords[node], g.coords[s.end_node]);
        let mut f = [0.0; TOKEN_FEATURES];
        f[0] = p[0];
        f[1] = p[1];
        f[2] = e[0] - p[0];
        f[3] = e[1] - p[1];
        f[4] = g.distance(node, s.end_node);
        if role == ROLE_NEIGHBOR {
            let len = g.edge_lengths[s.current_node][slot];
            let c = g.coords[s.current_node];
            f[5] = len;
            f[6] = (p[0] - c[0]) / len.max(f64::MIN_POSITIVE);
            f[7] = (p[1] - c[1]) / len.max(f64::MIN_POSITIVE);
        }
        f[8] = s.payload / self.payload_scale;
        f
    }

    fn dropout<'a>(&self, tape: &mut Tape<'a>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        match rng {
            Some(r) => tape.dropout(x, self.cfg.attention.dropout_p, *r),
            None => x,
        }
    }

    /// Embedded query tokens for a batch.
    fn queries<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &[&Sample],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Layout), ModelError> {
        let mut nodes = Vec::new();
        let mut roles = Vec::new();
        let mut feats = Vec::new();
        let mut weather = Vec::new();
        let mut layout = Layout {
            starts: Vec::with_capacity(batch.len()),
            lens: Vec::with_capacity(batch.len()),
            rows: 0,
        };
        for s in batch {
            self.check_frame(s.frame.as_deref())?;
            layout.starts.push(nodes.len());
            for (slot, (node, role)) in self.token_nodes(s).enumerate() {
                nodes.push(node);
                roles.push(role);
                feats.extend(self.token_features(s, node, role, slot.saturating_sub(2)));
                if let (Some(f), true) = (s.frame.as_ref(), self.cfg.weather_features > 0) {
                    weather.extend_from_slice(f.row(node));
                }
            }
            layout.lens.push(nodes.len() - layout.starts.last().unwrap());
        }
        layout.rows = nodes.len();
        let emb = tape.param(&self.store, self.p.node_emb);
        let role = tape.param(&self.store, self.p.role_emb);
        let e = tape.gather_rows(emb, nodes)?;
        let r = tape.gather_rows(role, roles)?;
        let f = tape.leaf(Tensor::matrix(layout.rows, TOKEN_FEATURES, feats));
        let f = self.p.token.forward(tape, &self.store, f)?;
        let mut x = tape.add(e, r)?;
        x = tape.add(x, f)?;
        if let Some(wl) = &self.p.weather {
            let w = tape.leaf(Tensor::matrix(layout.rows, self.cfg.weather_features, weather));
            let w = wl.forward(tape, &self.store, w)?;
            x = tape.add(x, w)?;
        }
        Ok((self.dropout(tape, x, rng), layout))
    }

    /// Per-layer keys and values of the memory, one block of `nodes` rows
    /// per frame in turn.
    ///
    /// A memory row is `node_emb + coord_proj(xy) + weather_proj(w)`, and the
    /// key projection is linear in it, so each layer projects the
    /// frame-independent part once and adds `w · (W_weather · W_k)` per frame.
    fn memory_kv<'a>(&'a self, tape: &mut Tape<'a>, frames: &[Option<&WeatherFrame>]) -> Result<Vec<(Var, Var)>, ModelError> {
        let n = self.graph.len();
        let emb = tape.param(&self.store, self.p.node_emb);
        let coords = tape.leaf(Tensor::matrix(n, 2, self.graph.coords.iter().flatten().copied().collect()));
        let c = self.p.memory_coord.forward(tape, &self.store, coords)?;
        let mut base = tape.add(emb, c)?;
        let weather = match &self.p.weather {
            Some(wl) => {
                let w = self.cfg.weather_features;
                let mut data = Vec::with_capacity(frames.len() * n * w);
                for f in frames {
                    self.check_frame(*f)?;
                    data.extend_from_slice(&f.expect("checked").features);
                }
                let bias = tape.param(&self.store, wl.b);
                base = tape.add_bias(base, bias)?;
                let ww = tape.param(&self.store, wl.w);
                let f = tape.leaf(Tensor::matrix(frames.len() * n, w, data));
                Some((ww, f))
            }
            None => None,
        };
        let tile: Vec<usize> = (0..frames.len()).flat_map(|_| 0..n).collect();
        let mut out = Vec::with_capacity(self.p.blocks.len());
        for block in &self.p.blocks {
            let mut kv = [base; 2];
            for (slot, lin) in kv.iter_mut().zip([&block.cross_attn.wk, &block.cross_attn.wv]) {
                let proj = lin.forward(tape, &self.store, base)?;
                let mut x = if frames.len() == 1 {
                    proj
                } else {
                    tape.gather_rows(proj, tile.clone())?
                };
                if let Some((ww, f)) = weather {
                    let w = tape.param(&self.store, lin.w);
                    let eff = tape.matmul(ww, w)?;
                    let fw = tape.matmul(f, eff)?;
                    x = tape.add(x, fw)?;
                }
                *slot = x;
            }
            out.push((kv[0], kv[1]));
        }
        Ok(out)
    }

    /// Runs the layers. `kv[i]` holds layer i's projected memory keys and
    /// values; `memory_block[s]` selects sample s's block of memory rows.
    fn layers<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        mut x: Var,
        layout: &Layout,
        kv: &[(Var, Var)],
        memory_block: &[usize],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let n = self.graph.len();
        let self_groups: Vec<AttnGroup> = layout
            .starts
            .iter()
            .zip(&layout.lens)
            .map(|(&s, &l)| AttnGroup {
                q_start: s,
                q_len: l,
                k_start: s,
                k_len: l,
            })
            .collect();
        let cross_groups: Vec<AttnGroup> = self_groups
            .iter()
            .zip(memory_block)
            .map(|(g, &b)| AttnGroup {
                k_start: b * n,
                k_len: n,
                ..*g
            })
            .collect();
        for (block, &(k, v)) in self.p.blocks.iter().zip(kv) {
            let spec = AttnSpec {
                heads: self.heads(),
                groups: self_groups.clone(),
                key_mask: None,
            };
            let a = block.self_attn.forward(tape, &self.store, x, x, spec)?;
            let a = self.dropout(tape, a, rng);
            let r = tape.add(x, a)?;
            x = block.ln1.forward(tape, &self.store, r)?;

            let spec = AttnSpec {
                heads: self.heads(),
                groups: cross_groups.clone(),
                key_mask: None,
            };
            let c = block.cross_attn.forward_projected(tape, &self.store, x, k, v, spec)?;
            let c = self.dropout(tape, c, rng);
            let r = tape.add(x, c)?;
            x = block.ln2.forward(tape, &self.store, r)?;

            let h = block.ff1.forward(tape, &self.store, x)?;
            let h = tape.relu(h);
            let f = block.ff2.forward(tape, &self.store, h)?;
            let f = self.dropout(tape, f, rng);
            let r = tape.add(x, f)?;
            x = block.ln3.forward(tape, &self.store, r)?;
        }
        Ok(x)
    }

    /// Scores of the neighbour tokens, in adjacency order.
    fn neighbour_scores<'a>(&'a self, tape: &mut Tape<'a>, x: Var, layout: &Layout) -> Result<Var, ModelError> {
        let idx: Vec<usize> = layout
            .starts
            .iter()
            .zip(&layout.lens)
            .flat_map(|(&s, &l)| s + 2..s + l)
            .collect();
        let picked = tape.gather_rows(x, idx)?;
        Ok(self.p.head.forward(tape, &self.store, picked)?)
    }

    fn frame_key(f: Option<&Arc<WeatherFrame>>) -> Option<usize> {
        f.map(|f| f.step)
    }

    /// Neighbour scores for one sample, rebuilding the memory from scratch.
    /// Cost grows with the node count and the weather width.
    pub fn scores_uncached(&self, s: &Sample) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let (x, layout) = self.queries(&mut tape, &[s], &mut None)?;
        let kv = self.memory_kv(&mut tape, &[s.frame.as_deref()])?;
        let x = self.layers(&mut tape, x, &layout, &kv, &[0], &mut None)?;
        let out = self.neighbour_scores(&mut tape, x, &layout)?;
        Ok(tape.value(out).data.clone())
    }

    /// Neighbour scores reusing the projected memory of the sample's weather
    /// frame when it matches the previous call.
    pub fn scores_cached(&self, s: &Sample) -> Result<Vec<f64>, ModelError> {
        self.check_frame(s.frame.as_deref())?;
        let key = if self.cfg.weather_features > 0 {
            Self::frame_key(s.frame.as_ref())
        } else {
            None
        };
        let mut guard = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if !matches!(&*guard, Some(c) if c.step == key) {
            let mut tape = Tape::new();
            let kv = self.memory_kv(&mut tape, &[s.frame.as_deref()])?;
            let kv = kv
                .into_iter()
                .map(|(k, v)| (tape.value(k).clone(), tape.value(v).clone()))
                .collect();
            *guard = Some(MemoryCache { step: key, kv });
        }
        let cache = guard.as_ref().expect("filled above");
        let mut tape = Tape::new();
        let (x, layout) = self.queries(&mut tape, &[s], &mut None)?;
        let kv: Vec<(Var, Var)> = cache.kv.iter().map(|(k, v)| (tape.leaf_ref(k), tape.leaf_ref(v))).collect();
        let x = self.layers(&mut tape, x, &layout, &kv, &[0], &mut None)?;
        let out = self.neighbour_scores(&mut tape, x, &layout)?;
        Ok(tape.value(out).data.clone())
    }

    pub fn clear_cache(&self) {
        *self.cache.lock().unwrap_or_else(|e| e.into_inner()) = None;
    }
}

impl NextNodePredictor for Transformer {
    /// Falls back to uniform probabilities if the sample's weather does not
    /// fit the model; `scores_cached` reports that case as an error.
    fn predict_next(&self, s: &Sample) -> Vec<(usize, f64)> {
        let nb = &self.graph.neighbors[s.current_node];
        match self.scores_cached(s) {
            Ok(scores) => softmax_over(nb, &scores),
            Err(e) => {
                log::warn!("transformer prediction failed: {e}");
                softmax_over(nb, &vec![0.0; nb.len()])
            }
        }
    }
}

impl Learner for Transformer {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.clear_cache();
        &mut self.store
    }

    fn forward_batch<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &[&Sample],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchLogits, ModelError> {
        let mut rng = dropout;
        let (x, layout) = self.queries(tape, batch, &mut rng)?;

        // one memory block per distinct frame in the batch
        let mut blocks: HashMap<Option<usize>, usize> = HashMap::new();
        let mut frames: Vec<Option<&WeatherFrame>> = Vec::new();
        let memory_block: Vec<usize> = batch
            .iter()
            .map(|s| {
                let key = if self.cfg.weather_features > 0 {
                    Self::frame_key(s.frame.as_ref())
                } else {
                    None
                };
                *blocks.entry(key).or_insert_with(|| {
                    frames.push(s.frame.as_deref());
                    frames.len() - 1
                })
            })
            .collect();
        let kv = self.memory_kv(tape, &frames)?;
        let x = self.layers(tape, x, &layout, &kv, &memory_block, &mut rng)?;
        let scores = self.neighbour_scores(tape, x, &layout)?;

        let width = self.graph.max_degree();
        let mut positions = Vec::new();
        let mut allowed = vec![false; batch.len() * width];
        let mut targets = Vec::with_capacity(batch.len());
        let mut severity = batch
            .iter()
            .all(|s| s.frame.is_some())
            .then(|| vec![0.0; batch.len() * width * SEVERITY_FEATURES]);
        for (r, s) in batch.iter().enumerate() {
            let nb = &self.graph.neighbors[s.current_node];
            for (j, &n) in nb.iter().enumerate() {
                positions.push(r * width + j);
                allowed[r * width + j] = true;
                if let (Some(sev), Some(f)) = (severity.as_mut(), s.frame.as_ref()) {
                    let at = (r * width + j) * SEVERITY_FEATURES;
                    sev[at..at + SEVERITY_FEATURES].copy_from_slice(&f.severity(n));
                }
            }
            let t = nb.binary_search(&s.label).map_err(|_| ModelError::LabelNotNeighbor {
                request_id: s.request_id,
                current: s.current_node,
                label: s.label,
            })?;
            targets.push(t);
        }
        let logits = tape.place(scores, vec![batch.len(), width], positions)?;
        Ok(BatchLogits {
            logits,
            classes: width,
            targets,
            allowed,
            severity,
        })
    }
}
