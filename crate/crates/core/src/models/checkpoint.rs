//! Binary model files.
//!
//! Layout: the 8-byte magic `SKYRMDL1`, a little-endian `u32` header length,
//! a JSON header (model kind, configuration, graph, parameter names and
//! shapes), then every parameter as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ffnn::Ffnn;
use super::greedy::Greedy;
use super::knn::{Knn, KnnPoint};
use super::transformer::{Transformer, TransformerConfig};
use super::{GraphView, ModelError, ModelKind, TrainedModel};
use crate::neural::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"SKYRMDL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: ModelKind,
    graph: GraphView,
    payload_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ffnn_hidden: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transformer: Option<TransformerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knn_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    knn_points: Vec<KnnPoint>,
    tensors: Vec<TensorMeta>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut header = Header {
        version: FORMAT_VERSION,
        kind: model.kind(),
        graph: model.graph().clone(),
        payload_scale: 1.0,
        ffnn_hidden: None,
        transformer: None,
        knn_k: None,
        knn_points: Vec::new(),
        tensors: Vec::new(),
    };
    let store = match model {
        TrainedModel::Greedy(_) => None,
        TrainedModel::Knn(m) => {
            header.payload_scale = m.payload_scale;
            header.knn_k = Some(m.k);
            header.knn_points = m.points.clone();
            None
        }
        TrainedModel::Ffnn(m) => {
            header.payload_scale = m.payload_scale;
            header.ffnn_hidden = Some(m.hidden);
            Some(&m.store)
        }
        TrainedModel::Transformer(m) => {
            header.payload_scale = m.payload_scale;
            header.transformer = Some(m.cfg.clone());
            Some(&m.store)
        }
    };
    if let Some(store) = store {
        header.tensors = store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect();
    }
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + store.map_or(0, |s| 8 * s.scalar_count()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in store.map(ParamStore::tensors).unwrap_or_default() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel, ModelError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    let mut data = &bytes[12 + len..];
    let mut named = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let count: usize = meta.shape.iter().product();
        if data.len() < 8 * count {
            return Err(bad(format!("truncated data for {}", meta.name)));
        }
        let values = data[..8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * count..];
        named.push((meta.name, Tensor::new(meta.shape, values)));
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let graph = header.graph;
    match header.kind {
        ModelKind::Greedy => Ok(TrainedModel::Greedy(Greedy::new(graph))),
        ModelKind::Knn => Ok(TrainedModel::Knn(Knn {
            graph,
            k: header.knn_k.ok_or_else(|| bad("knn without k"))?,
            payload_scale: header.payload_scale,
            points: header.knn_points,
        })),
        ModelKind::Ffnn => {
            let hidden = header.ffnn_hidden.ok_or_else(|| bad("ffnn without hidden sizes"))?;
            let mut m = Ffnn::new(graph, hidden, header.payload_scale, 0);
            m.store.load(named).map_err(bad)?;
            Ok(TrainedModel::Ffnn(m))
        }
        ModelKind::Transformer => {
            let cfg = header.transformer.ok_or_else(|| bad("transformer without config"))?;
            let mut m = Transformer::with_config(graph, cfg, header.payload_scale)?;
            m.store.load(named).map_err(bad)?;
            Ok(TrainedModel::Transformer(m))
        }
    }
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<u64, ModelError> {
    let bytes = to_bytes(model);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load(path: &Path) -> Result<TrainedModel, ModelError> {
    from_bytes(&std::fs::read(path)?)
}
