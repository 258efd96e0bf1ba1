//! Benchmarks, run configs and the end-to-end pipeline.

pub mod bench;
pub mod pipeline;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::fleetsim::SimConfig;
use crate::models::{ModelConfig, ModelKind, SplitConfig, TrainConfig};
use crate::neural::OptimConfig;
use crate::skynet::NetConfig;

pub use bench::{
    bench_inference, bench_scaling, log_log_slope, BenchReport, LatencySubject, ModelFamily, PlannerSetup,
    ScalingPoint, ScalingTable, TimingConfig,
};
pub use pipeline::{run_pipeline, Manifest, ManifestEntry, PipelineOutput, RolloutSummary};

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenNet,
    GenWeather,
    Simulate,
    Train,
    Eval,
    Bench,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::GenNet => "gen-net",
            Stage::GenWeather => "gen-weather",
            Stage::Simulate => "simulate",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("benchmark: {0}")]
    Bench(String),
}

impl HarnessError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherConfig {
    pub horizon_s: f64,
    pub interval_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestConfig {
    pub count: usize,
    /// Uniform payload range in kg.
    pub payload_range: (f64, f64),
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub drones: usize,
    pub seed: u64,
}

/// Rollout episodes drawn fresh from the request generator, so none of them
/// appear in the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub count: usize,
    pub seed: u64,
    /// Step budget as a multiple of the optimal hop count.
    pub max_steps_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub timing: TimingConfig,
    /// Episodes (from the front of the episode set) used as bench instances.
    pub instances: usize,
}

/// Everything needed to reproduce a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub net: NetConfig,
    pub weather: WeatherConfig,
    /// Existing weather JSONL to simulate against instead of generating one.
    #[serde(default)]
    pub weather_file: Option<PathBuf>,
    pub requests: RequestConfig,
    pub fleet: FleetConfig,
    pub sim: SimConfig,
    pub split: SplitConfig,
    pub models: Vec<ModelKind>,
    /// Architecture shared by every model; `kind` is overridden per model.
    pub model: ModelConfig,
    pub ffnn_train: TrainConfig,
    pub transformer_train: TrainConfig,
    pub episodes: EpisodeConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// 50 nodes, 500 requests over 24 h, 20 drones, all four models.
    pub fn desk(out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            out_dir: out_dir.into(),
            net: NetConfig::default(),
            weather: WeatherConfig {
                horizon_s: 24.0 * 3600.0,
                interval_s: 1800.0,
                seed: 7,
            },
            weather_file: None,
            requests: RequestConfig {
                count: 500,
                payload_range: (0.5, 5.0),
                seed: 7,
            },
            fleet: FleetConfig { drones: 20, seed: 7 },
            sim: SimConfig::default(),
            split: SplitConfig::default(),
            models: vec![ModelKind::Greedy, ModelKind::Knn, ModelKind::Ffnn, ModelKind::Transformer],
            model: ModelConfig::default(),
            ffnn_train: TrainConfig {
                optim: OptimConfig {
                    lr: 5e-3,
                    ..OptimConfig::default()
                },
                ..TrainConfig::default()
            },
            transformer_train: TrainConfig::default(),
            episodes: EpisodeConfig {
                count: 100,
                seed: 1007,
                max_steps_factor: 4,
            },
            bench: BenchConfig {
                timing: TimingConfig::default(),
                instances: 10,
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.models.is_empty() {
            return bad("no models to train".into());
        }
        if self.fleet.drones == 0 {
            return bad("fleet needs at least one drone".into());
        }
        if self.episodes.count == 0 || self.episodes.max_steps_factor == 0 {
            return bad("episodes.count and episodes.max_steps_factor must be >= 1".into());
        }
        if self.bench.instances == 0 || self.bench.instances > self.episodes.count {
            return bad(format!(
                "bench.instances must be in 1..={}, got {}",
                self.episodes.count, self.bench.instances
            ));
        }
        self.bench.timing.validate()?;
        self.net.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        self.model.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        for t in [&self.ffnn_train, &self.transformer_train] {
            t.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn train_config(&self, kind: ModelKind) -> &TrainConfig {
        match kind {
            ModelKind::Transformer => &self.transformer_train,
            _ => &self.ffnn_train,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
