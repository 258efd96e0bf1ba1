//! gen-net → gen-weather → simulate → train → eval → bench, with every
//! intermediate written to the run directory and hashed into a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bench::{bench_inference, BenchReport, PlannerSetup};
use super::{HarnessError, RunConfig, Stage};
use crate::fleetsim::{
    check_battery_log, dataset_to_jsonl, generate_requests, initial_fleet, read_dataset, run_simulation,
    verify_label, weather_time, write_dataset, NearestEarliest, RouteRecord,
};
use crate::models::{
    checkpoint, encode_dataset, evaluate, rollout, split_records, train, train::write_curves, CurvePoint, Episode,
    EvalReport, LatencyStats, ModelConfig, ModelKind, Rollout, Sample, TrainedModel, Transformer,
};
use crate::planner::plan_request;
use crate::skynet::{generate_network, Network};
use crate::weathersim::{load_weather, synth_weather, write_weather, WeatherSeries};

/// Files whose content depends on wall-clock time; listed in the manifest
/// but not hashed.
const TIMING_FILES: [&str; 2] = ["eval_latency.json", "bench.json"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Hash of the run config with `out_dir` cleared, so a replay into a
    /// different directory hashes the same.
    pub config_sha256: String,
    /// Every non-timing artifact, sorted by path.
    pub artifacts: Vec<ManifestEntry>,
    pub timing: Vec<String>,
}

impl Manifest {
    pub fn hashes(&self) -> BTreeMap<&str, &str> {
        self.artifacts.iter().map(|e| (e.path.as_str(), e.sha256.as_str())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub episodes: usize,
    pub reached: usize,
    pub reach_rate: f64,
    /// Mean of realised duration over optimal duration, reached episodes
    /// only; `None` when nothing was reached.
    pub mean_cost_ratio: Option<f64>,
    pub worst_cost_ratio: Option<f64>,
}

/// Classification metrics without the timing part of [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub top_confusions: Vec<crate::models::Confusion>,
    pub rollout: RolloutSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub bytes: BTreeMap<ModelKind, u64>,
    /// Checkpoint size of the weather-aware transformer minus an otherwise
    /// identical weather-blind one.
    pub weather_overhead_bytes: i64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub eval: BTreeMap<ModelKind, ModelEval>,
    pub latency: BTreeMap<ModelKind, LatencyStats>,
    pub bench: Vec<BenchReport>,
    pub curves: BTreeMap<ModelKind, Vec<CurvePoint>>,
    pub sizes: ModelSizes,
}

fn fail(stage: Stage) -> impl Fn(String) -> HarnessError {
    move |message| HarnessError::Stage { stage, message }
}

fn write(stage: Stage, path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| fail(stage)(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Weather JSONL read by the simulate stage.
pub fn weather_path(cfg: &RunConfig) -> PathBuf {
    cfg.weather_file.clone().unwrap_or_else(|| cfg.out_dir.join("weather.jsonl"))
}

fn gen_net(cfg: &RunConfig) -> Result<Network, HarnessError> {
    let err = fail(Stage::GenNet);
    fs::create_dir_all(&cfg.out_dir).map_err(|e| err(format!("{}: {e}", cfg.out_dir.display())))?;
    let net = generate_network(&cfg.net).map_err(|e| err(e.to_string()))?;
    write(Stage::GenNet, &cfg.out_dir.join("net.json"), &net.to_json())?;
    Ok(net)
}

fn gen_weather(cfg: &RunConfig, net: &Network) -> Result<(), HarnessError> {
    if cfg.weather_file.is_some() {
        return Ok(());
    }
    let err = fail(Stage::GenWeather);
    let w = &cfg.weather;
    let series = synth_weather(net, w.horizon_s, w.interval_s, w.seed).map_err(|e| err(e.to_string()))?;
    write_weather(&series, &weather_path(cfg)).map_err(|e| err(e.to_string()))
}

/// Runs the fleet and checks every stage contract on its output: segment
/// chaining, the battery log, and label reproducibility by re-planning.
fn simulate(cfg: &RunConfig) -> Result<(Network, WeatherSeries, Vec<RouteRecord>), HarnessError> {
    let err = fail(Stage::Simulate);
    let net_path = cfg.out_dir.join("net.json");
    let text = fs::read_to_string(&net_path).map_err(|e| err(format!("{}: {e}", net_path.display())))?;
    let net = Network::from_json(&text).map_err(|e| err(e.to_string()))?;
    let wx = load_weather(&weather_path(cfg)).map_err(|e| err(e.to_string()))?;
    if wx.node_count() != net.len() {
        return Err(err(format!(
            "weather covers {} nodes, network has {}",
            wx.node_count(),
            net.len()
        )));
    }
    let r = &cfg.requests;
    let requests = generate_requests(&net, r.count, wx.horizon_s(), r.payload_range, cfg.sim.drone.max_payload, r.seed)
        .map_err(|e| err(e.to_string()))?;
    let fleet = initial_fleet(&net, cfg.fleet.drones, &cfg.sim.drone, cfg.fleet.seed);
    let out = run_simulation(&net, &wx, &fleet, &requests, &cfg.sim, &NearestEarliest).map_err(|e| err(e.to_string()))?;
    for rec in &out.records {
        rec.check_chain(&net).map_err(&err)?;
        verify_label(rec, &net, &wx, &cfg.sim.drone).map_err(&err)?;
    }
    check_battery_log(&out.events, &fleet, cfg.sim.drone.battery_capacity).map_err(&err)?;

    let dir = &cfg.out_dir;
    let requests_jsonl: String = requests
        .iter()
        .map(|q| serde_json::to_string(q).expect("request serializes") + "\n")
        .collect();
    write(Stage::Simulate, &dir.join("requests.jsonl"), &requests_jsonl)?;
    write_dataset(&out.records, &dir.join("routes.jsonl")).map_err(|e| err(e.to_string()))?;
    let report = serde_json::json!({ "report": out.report, "failures": out.failures });
    write(Stage::Simulate, &dir.join("sim_report.json"), &to_json(&report))?;
    let events: String = out
        .events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect();
    write(Stage::Simulate, &dir.join("battery_events.jsonl"), &events)?;

    // what later stages read is what was written
    let records = read_dataset(&dir.join("routes.jsonl")).map_err(|e| err(e.to_string()))?;
    if dataset_to_jsonl(&records) != dataset_to_jsonl(&out.records) {
        return Err(err("routes.jsonl does not round-trip".into()));
    }
    Ok((net, wx, records))
}

struct Splits {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn train_stage(
    cfg: &RunConfig,
    net: &Network,
    wx: &WeatherSeries,
    records: &[RouteRecord],
) -> Result<(Splits, BTreeMap<ModelKind, Vec<CurvePoint>>), HarnessError> {
    let err = fail(Stage::Train);
    let split = split_records(records, &cfg.split).map_err(|e| err(e.to_string()))?;
    let ids = |rs: &[RouteRecord]| rs.iter().map(|r| r.request_id).collect::<Vec<_>>();
    let split_json = serde_json::json!({
        "train": ids(&split.train),
        "val": ids(&split.val),
        "test": ids(&split.test),
    });
    write(Stage::Train, &cfg.out_dir.join("split.json"), &to_json(&split_json))?;
    // the weather-blind models ignore the frames
    let enc = |rs: &[RouteRecord]| encode_dataset(rs, net, wx, true).map_err(|e| err(e.to_string()));
    let splits = Splits {
        train: enc(&split.train)?,
        val: enc(&split.val)?,
        test: enc(&split.test)?,
    };
    let graph = crate::models::GraphView::from_network(net);
    let models_dir = cfg.out_dir.join("models");
    fs::create_dir_all(&models_dir).map_err(|e| err(format!("{}: {e}", models_dir.display())))?;
    let mut curves = BTreeMap::new();
    for &kind in &cfg.models {
        let mc = ModelConfig {
            kind,
            ..cfg.model.clone()
        };
        log::info!("training {kind} on {} samples", splits.train.len());
        let (model, c) = train(&mc, cfg.train_config(kind), &graph, &splits.train, &splits.val)
            .map_err(|e| err(format!("{kind}: {e}")))?;
        checkpoint::save(&model, &models_dir.join(format!("{kind}.bin"))).map_err(|e| err(e.to_string()))?;
        if !c.is_empty() {
            write_curves(&c, &cfg.out_dir.join(format!("curves_{kind}.csv"))).map_err(|e| err(e.to_string()))?;
        }
        curves.insert(kind, c);
    }
    Ok((splits, curves))
}

/// Fresh episodes with their optimal routes.
pub fn episodes(
    cfg: &RunConfig,
    net: &Network,
    wx: &WeatherSeries,
) -> Result<Vec<(Episode, crate::planner::Route)>, String> {
    let e = &cfg.episodes;
    let reqs = generate_requests(net, e.count, wx.horizon_s(), cfg.requests.payload_range, cfg.sim.drone.max_payload, e.seed)
        .map_err(|e| e.to_string())?;
    reqs.iter()
        .map(|q| {
            let t = weather_time(wx, q.request_time);
            let opt = plan_request(net, wx, &cfg.sim.drone, q.payload_kg, q.origin, q.destination, t).map_err(|e| e.to_string())?;
            Ok((
                Episode {
                    origin: q.origin,
                    dest: q.destination,
                    payload_kg: q.payload_kg,
                    t0: q.request_time,
                    max_steps: e.max_steps_factor * opt.hops().max(1),
                },
                opt,
            ))
        })
        .collect()
}

/// Rolls `model` out on every episode and compares against the optimum.
pub fn rollout_quality(
    model: &TrainedModel,
    net: &Network,
    wx: &WeatherSeries,
    cfg: &RunConfig,
    eps: &[(Episode, crate::planner::Route)],
) -> Result<RolloutSummary, String> {
    let mut ratios = Vec::new();
    for (ep, opt) in eps {
        match rollout(model, net, wx, &cfg.sim.drone, model.weather_aware(), ep).map_err(|e| e.to_string())? {
            Rollout::Reached(r) => ratios.push(r.total_duration / opt.total_duration),
            Rollout::Failure { .. } => {}
        }
    }
    let reached = ratios.len();
    Ok(RolloutSummary {
        episodes: eps.len(),
        reached,
        reach_rate: reached as f64 / eps.len().max(1) as f64,
        mean_cost_ratio: (reached > 0).then(|| ratios.iter().sum::<f64>() / reached as f64),
        worst_cost_ratio: ratios.iter().copied().max_by(f64::total_cmp),
    })
}

type EvalOut = (BTreeMap<ModelKind, ModelEval>, BTreeMap<ModelKind, LatencyStats>, Vec<TrainedModel>);

fn eval_stage(
    cfg: &RunConfig,
    net: &Network,
    wx: &WeatherSeries,
    test: &[Sample],
    eps: &[(Episode, crate::planner::Route)],
) -> Result<EvalOut, HarnessError> {
    let err = fail(Stage::Eval);
    let mut evals = BTreeMap::new();
    let mut latency = BTreeMap::new();
    let mut models = Vec::new();
    for &kind in &cfg.models {
        let model = checkpoint::load(&cfg.out_dir.join("models").join(format!("{kind}.bin"))).map_err(|e| err(e.to_string()))?;
        let EvalReport {
            samples,
            accuracy,
            precision,
            recall,
            f1,
            top_confusions,
            latency: lat,
        } = evaluate(&model, test);
        let rollout = rollout_quality(&model, net, wx, cfg, eps).map_err(&err)?;
        log::info!("{kind}: accuracy {accuracy:.4}, rollouts reached {}/{}", rollout.reached, rollout.episodes);
        evals.insert(
            kind,
            ModelEval {
                samples,
                accuracy,
                precision,
                recall,
                f1,
                top_confusions,
                rollout,
            },
        );
        latency.insert(kind, lat);
        models.push(model);
    }
    write(Stage::Eval, &cfg.out_dir.join("eval.json"), &to_json(&evals))?;
    write(Stage::Eval, &cfg.out_dir.join("eval_latency.json"), &to_json(&latency))?;
    Ok((evals, latency, models))
}

fn bench_stage(
    cfg: &RunConfig,
    net: &Network,
    wx: &WeatherSeries,
    models: &[TrainedModel],
    eps: &[(Episode, crate::planner::Route)],
) -> Result<(Vec<BenchReport>, ModelSizes), HarnessError> {
    let err = fail(Stage::Bench);
    let setup = PlannerSetup {
        net,
        wx,
        drone: &cfg.sim.drone,
    };
    let instances: Vec<Episode> = eps.iter().take(cfg.bench.instances).map(|(e, _)| *e).collect();
    let mut reports = Vec::new();
    let mut bytes = BTreeMap::new();
    for m in models {
        reports.push(bench_inference(m, &setup, &instances, &cfg.bench.timing).map_err(|e| err(e.to_string()))?);
        bytes.insert(m.kind(), checkpoint::to_bytes(m).len() as u64);
    }
    let graph = crate::models::GraphView::from_network(net);
    let size_of = |w: usize| -> Result<i64, HarnessError> {
        let mc = ModelConfig {
            kind: ModelKind::Transformer,
            weather_features: w,
            ..cfg.model.clone()
        };
        let t = Transformer::new(graph.clone(), &mc, 1.0).map_err(|e| err(e.to_string()))?;
        Ok(checkpoint::to_bytes(&TrainedModel::Transformer(t)).len() as i64)
    };
    let sizes = ModelSizes {
        bytes,
        weather_overhead_bytes: size_of(cfg.model.weather_features)? - size_of(0)?,
    };
    write(Stage::Bench, &cfg.out_dir.join("bench.json"), &to_json(&reports))?;
    write(Stage::Bench, &cfg.out_dir.join("model_sizes.json"), &to_json(&sizes))?;
    Ok((reports, sizes))
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes every file under the run directory except the manifest itself and
/// the timing files.
pub fn build_manifest(cfg: &RunConfig) -> Result<Manifest, HarnessError> {
    let err = |e: std::io::Error| fail(Stage::Bench)(format!("manifest: {e}"));
    let mut files = Vec::new();
    collect_files(&cfg.out_dir, &cfg.out_dir, &mut files).map_err(err)?;
    files.sort();
    let mut artifacts = Vec::new();
    let mut timing = Vec::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        if name == "manifest.json" || name == "run_config.json" {
            continue;
        }
        if TIMING_FILES.contains(&name.as_str()) {
            timing.push(name);
            continue;
        }
        let bytes = fs::read(cfg.out_dir.join(&rel)).map_err(err)?;
        artifacts.push(ManifestEntry {
            path: name,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let canonical = RunConfig {
        out_dir: PathBuf::new(),
        ..cfg.clone()
    };
    Ok(Manifest {
        config_sha256: sha256_hex(canonical.to_json().as_bytes()),
        artifacts,
        timing,
    })
}

/// Runs every stage in order. The first failing stage aborts the run and
/// is named in the error.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput, HarnessError> {
    cfg.validate()?;
    let net = gen_net(cfg)?;
    write(Stage::GenNet, &cfg.out_dir.join("run_config.json"), &cfg.to_json())?;
    gen_weather(cfg, &net)?;
    let (net, wx, records) = simulate(cfg)?;
    let (splits, curves) = train_stage(cfg, &net, &wx, &records)?;
    let eps = episodes(cfg, &net, &wx).map_err(fail(Stage::Eval))?;
    let (eval, latency, models) = eval_stage(cfg, &net, &wx, &splits.test, &eps)?;
    let (bench, sizes) = bench_stage(cfg, &net, &wx, &models, &eps)?;
    let manifest = build_manifest(cfg)?;
    write(Stage::Bench, &cfg.out_dir.join("manifest.json"), &to_json(&manifest))?;
    Ok(PipelineOutput {
        out_dir: cfg.out_dir.clone(),
        manifest,
        eval,
        latency,
        bench,
        curves,
        sizes,
    })
}
