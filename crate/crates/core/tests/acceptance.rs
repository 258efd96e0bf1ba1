//! End-to-end acceptance run: eight criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the desk pipeline is trained
//! once and shared by the accuracy, rollout and determinism checks.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skyroute_core::fleetsim::{
    check_battery_log, dataset_from_jsonl, dataset_to_jsonl, generate_requests, initial_fleet, run_simulation,
    verify_label, NearestEarliest,
};
use skyroute_core::harness::{bench::scaled_network, bench_inference, bench_scaling, pipeline, run_pipeline};
use skyroute_core::harness::{ModelFamily, PipelineOutput, PlannerSetup, RunConfig, TimingConfig};
use skyroute_core::models::train::Learner;
use skyroute_core::models::{
    encode_dataset, GraphView, ModelConfig, ModelKind, Sample, TrainedModel, Transformer, SEVERITY_FEATURES,
};
use skyroute_core::models::Ffnn;
use skyroute_core::neural::{
    adamw_step, clip_grad_norm, loss, lr_factor, AdamState, AttnGroup, AttnSpec, LossConfig, OptimConfig,
    ParamStore, ScheduleConfig, Tape, Tensor, Var,
};
use skyroute_core::planner::{dijkstra, plan_request, WeatherCost};
use skyroute_core::skynet::{generate_network, NetConfig, Network};
use skyroute_core::weathersim::synth_weather;
use skyroute_core::{EdgeCost, WeatherSeries};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- 1: planner

/// Cheapest simple path by depth-first enumeration, pricing edges the same
/// way the planners do and skipping infeasible ones.
fn exhaustive(net: &Network, cost: &dyn Fn(usize, usize, f64) -> EdgeCost, o: usize, d: usize) -> Option<f64> {
    fn go(
        net: &Network,
        cost: &dyn Fn(usize, usize, f64) -> EdgeCost,
        u: usize,
        d: usize,
        acc: f64,
        seen: &mut [bool],
        best: &mut Option<f64>,
    ) {
        if u == d {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        for link in net.neighbors(u) {
            if seen[link.to] {
                continue;
            }
            let c = cost(u, link.to, link.distance);
            if !c.feasible() {
                continue;
            }
            seen[link.to] = true;
            go(net, cost, link.to, d, acc + c.duration, seen, best);
            seen[link.to] = false;
        }
    }
    let mut seen = vec![false; net.len()];
    seen[o] = true;
    let mut best = None;
    go(net, cost, o, d, 0.0, &mut seen, &mut best);
    best
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn planner_optimality() -> Outcome {
    let drone = skyroute_core::DroneSpec::default();
    let (mut exhaustive_checked, mut unreachable) = (0, 0);
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let n = 15 + (i as usize % 16);
        let net = generate_network(&NetConfig {
            node_count: n,
            extra_edges: n / 2,
            seed: 10_000 + i,
            ..NetConfig::default()
        })
        .map_err(|e| format!("instance {i}: {e}"))?;
        let wx = synth_weather(&net, 6.0 * 3600.0, 1800.0, 20_000 + i).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let o = rng.random_range(0..n);
        let d = (o + rng.random_range(1..n)) % n;
        let payload = rng.random_range(0.5..5.0);
        let t = (rng.random_range(0..wx.steps()) as f64) * wx.interval_s();
        let wc = WeatherCost::at_time(&net, &wx, &drone, payload, t).map_err(|e| e.to_string())?;
        let cost = |u: usize, v: usize, dist: f64| wc.cost(u, v, dist);
        let a = plan_request(&net, &wx, &drone, payload, o, d, t).ok();
        let dj = dijkstra(&net, cost, o, d).ok();
        match (&a, &dj) {
            (Some(a), Some(dj)) => {
                let r = rel(a.total_duration, dj.total_duration);
                worst = worst.max(r);
                ensure!(r <= 1e-9, "instance {i}: A* {} vs Dijkstra {}", a.total_duration, dj.total_duration);
                a.check(&net, o, d).map_err(|e| format!("instance {i}: {e}"))?;
            }
            (None, None) => unreachable += 1,
            _ => return Err(format!("instance {i}: only one planner found a route")),
        }
        if n == 15 {
            let ex = exhaustive(&net, &cost, o, d);
            match (ex, &dj) {
                (Some(ex), Some(dj)) => ensure!(
                    rel(ex, dj.total_duration) <= 1e-9,
                    "instance {i}: exhaustive {ex} vs Dijkstra {}",
                    dj.total_duration
                ),
                (None, None) => {}
                _ => return Err(format!("instance {i}: exhaustive and Dijkstra disagree on reachability")),
            }
            exhaustive_checked += 1;
        }
    }
    Ok(format!(
        "1000 instances, worst A*/Dijkstra rel diff {worst:.1e}, {exhaustive_checked} checked exhaustively, {unreachable} unreachable in both"
    ))
}

// ------------------------------------------------------------ 2: gradients

const H: f64 = 1e-5;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Probes `probes` random input coordinates of a tape graph built on fresh
/// leaves; non-scalar outputs are reduced with fixed random weights.
fn probe_tape<F>(inputs: Vec<Tensor>, probes: usize, seed: u64, build: F) -> Result<f64, String>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Option<Vec<f64>> = None;
    let mut eval = |inputs: &[Tensor], rng: &mut ChaCha8Rng, grads: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let n = tape.value(out).len();
        let w = weights.get_or_insert_with(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let root = tape.weighted_sum(out, w.clone()).unwrap();
        let value = tape.value(root).data[0];
        if !grads {
            return (value, Vec::new());
        }
        tape.backward(root).unwrap();
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| tape.grad(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        (value, g)
    };
    let (_, analytic) = eval(&inputs, &mut rng, true);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.random_range(0..inputs.len());
        let j = rng.random_range(0..inputs[i].len());
        let mut shifted = inputs.clone();
        shifted[i].data[j] += H;
        let up = eval(&shifted, &mut rng, false).0;
        shifted[i].data[j] -= 2.0 * H;
        let down = eval(&shifted, &mut rng, false).0;
        let e = rel_err(analytic[i][j], (up - down) / (2.0 * H));
        ensure!(e < 1e-4, "input {i}[{j}]: relative error {e:.2e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Probes the free-standing loss, whose gradient is computed in closed form
/// rather than on a tape.
fn probe_loss(lambda: f64, probes: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, classes) = (4, 5);
    let logits: Vec<f64> = (0..rows * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
    let allowed: Vec<bool> = (0..rows * classes).map(|k| k % classes == 0 || rng.random_bool(0.7)).collect();
    let targets: Vec<usize> = (0..rows)
        .map(|r| {
            let ok: Vec<usize> = (0..classes).filter(|&c| allowed[r * classes + c]).collect();
            ok[rng.random_range(0..ok.len())]
        })
        .collect();
    let features = SEVERITY_FEATURES;
    let severity: Vec<f64> = (0..rows * classes * features).map(|_| rng.random_range(0.0..1.0)).collect();
    let cfg = LossConfig {
        lambda,
        weather_weights: (0..features).map(|_| rng.random_range(0.1..1.0)).collect(),
    };
    let sev = (lambda > 0.0).then_some((severity.as_slice(), features));
    let f = |l: &[f64]| loss(l, classes, &targets, &allowed, sev, &cfg).map_err(|e| e.to_string());
    let (_, grad) = f(&logits)?;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let j = rng.random_range(0..logits.len());
        let mut l = logits.clone();
        l[j] += H;
        let up = f(&l)?.0;
        l[j] -= 2.0 * H;
        let down = f(&l)?.0;
        let e = rel_err(grad[j], (up - down) / (2.0 * H));
        ensure!(e < 1e-4, "logit {j}: relative error {e:.2e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

/// A handful of encoded samples with weather frames on a small network.
fn small_samples(nodes: usize, requests: usize, seed: u64) -> Result<(Network, Vec<Sample>), String> {
    let net = generate_network(&NetConfig {
        node_count: nodes,
        extra_edges: nodes / 2,
        seed,
        ..NetConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let wx = synth_weather(&net, 6.0 * 3600.0, 1800.0, seed).map_err(|e| e.to_string())?;
    let cfg = RunConfig::desk("unused");
    let drone = &cfg.sim.drone;
    let reqs = generate_requests(&net, requests, wx.horizon_s(), (0.5, 5.0), drone.max_payload, seed)
        .map_err(|e| e.to_string())?;
    let fleet = initial_fleet(&net, 4, drone, seed);
    let sim = run_simulation(&net, &wx, &fleet, &reqs, &cfg.sim, &NearestEarliest).map_err(|e| e.to_string())?;
    let samples = encode_dataset(&sim.records, &net, &wx, true).map_err(|e| e.to_string())?;
    Ok((net, samples))
}

/// Parameter gradients of the full two-layer transformer (dropout off)
/// under the weather-penalised loss.
fn probe_transformer(probes: usize, seed: u64) -> Result<f64, String> {
    let (net, samples) = small_samples(12, 6, seed)?;
    let batch: Vec<&Sample> = samples.iter().take(4).collect();
    let cfg = ModelConfig::default();
    let mut model = Transformer::new(GraphView::from_network(&net), &cfg, 5.0).map_err(|e| e.to_string())?;
    let loss_cfg = LossConfig {
        lambda: 0.5,
        weather_weights: vec![1.0; SEVERITY_FEATURES],
    };
    let run = |m: &Transformer, grads: bool| -> Result<(f64, Vec<Vec<f64>>), String> {
        let mut tape = Tape::new();
        let out = m.forward_batch(&mut tape, &batch, None).map_err(|e| e.to_string())?;
        let sev = out.severity.as_ref().ok_or("samples lack weather")?;
        let combined = loss_cfg.combine(sev, SEVERITY_FEATURES).map_err(|e| e.to_string())?;
        let root = tape
            .cross_entropy(out.logits, out.targets.clone(), out.allowed.clone(), Some(combined), loss_cfg.lambda)
            .map_err(|e| e.to_string())?;
        let value = tape.value(root).data[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(root).map_err(|e| e.to_string())?;
        Ok((value, tape.param_grads(m.store())))
    };
    let (_, grads) = run(&model, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let names = model.store().names().to_vec();
    for _ in 0..probes {
        let i = rng.random_range(0..model.store().len());
        let j = rng.random_range(0..model.store().tensors()[i].len());
        let orig = model.store().tensors()[i].data[j];
        model.store_mut().tensors_mut()[i].data[j] = orig + H;
        let up = run(&model, false)?.0;
        model.store_mut().tensors_mut()[i].data[j] = orig - H;
        let down = run(&model, false)?.0;
        model.store_mut().tensors_mut()[i].data[j] = orig;
        let e = rel_err(grads[i][j], (up - down) / (2.0 * H));
        ensure!(e < 1e-4, "{}[{j}]: relative error {e:.2e}", names[i]);
        worst = worst.max(e);
    }
    Ok(worst)
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let linear_in = vec![
        random(vec![5, 6], &mut rng),
        random(vec![6, 4], &mut rng),
        random(vec![4], &mut rng),
    ];
    let linear = probe_tape(linear_in, 20, 21, |t, v| t.linear(v[0], v[1], v[2]).unwrap())
        .map_err(|e| format!("linear: {e}"))?;

    let attn_in = vec![
        random(vec![5, 8], &mut rng),
        random(vec![7, 8], &mut rng),
        random(vec![7, 8], &mut rng),
    ];
    let spec = AttnSpec {
        heads: 2,
        groups: vec![
            AttnGroup {
                q_start: 0,
                q_len: 2,
                k_start: 0,
                k_len: 4,
            },
            AttnGroup {
                q_start: 2,
                q_len: 3,
                k_start: 2,
                k_len: 5,
            },
        ],
        key_mask: Some(vec![true, true, false, true, true, true, false]),
    };
    let attention = probe_tape(attn_in, 20, 22, move |t, v| t.attention(v[0], v[1], v[2], spec.clone()).unwrap())
        .map_err(|e| format!("attention: {e}"))?;

    let plain = probe_loss(0.0, 20, 23).map_err(|e| format!("loss (lambda 0): {e}"))?;
    let penalised = probe_loss(0.8, 20, 24).map_err(|e| format!("loss (lambda 0.8): {e}"))?;
    let composite = probe_transformer(20, 25).map_err(|e| format!("transformer: {e}"))?;
    Ok(format!(
        "100 probes; worst relative error: linear {linear:.1e}, attention {attention:.1e}, loss {plain:.1e} / {penalised:.1e}, transformer {composite:.1e}"
    ))
}

// --------------------------------------------------------- 3: closed forms

fn closed_forms() -> Outcome {
    let sched = ScheduleConfig::new(100, 1000).map_err(|e| e.to_string())?;
    let mid = (sched.warmup_steps + sched.total_steps) / 2;
    for (step, want) in [(0, 0.0), (50, 0.5), (100, 1.0), (mid, 0.5), (1000, 0.0)] {
        let got = lr_factor(step, &sched);
        ensure!((got - want).abs() <= 1e-12, "lr_factor({step}) = {got}, want {want}");
    }

    let cfg = OptimConfig::default();
    let w0 = [0.75, -1.25, 3.0];
    let mut store = ParamStore::new();
    store.add("w", Tensor::new(vec![3], w0.to_vec()));
    let mut state = AdamState::new(&store);
    adamw_step(&mut store, &[vec![0.0; 3]], &mut state, cfg.lr, &cfg).map_err(|e| e.to_string())?;
    for (got, w) in store.tensors()[0].data.iter().zip(w0) {
        let want = w * (1.0 - cfg.lr * cfg.weight_decay);
        ensure!(*got == want, "decay-only step gave {got}, want {want}");
    }

    let mut g = vec![vec![3.0, 4.0]];
    clip_grad_norm(&mut g, 1.0);
    ensure!(g == vec![vec![0.6, 0.8]], "clip(3, 4 | 1.0) gave {:?}", g[0]);
    Ok("lr_factor at 0/50/100/550/1000, decay-only AdamW step, clip (3,4) -> (0.6,0.8): exact".into())
}

// ------------------------------------------------- 4, 5, 8: desk pipeline

fn desk_accuracy(run: &PipelineOutput) -> Outcome {
    let acc = |k: ModelKind| run.eval.get(&k).map(|e| e.accuracy).ok_or(format!("{k} was not evaluated"));
    let (t, f, k, g) = (
        acc(ModelKind::Transformer)?,
        acc(ModelKind::Ffnn)?,
        acc(ModelKind::Knn)?,
        acc(ModelKind::Greedy)?,
    );
    let epochs = |k: ModelKind| run.curves.get(&k).map_or(0, Vec::len);
    let summary = format!(
        "test accuracy transformer {t:.4} ({} epochs), ffnn {f:.4} ({} epochs), knn {k:.4}, greedy {g:.4}",
        epochs(ModelKind::Transformer),
        epochs(ModelKind::Ffnn)
    );
    ensure!(t >= 0.90 && f >= 0.90, "{summary}: below 0.90");
    ensure!(t >= f && f >= k && k >= g, "{summary}: ranking violated");
    Ok(summary)
}

fn rollout_quality(run: &PipelineOutput) -> Outcome {
    let r = &run
        .eval
        .get(&ModelKind::Transformer)
        .ok_or("transformer was not evaluated")?
        .rollout;
    let ratio = r.mean_cost_ratio.ok_or("no episode reached its destination")?;
    let summary = format!(
        "{}/{} reached ({:.1}%), mean cost ratio {ratio:.4}, worst {:.4}",
        r.reached,
        r.episodes,
        100.0 * r.reach_rate,
        r.worst_cost_ratio.unwrap_or(f64::NAN)
    );
    ensure!(r.episodes == 100, "{summary}: expected 100 episodes");
    ensure!(r.reach_rate >= 0.95 && ratio <= 1.05, "{summary}");
    Ok(summary)
}

fn determinism(first: &PipelineOutput, cfg: &RunConfig) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let replay = run_pipeline(&RunConfig {
        out_dir: dir.path().join("replay"),
        ..cfg.clone()
    })
    .map_err(|e| e.to_string())?;
    let (a, b) = (first.manifest.hashes(), replay.manifest.hashes());
    ensure!(
        first.manifest.config_sha256 == replay.manifest.config_sha256,
        "config hashes differ"
    );
    let differing: Vec<&str> = a.keys().filter(|k| a.get(*k) != b.get(*k)).copied().collect();
    ensure!(a.len() == b.len() && differing.is_empty(), "artifacts differ: {differing:?}");
    Ok(format!("{} artifacts hash identically on replay", a.len()))
}

// ---------------------------------------------------------- 6: latency

fn ffnn_model(net: &Network) -> TrainedModel {
    TrainedModel::Ffnn(Ffnn::new(GraphView::from_network(net), (128, 64), 5.0, 1))
}

fn latency_properties() -> Outcome {
    let timing = TimingConfig::default();
    let net = scaled_network(500, 5).map_err(|e| e.to_string())?;
    let wx: WeatherSeries = synth_weather(&net, 24.0 * 3600.0, 1800.0, 5).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::desk("unused");
    cfg.episodes.count = 10;
    let eps: Vec<_> = pipeline::episodes(&cfg, &net, &wx)?.into_iter().map(|(e, _)| e).collect();
    let setup = PlannerSetup {
        net: &net,
        wx: &wx,
        drone: &cfg.sim.drone,
    };
    let ffnn = bench_inference(&ffnn_model(&net), &setup, &eps, &timing).map_err(|e| e.to_string())?;
    let tf_model = TrainedModel::Transformer(
        Transformer::new(GraphView::from_network(&net), &ModelConfig::default(), 5.0).map_err(|e| e.to_string())?,
    );
    let tf = bench_inference(&tf_model, &setup, &eps, &timing).map_err(|e| e.to_string())?;

    let (ns, ws) = ([50, 100, 200, 400], [6, 24, 96, 384]);
    let tf_scaling = bench_scaling(&ModelFamily::new(ModelKind::Transformer, 3), &ns, &ws, &timing)
        .map_err(|e| e.to_string())?;
    let ff_scaling = bench_scaling(&ModelFamily::new(ModelKind::Ffnn, 3), &ns, &ws[..3], &timing)
        .map_err(|e| e.to_string())?;
    let ms = |ns: f64| ns / 1e6;
    let p50s = |pts: &[skyroute_core::harness::ScalingPoint]| {
        pts.iter().map(|p| format!("{:.2}", ms(p.latency.p50_ns))).collect::<Vec<_>>().join("/")
    };
    let summary = format!(
        "500 nodes: A* p50 {:.3} ms, ffnn {:.3} ms (speedup {:.2}), transformer {:.3} ms (speedup {:.2}); \
         transformer ms over n {ns:?}: {}, over w {ws:?}: {}; ffnn ms over n: {}",
        ms(ffnn.astar.p50_ns),
        ms(ffnn.decision.p50_ns),
        ffnn.speedup_per_decision,
        ms(tf.decision.p50_ns),
        tf.speedup_per_decision,
        p50s(&tf_scaling.n_axis),
        p50s(&tf_scaling.w_axis),
        p50s(&ff_scaling.n_axis),
    );
    ensure!(ffnn.speedup_per_decision > 1.0, "{summary}: ffnn not faster than A*");
    ensure!(tf_scaling.monotone_in_n(), "{summary}: transformer not monotone in n");
    ensure!(tf_scaling.monotone_in_w(), "{summary}: transformer not monotone in w");
    let ffnn_below = ff_scaling
        .n_axis
        .iter()
        .zip(&tf_scaling.n_axis)
        .all(|(f, t)| f.n == t.n && f.latency.p50_ns < t.latency.p50_ns);
    ensure!(ffnn_below, "{summary}: ffnn not below transformer at every n");
    Ok(summary)
}

// --------------------------------------------------- 7: simulation integrity

const SEGMENT_FIELDS: [&str; 8] = [
    "from_node",
    "to_node",
    "wind_speed",
    "wind_direction",
    "temperature",
    "distance",
    "flight_duration",
    "battery_consumed",
];

fn simulation_integrity(cfg: &RunConfig) -> Outcome {
    let net = generate_network(&cfg.net).map_err(|e| e.to_string())?;
    let wx = synth_weather(&net, cfg.weather.horizon_s, cfg.weather.interval_s, cfg.weather.seed)
        .map_err(|e| e.to_string())?;
    let r = &cfg.requests;
    let reqs = generate_requests(&net, r.count, wx.horizon_s(), r.payload_range, cfg.sim.drone.max_payload, r.seed)
        .map_err(|e| e.to_string())?;
    let fleet = initial_fleet(&net, cfg.fleet.drones, &cfg.sim.drone, cfg.fleet.seed);
    let sim = run_simulation(&net, &wx, &fleet, &reqs, &cfg.sim, &NearestEarliest).map_err(|e| e.to_string())?;
    ensure!(!sim.records.is_empty(), "no records");
    for rec in &sim.records {
        rec.check_chain(&net)?;
        verify_label(rec, &net, &wx, &cfg.sim.drone)?;
    }
    check_battery_log(&sim.events, &fleet, cfg.sim.drone.battery_capacity)?;

    let text = dataset_to_jsonl(&sim.records);
    let back = dataset_from_jsonl(&text).map_err(|e| e.to_string())?;
    ensure!(back == sim.records, "records changed on re-read");
    ensure!(dataset_to_jsonl(&back) == text, "JSONL not byte-identical after a round trip");

    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("record is not an object")?;
        ensure!(obj["request_id"].is_u64(), "request_id is not an integer: {line}");
        let segs = obj["route_segments"].as_array().ok_or("route_segments is not a list")?;
        for s in segs {
            let mut keys: Vec<&str> = s.as_object().ok_or("segment is not an object")?.keys().map(String::as_str).collect();
            keys.sort_unstable();
            let mut want = SEGMENT_FIELDS.to_vec();
            want.sort_unstable();
            ensure!(keys == want, "segment fields {keys:?}");
        }
    }
    Ok(format!(
        "{} records ({} of {} requests), {} battery events; chains, labels and battery balance verified; JSONL byte-identical",
        sim.records.len(),
        sim.report.succeeded,
        sim.report.requests,
        sim.events.len()
    ))
}

// ---------------------------------------------------------------- driver

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u8, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; over the {budget:?} budget")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id} [{name}] {tag} ({:.1} s): {detail}", took.as_secs_f64());
        if outcome.is_err() {
            self.failures += 1;
        }
    }
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let min = |m: u64| Duration::from_secs(60 * m);

    report.record(1, "planner optimality", min(1), planner_optimality);
    report.record(2, "gradient correctness", min(1), gradient_correctness);
    report.record(3, "closed forms", Duration::from_secs(1), closed_forms);

    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = RunConfig::desk(dir.path().join("desk"));
    let start = Instant::now();
    let desk = run_pipeline(&cfg).map_err(|e| e.to_string());
    let desk_time = start.elapsed();
    println!("desk pipeline finished in {:.1} s", desk_time.as_secs_f64());
    let with_desk = |check: fn(&PipelineOutput) -> Outcome| {
        let desk = &desk;
        move || desk.as_ref().map_err(|e| format!("pipeline failed: {e}")).and_then(check)
    };
    // training dominates the pipeline, so its wall time counts against criterion 4
    report.record(4, "imitation accuracy", min(5).saturating_sub(desk_time), with_desk(desk_accuracy));
    report.record(5, "rollout quality", min(1), with_desk(rollout_quality));
    report.record(6, "latency properties", min(2), latency_properties);
    report.record(7, "simulation integrity", min(1), || simulation_integrity(&cfg));
    report.record(8, "determinism", min(5), || {
        desk.as_ref()
            .map_err(|e| format!("pipeline failed: {e}"))
            .and_then(|d| determinism(d, &cfg))
    });

    if report.failures == 0 {
        println!("all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{} of 8 criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
