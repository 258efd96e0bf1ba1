//! `skyroute`: command-line front end for every pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use skyroute_core::fleetsim::{
    check_battery_log, generate_requests, initial_fleet, read_dataset, run_simulation, verify_label, weather_time,
    write_dataset, NearestEarliest,
};
use skyroute_core::flightcost::heuristic_lower_bound;
use skyroute_core::harness::{
    bench_inference, bench_scaling, pipeline, run_pipeline, ModelFamily, PlannerSetup, RunConfig, TimingConfig,
};
use skyroute_core::models::{
    checkpoint, encode_dataset, evaluate, split_records, train, train::write_curves, GraphView, ModelConfig, ModelKind,
};
use skyroute_core::planner::{dijkstra, plan_request, WeatherCost};
use skyroute_core::skynet::{generate_network, Network};
use skyroute_core::weathersim::{load_weather, synth_weather, write_weather};

#[derive(Parser)]
#[command(name = "skyroute", version, about = "Weather-aware drone skyway routing workbench")]
struct Cli {
    /// JSON run config supplying every setting not given as a flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a skyway network.
    GenNet {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize a weather series for a network.
    GenWeather {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon_s: Option<f64>,
        #[arg(long)]
        interval_s: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plan one route and print it as JSON.
    Plan {
        #[command(flatten)]
        world: World,
        #[arg(long)]
        origin: usize,
        #[arg(long)]
        dest: usize,
        #[arg(long, default_value_t = 1.0)]
        payload: f64,
        /// Departure time in seconds.
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, value_enum, default_value_t = Algo::Astar)]
        algo: Algo,
    },
    /// Run the fleet simulation and write the route dataset.
    Simulate {
        #[command(flatten)]
        world: World,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long)]
        drones: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the simulation summary here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a next-node model on a route dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        world: World,
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a trained model on a route dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        world: World,
        #[arg(long)]
        report: PathBuf,
    },
    /// Time a model against A*, or measure how model latency scales.
    Bench {
        #[command(flatten)]
        args: BenchArgs,
    },
    /// Run every stage end to end.
    Pipeline {
        /// Output directory, overriding the config's.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct World {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    wx: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to time against A*; needs --net and --wx.
    #[arg(long, conflicts_with = "scaling")]
    model: Option<PathBuf>,
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    wx: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Measure latency against network size and weather width instead.
    #[arg(long, value_parser = parse_kind)]
    scaling: Option<ModelKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 200, 400])]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [6, 24, 96, 384])]
    w: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    repetitions: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Astar,
    Dijkstra,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(RunConfig::desk("run")),
    }
}

fn read_net(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).with_context(|| format!("reading network {}", path.display()))?;
    Network::from_json(&text).with_context(|| format!("parsing network {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenNet { out, nodes, seed } => {
            cfg.net.node_count = nodes.unwrap_or(cfg.net.node_count);
            cfg.net.seed = seed.unwrap_or(cfg.net.seed);
            let net = generate_network(&cfg.net)?;
            fs::write(&out, net.to_json()).with_context(|| format!("writing {}", out.display()))?;
            println!("{} nodes, {} edges -> {}", net.len(), net.edges().len(), out.display());
        }
        Command::GenWeather {
            net,
            out,
            horizon_s,
            interval_s,
            seed,
        } => {
            let net = read_net(&net)?;
            let w = &cfg.weather;
            let series = synth_weather(
                &net,
                horizon_s.unwrap_or(w.horizon_s),
                interval_s.unwrap_or(w.interval_s),
                seed.unwrap_or(w.seed),
            )?;
            write_weather(&series, &out)?;
            println!("{} steps x {} nodes -> {}", series.steps(), series.node_count(), out.display());
        }
        Command::Plan {
            world,
            origin,
            dest,
            payload,
            t,
            algo,
        } => {
            let net = read_net(&world.net)?;
            let wx = load_weather(&world.wx)?;
            let drone = &cfg.sim.drone;
            let t = weather_time(&wx, t);
            let route = match algo {
                Algo::Astar => plan_request(&net, &wx, drone, payload, origin, dest, t)?,
                Algo::Dijkstra => {
                    let wc = WeatherCost::at_time(&net, &wx, drone, payload, t)?;
                    dijkstra(&net, |u, v, d| wc.cost(u, v, d), origin, dest)?
                }
            };
            let bound = heuristic_lower_bound(net.node(origin), net.node(dest), drone, wx.max_wind_speed());
            let out = serde_json::json!({
                "node_sequence": route.node_sequence,
                "total_duration_s": route.total_duration,
                "total_energy_wh": route.total_energy,
                "expanded_nodes": route.expanded_nodes,
                "lower_bound_s": bound,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Simulate {
            world,
            out,
            requests,
            drones,
            seed,
            report,
        } => {
            let net = read_net(&world.net)?;
            let wx = load_weather(&world.wx)?;
            let r = &cfg.requests;
            let reqs = generate_requests(
                &net,
                requests.unwrap_or(r.count),
                wx.horizon_s(),
                r.payload_range,
                cfg.sim.drone.max_payload,
                seed.unwrap_or(r.seed),
            )?;
            let fleet = initial_fleet(&net, drones.unwrap_or(cfg.fleet.drones), &cfg.sim.drone, cfg.fleet.seed);
            let sim = run_simulation(&net, &wx, &fleet, &reqs, &cfg.sim, &NearestEarliest)?;
            for rec in &sim.records {
                rec.check_chain(&net).map_err(anyhow::Error::msg)?;
                verify_label(rec, &net, &wx, &cfg.sim.drone).map_err(anyhow::Error::msg)?;
            }
            check_battery_log(&sim.events, &fleet, cfg.sim.drone.battery_capacity).map_err(anyhow::Error::msg)?;
            write_dataset(&sim.records, &out)?;
            if let Some(p) = report {
                write_json(&p, &serde_json::json!({ "report": sim.report, "failures": sim.failures }))?;
            }
            println!(
                "{} of {} requests delivered -> {}",
                sim.report.succeeded,
                sim.report.requests,
                out.display()
            );
        }
        Command::Train {
            data,
            world,
            model,
            out,
            curves,
            epochs,
        } => {
            let net = read_net(&world.net)?;
            let wx = load_weather(&world.wx)?;
            let records = read_dataset(&data)?;
            let split = split_records(&records, &cfg.split)?;
            let enc = |r| encode_dataset(r, &net, &wx, true);
            let (tr, va) = (enc(&split.train)?, enc(&split.val)?);
            let mc = ModelConfig {
                kind: model,
                ..cfg.model.clone()
            };
            let mut tc = cfg.train_config(model).clone();
            tc.epochs = epochs.unwrap_or(tc.epochs);
            let (m, c) = train(&mc, &tc, &GraphView::from_network(&net), &tr, &va)?;
            let bytes = checkpoint::save(&m, &out)?;
            if let Some(p) = curves {
                write_curves(&c, &p)?;
            }
            match c.last() {
                Some(last) => println!(
                    "{model}: val accuracy {:.4} after {} epochs, {bytes} bytes -> {}",
                    last.val_accuracy,
                    c.len(),
                    out.display()
                ),
                None => println!("{model}: fitted, {bytes} bytes -> {}", out.display()),
            }
        }
        Command::Eval {
            model,
            data,
            world,
            report,
        } => {
            let m = checkpoint::load(&model)?;
            let net = read_net(&world.net)?;
            let wx = load_weather(&world.wx)?;
            let samples = encode_dataset(&read_dataset(&data)?, &net, &wx, m.weather_aware())?;
            if samples.is_empty() {
                bail!("{} holds no route segments", data.display());
            }
            let r = evaluate(&m, &samples);
            write_json(&report, &r)?;
            println!(
                "{}: accuracy {:.4}, macro F1 {:.4} on {} samples",
                m.kind(),
                r.accuracy,
                r.f1,
                r.samples
            );
        }
        Command::Bench { args } => bench(&cfg, args)?,
        Command::Pipeline { out_dir } => {
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let out = run_pipeline(&cfg)?;
            for (kind, e) in &out.eval {
                println!(
                    "{kind:>11}: accuracy {:.4}  F1 {:.4}  rollouts {}/{}",
                    e.accuracy, e.f1, e.rollout.reached, e.rollout.episodes
                );
            }
            println!("manifest: {}", out.out_dir.join("manifest.json").display());
        }
    }
    Ok(())
}

fn bench(cfg: &RunConfig, a: BenchArgs) -> Result<()> {
    let timing = TimingConfig {
        warmup: a.warmup,
        repetitions: a.repetitions,
    };
    if let Some(kind) = a.scaling {
        let table = bench_scaling(&ModelFamily::new(kind, cfg.model.seed), &a.n, &a.w, &timing)?;
        write_json(&a.out, &table)?;
        println!(
            "{kind}: slope in n {:.2}, slope in w {:.2} -> {}",
            table.slope_n,
            table.slope_w,
            a.out.display()
        );
        return Ok(());
    }
    let (Some(model), Some(net), Some(wx)) = (a.model, a.net, a.wx) else {
        bail!("bench needs --model, --net and --wx, or --scaling <kind>");
    };
    let m = checkpoint::load(&model)?;
    let net = read_net(&net)?;
    let wx = load_weather(&wx)?;
    let bench_cfg = RunConfig {
        episodes: skyroute_core::harness::EpisodeConfig {
            count: a.instances,
            ..cfg.episodes.clone()
        },
        ..cfg.clone()
    };
    let eps: Vec<_> = pipeline::episodes(&bench_cfg, &net, &wx)
        .map_err(anyhow::Error::msg)?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    let setup = PlannerSetup {
        net: &net,
        wx: &wx,
        drone: &cfg.sim.drone,
    };
    let r = bench_inference(&m, &setup, &eps, &timing)?;
    write_json(&a.out, &r)?;
    println!(
        "{}: decision p50 {:.0} ns, A* p50 {:.0} ns, speedup per decision {:.2}, per rollout {:.2}",
        r.model, r.decision.p50_ns, r.astar.p50_ns, r.speedup_per_decision, r.speedup_per_rollout
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
