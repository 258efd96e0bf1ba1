//! Per-node weather time series on a fixed sampling grid.
//!
//! Series come either from the seeded synthetic generator or from a JSON-lines
//! snapshot file (one sample per line). Lookups use zero-order hold.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skynet::Network;

pub const MAX_WIND_SPEED: f64 = 15.0;
pub const MIN_TEMPERATURE: f64 = -5.0;
pub const MAX_TEMPERATURE: f64 = 35.0;
pub const MAX_VISIBILITY_KM: f64 = 20.0;

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("weather grid incomplete: no sample for node {node_id} at t={t}")]
    GridIncomplete { node_id: usize, t: f64 },
    #[error("duplicate sample for node {node_id} at t={t}")]
    DuplicateCell { node_id: usize, t: f64 },
    #[error("{field}={value} out of range at line {line}")]
    Range {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("t={t} outside the series horizon [0, {horizon_s}]")]
    OutOfHorizon { t: f64, horizon_s: f64 },
    #[error("invalid weather parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    pub node_id: usize,
    /// Seconds since simulation start.
    pub t: f64,
    /// m/s
    pub wind_speed: f64,
    /// Degrees the wind blows FROM, in [0, 360).
    pub wind_bearing: f64,
    /// °C
    pub temperature: f64,
    /// km
    pub visibility: f64,
    /// percent
    pub cloud_cover: f64,
}

impl WeatherSample {
    fn check_ranges(&self, line: usize) -> Result<(), WeatherError> {
        let bad = |field, value| Err(WeatherError::Range { line, field, value });
        if !(self.t.is_finite() && self.t >= 0.0) {
            return bad("t", self.t);
        }
        if !(self.wind_speed.is_finite() && self.wind_speed >= 0.0) {
            return bad("wind_speed", self.wind_speed);
        }
        if !(self.wind_bearing >= 0.0 && self.wind_bearing < 360.0) {
            return bad("wind_bearing", self.wind_bearing);
        }
        if !self.temperature.is_finite() {
            return bad("temperature", self.temperature);
        }
        if !(self.visibility.is_finite() && self.visibility >= 0.0) {
            return bad("visibility", self.visibility);
        }
        if !(self.cloud_cover >= 0.0 && self.cloud_cover <= 100.0) {
            return bad("cloud_cover", self.cloud_cover);
        }
        Ok(())
    }
}

/// Dense node × time-step grid, stored step-major so one time frame is a
/// contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    interval_s: f64,
    horizon_s: f64,
    node_count: usize,
    samples: Vec<WeatherSample>,
}

impl WeatherSeries {
    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_s
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn steps(&self) -> usize {
        if self.node_count == 0 {
            0
        } else {
            self.samples.len() / self.node_count
        }
    }

    pub fn samples(&self) -> &[WeatherSample] {
        &self.samples
    }

    /// All node samples at time step `step`, indexed by node id.
    pub fn frame(&self, step: usize) -> &[WeatherSample] {
        &self.samples[step * self.node_count..(step + 1) * self.node_count]
    }

    /// Zero-order-hold step index for time `t`.
    pub fn step_at(&self, t: f64) -> Result<usize, WeatherError> {
        if !(t >= 0.0 && t <= self.horizon_s) {
            return Err(WeatherError::OutOfHorizon {
                t,
                horizon_s: self.horizon_s,
            });
        }
        let step = (t / self.interval_s).floor() as usize;
        Ok(step.min(self.steps() - 1))
    }

    pub fn max_wind_speed(&self) -> f64 {
        self.samples.iter().map(|s| s.wind_speed).fold(0.0, f64::max)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 140);
        // Node-major on the wire: each node's series reads top to bottom.
        for node in 0..self.node_count {
            for step in 0..self.steps() {
                let s = &self.samples[step * self.node_count + node];
                out.push_str(&serde_json::to_string(s).expect("sample serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, WeatherError> {
        from_lines(text.lines().map(|l| Ok::<_, std::io::Error>(l.to_string())), "<memory>")
    }

    fn from_grid(
        interval_s: f64,
        horizon_s: f64,
        node_count: usize,
        samples: Vec<WeatherSample>,
    ) -> Self {
        WeatherSeries {
            interval_s,
            horizon_s,
            node_count,
            samples,
        }
    }
}

fn from_lines<I>(lines: I, path: &str) -> Result<WeatherSeries, WeatherError>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut parsed = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| WeatherError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let s: WeatherSample = serde_json::from_str(&line).map_err(|e| WeatherError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        s.check_ranges(line_no)?;
        parsed.push((line_no, s));
    }
    if parsed.is_empty() {
        return Err(WeatherError::Parse {
            line: 0,
            message: "no samples".into(),
        });
    }
    let times: BTreeSet<u64> = parsed.iter().map(|(_, s)| s.t.to_bits()).collect();
    let mut times: Vec<f64> = times.into_iter().map(f64::from_bits).collect();
    times.sort_by(f64::total_cmp);
    if times.len() < 2 {
        return Err(WeatherError::Parse {
            line: 0,
            message: "at least two time steps are needed to infer the interval".into(),
        });
    }
    if times[0] != 0.0 {
        return Err(WeatherError::Parse {
            line: 0,
            message: format!("series must start at t=0, found {}", times[0]),
        });
    }
    let interval = times[1];
    let horizon = *times.last().unwrap();
    let steps = (horizon / interval).round() as usize + 1;
    let node_count = parsed.iter().map(|(_, s)| s.node_id).max().unwrap() + 1;

    let mut grid: Vec<Option<WeatherSample>> = vec![None; steps * node_count];
    for (line, s) in parsed {
        let k = (s.t / interval).round();
        if (k * interval - s.t).abs() > 1e-9 * interval.max(1.0) {
            return Err(WeatherError::Parse {
                line,
                message: format!("t={} is not a multiple of the interval {interval}", s.t),
            });
        }
        let cell = &mut grid[k as usize * node_count + s.node_id];
        if cell.is_some() {
            return Err(WeatherError::DuplicateCell {
                node_id: s.node_id,
                t: s.t,
            });
        }
        *cell = Some(s);
    }
    let mut samples = Vec::with_capacity(grid.len());
    for (idx, cell) in grid.into_iter().enumerate() {
        match cell {
            Some(s) => samples.push(s),
            None => {
                return Err(WeatherError::GridIncomplete {
                    node_id: idx % node_count,
                    t: (idx / node_count) as f64 * interval,
                })
            }
        }
    }
    Ok(WeatherSeries::from_grid(interval, horizon, node_count, samples))
}

pub fn write_weather(series: &WeatherSeries, path: &Path) -> Result<(), WeatherError> {
    let io = |source| WeatherError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(series.to_jsonl().as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_weather(path: &Path) -> Result<WeatherSeries, WeatherError> {
    let file = fs::File::open(path).map_err(|source| WeatherError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_lines(BufReader::new(file).lines(), &path.display().to_string())
}

/// Zero-order-hold lookup: the sample at `floor(t / interval_s)`, with
/// `t = horizon_s` mapped to the final step.
pub fn snapshot_at(
    series: &WeatherSeries,
    node_id: usize,
    t: f64,
) -> Result<WeatherSample, WeatherError> {
    let step = series.step_at(t)?;
    Ok(series.frame(step)[node_id])
}

/// Mean-reverting AR(1) process.
struct Ou {
    value: f64,
    mean: f64,
    reversion: f64,
    sigma: f64,
}

impl Ou {
    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.value += self.reversion * (self.mean - self.value) + self.sigma * z;
        self.value
    }
}

/// Seeded synthetic generator: a shared regional signal per variable plus a
/// per-node perturbation (static spatial offset and its own AR(1) noise).
pub fn synth_weather(
    net: &Network,
    horizon_s: f64,
    interval_s: f64,
    seed: u64,
) -> Result<WeatherSeries, WeatherError> {
    if !(interval_s > 0.0 && interval_s.is_finite()) {
        return Err(WeatherError::InvalidParams(format!("interval_s={interval_s}")));
    }
    if !(horizon_s >= interval_s && horizon_s.is_finite()) {
        return Err(WeatherError::InvalidParams(format!(
            "horizon_s={horizon_s} must be >= interval_s={interval_s}"
        )));
    }
    let n = net.len();
    let steps = (horizon_s / interval_s).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (min_x, min_y, max_x, max_y) = net.extent();
    let span_x = (max_x - min_x).max(1.0);
    let span_y = (max_y - min_y).max(1.0);

    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let mut region_wind = Ou {
        value: 4.0 + 2.0 * rng.random::<f64>(),
        mean: 5.0,
        reversion: 0.08,
        sigma: 0.5,
    };
    let mut region_bearing = 360.0 * rng.random::<f64>();
    let mut region_temp = Ou {
        value: normal(&mut rng),
        mean: 0.0,
        reversion: 0.1,
        sigma: 0.6,
    };
    let mut region_vis = Ou {
        value: 12.0,
        mean: 12.0,
        reversion: 0.1,
        sigma: 0.8,
    };
    let mut region_cloud = Ou {
        value: 40.0,
        mean: 40.0,
        reversion: 0.1,
        sigma: 5.0,
    };
    let temp_base = 12.0 + 6.0 * rng.random::<f64>();
    let wind_gradient = (normal(&mut rng), normal(&mut rng));
    let temp_gradient = (normal(&mut rng), normal(&mut rng));

    struct NodeNoise {
        wind_offset: f64,
        bearing_offset: f64,
        temp_offset: f64,
        wind: Ou,
        bearing: Ou,
        temp: Ou,
        vis: Ou,
        cloud: Ou,
    }
    let mut noise: Vec<NodeNoise> = net
        .nodes()
        .iter()
        .map(|node| {
            let fx = (node.x - min_x) / span_x - 0.5;
            let fy = (node.y - min_y) / span_y - 0.5;
            NodeNoise {
                wind_offset: 1.5 * (wind_gradient.0 * fx + wind_gradient.1 * fy) + 0.5 * normal(&mut rng),
                bearing_offset: 10.0 * normal(&mut rng),
                temp_offset: 2.0 * (temp_gradient.0 * fx + temp_gradient.1 * fy) + 0.5 * normal(&mut rng),
                wind: Ou { value: 0.0, mean: 0.0, reversion: 0.2, sigma: 0.3 },
                bearing: Ou { value: 0.0, mean: 0.0, reversion: 0.2, sigma: 3.0 },
                temp: Ou { value: 0.0, mean: 0.0, reversion: 0.2, sigma: 0.3 },
                vis: Ou { value: 0.0, mean: 0.0, reversion: 0.2, sigma: 0.5 },
                cloud: Ou { value: 0.0, mean: 0.0, reversion: 0.2, sigma: 3.0 },
            }
        })
        .collect();

    let mut samples = Vec::with_capacity(steps * n);
    for step in 0..steps {
        let t = step as f64 * interval_s;
        let wind = region_wind.step(&mut rng);
        region_bearing += 6.0 * normal(&mut rng);
        let temp_anomaly = region_temp.step(&mut rng);
        let vis = region_vis.step(&mut rng);
        let cloud = region_cloud.step(&mut rng);
        let diurnal = 6.0 * (2.0 * std::f64::consts::PI * (t / 86_400.0 - 0.375)).sin();
        for (node, nn) in net.nodes().iter().zip(noise.iter_mut()) {
            let ws = wind + nn.wind_offset + nn.wind.step(&mut rng);
            let wb = region_bearing + nn.bearing_offset + nn.bearing.step(&mut rng);
            let tc = temp_base + diurnal + temp_anomaly + nn.temp_offset + nn.temp.step(&mut rng);
            let vk = vis + nn.vis.step(&mut rng);
            let cc = cloud + nn.cloud.step(&mut rng);
            samples.push(WeatherSample {
                node_id: node.id,
                t,
                wind_speed: ws.clamp(0.0, MAX_WIND_SPEED),
                wind_bearing: crate::normalize_bearing(wb),
                temperature: tc.clamp(MIN_TEMPERATURE, MAX_TEMPERATURE),
                visibility: vk.clamp(0.0, MAX_VISIBILITY_KM),
                cloud_cover: cc.clamp(0.0, 100.0),
            });
        }
    }
    let sampled_horizon = (steps - 1) as f64 * interval_s;
    Ok(WeatherSeries::from_grid(interval_s, sampled_horizon, n, samples))
}
