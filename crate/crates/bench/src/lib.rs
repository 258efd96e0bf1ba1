//! Shared fixtures for the criterion benches.

use skyroute_core::fleetsim::weather_time;
use skyroute_core::harness::bench::scaled_network;
use skyroute_core::weathersim::synth_weather;
use skyroute_core::{DroneSpec, Network, WeatherSeries};

/// A network of `n` nodes with six hours of weather, plus the pair of nodes
/// farthest apart by straight-line distance from node 0.
pub struct PlannerFixture {
    pub net: Network,
    pub wx: WeatherSeries,
    pub drone: DroneSpec,
    pub origin: usize,
    pub dest: usize,
    pub t: f64,
}

impl PlannerFixture {
    pub fn new(n: usize, seed: u64) -> Self {
        let net = scaled_network(n, seed).expect("network generates");
        let wx = synth_weather(&net, 6.0 * 3600.0, 1800.0, seed).expect("weather generates");
        let origin = 0;
        let dest = (1..net.len())
            .max_by(|&a, &b| {
                let d = |x: usize| net.node(origin).distance_to(net.node(x));
                d(a).total_cmp(&d(b))
            })
            .expect("at least two nodes");
        let t = weather_time(&wx, 3600.0);
        PlannerFixture {
            net,
            wx,
            drone: DroneSpec::default(),
            origin,
            dest,
            t,
        }
    }
}
