//! Weather-aware drone skyway routing workbench.
//!
//! Generates skyway networks and weather, plans optimal routes with A* and
//! Dijkstra, simulates a delivery fleet to produce a next-node dataset, and
//! trains and benchmarks learned next-node predictors against the planners.

pub mod fleetsim;
pub mod flightcost;
pub mod harness;
pub mod models;
pub mod neural;
pub mod planner;
pub mod skynet;
pub mod weathersim;

pub use flightcost::{DroneSpec, EdgeCost};
pub use planner::Route;
pub use skynet::{NetConfig, Network, Node};
pub use weathersim::{WeatherSample, WeatherSeries};

/// Wraps a bearing in degrees into [0, 360).
pub fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}
