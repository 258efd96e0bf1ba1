//! Weather-adjusted edge physics: wind triangle, flight duration, and battery
//! draw with payload and cold-temperature effects.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skynet::Node;
use crate::weathersim::WeatherSample;

/// Temperature at and above which batteries run at nominal efficiency.
pub const DERATING_KNEE_C: f64 = 15.0;
/// Extra energy fraction per °C below the knee.
pub const DERATING_PER_DEGREE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FlightError {
    #[error("crosswind {crosswind:.3} m/s is not below airspeed {airspeed:.3} m/s")]
    CrosswindExceedsAirspeed { crosswind: f64, airspeed: f64 },
    #[error("payload {payload_kg} kg exceeds the {max_payload} kg limit")]
    PayloadTooHeavy { payload_kg: f64, max_payload: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneSpec {
    /// Cruise airspeed, m/s.
    pub airspeed: f64,
    /// Wh
    pub battery_capacity: f64,
    /// kg
    pub max_payload: f64,
    /// W at zero payload.
    pub base_power: f64,
    /// W per kg of payload.
    pub payload_power_coeff: f64,
    /// Floor on ground speed, m/s.
    pub min_ground_speed: f64,
}

impl Default for DroneSpec {
    fn default() -> Self {
        DroneSpec {
            airspeed: 20.0,
            battery_capacity: 500.0,
            max_payload: 5.0,
            base_power: 360.0,
            payload_power_coeff: 40.0,
            min_ground_speed: 1.0,
        }
    }
}

impl DroneSpec {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("airspeed", self.airspeed),
            ("battery_capacity", self.battery_capacity),
            ("max_payload", self.max_payload),
            ("base_power", self.base_power),
            ("payload_power_coeff", self.payload_power_coeff),
            ("min_ground_speed", self.min_ground_speed),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.min_ground_speed >= self.airspeed {
            return Err("min_ground_speed must be below airspeed".into());
        }
        Ok(())
    }
}

/// Cost of flying one edge. Infeasible edges carry the reason and are
/// skipped by the planners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCost {
    /// s
    pub duration: f64,
    /// Wh
    pub energy: f64,
    pub infeasible: Option<FlightError>,
}

impl EdgeCost {
    pub fn feasible(&self) -> bool {
        self.infeasible.is_none()
    }

    fn blocked(reason: FlightError) -> Self {
        EdgeCost {
            duration: f64::INFINITY,
            energy: f64::INFINITY,
            infeasible: Some(reason),
        }
    }
}

/// Wind-triangle ground speed with crab correction.
///
/// Bearings follow the meteorological convention: `wind_bearing` is where
/// the wind blows FROM, so `wind_bearing == track_bearing` is a pure headwind.
/// The result is not clamped; see [`ground_speed_clamped`].
pub fn ground_speed(
    airspeed: f64,
    wind_speed: f64,
    wind_bearing: f64,
    track_bearing: f64,
) -> Result<f64, FlightError> {
    if wind_speed == 0.0 {
        return Ok(airspeed);
    }
    let rel = (wind_bearing - track_bearing).to_radians();
    let headwind = wind_speed * rel.cos();
    let crosswind = wind_speed * rel.sin();
    if crosswind.abs() >= airspeed {
        return Err(FlightError::CrosswindExceedsAirspeed {
            crosswind: crosswind.abs(),
            airspeed,
        });
    }
    Ok((airspeed * airspeed - crosswind * crosswind).sqrt() - headwind)
}

pub fn ground_speed_clamped(
    drone: &DroneSpec,
    wind_speed: f64,
    wind_bearing: f64,
    track_bearing: f64,
) -> Result<f64, FlightError> {
    ground_speed(drone.airspeed, wind_speed, wind_bearing, track_bearing)
        .map(|gs| gs.max(drone.min_ground_speed))
}

/// Multiplier on energy for cold batteries: 1% per °C below 15 °C.
pub fn temperature_derating(temperature_c: f64) -> f64 {
    1.0 + DERATING_PER_DEGREE * (DERATING_KNEE_C - temperature_c).max(0.0)
}

/// Cost of flying `from -> to` with the weather observed at the departure node.
pub fn edge_cost(
    from: &Node,
    to: &Node,
    distance: f64,
    weather: &WeatherSample,
    drone: &DroneSpec,
    payload_kg: f64,
) -> EdgeCost {
    if payload_kg > drone.max_payload {
        return EdgeCost::blocked(FlightError::PayloadTooHeavy {
            payload_kg,
            max_payload: drone.max_payload,
        });
    }
    if distance == 0.0 {
        return EdgeCost {
            duration: 0.0,
            energy: 0.0,
            infeasible: None,
        };
    }
    let track = from.bearing_to(to);
    let speed = match ground_speed_clamped(drone, weather.wind_speed, weather.wind_bearing, track) {
        Ok(s) => s,
        Err(e) => return EdgeCost::blocked(e),
    };
    let duration = distance / speed;
    let power = drone.base_power + drone.payload_power_coeff * payload_kg;
    let energy = power * duration * temperature_derating(weather.temperature) / 3600.0;
    EdgeCost {
        duration,
        energy,
        infeasible: None,
    }
}

/// Straight-line time to `goal` at the best possible ground speed.
///
/// Ground speed never exceeds `airspeed + wind`, so with `max_wind` bounding
/// every sampled wind speed this never overestimates the remaining duration.
pub fn heuristic_lower_bound(node: &Node, goal: &Node, drone: &DroneSpec, max_wind: f64) -> f64 {
    node.distance_to(goal) / (drone.airspeed + max_wind)
}
