//! Random start/goal sampling.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dynamics::{check_collision, RobotPose};
use super::geometry::Vec2;
use super::map::WorldMap;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub start: RobotPose<T>,
    pub goal: Vec2<T>,
    /// Name of the map the scenario was sampled on.
    pub map: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct ScenarioConfig<T> {
    pub robot_radius: T,
    pub min_goal_distance: T,
    /// `None` leaves the start-goal distance unbounded above.
    pub max_goal_distance: Option<T>,
    pub max_attempts: usize,
}

impl<T: Real> Default for ScenarioConfig<T> {
    fn default() -> Self {
        Self {
            robot_radius: T::lit(0.17),
            min_goal_distance: T::lit(2.0),
            max_goal_distance: None,
            max_attempts: 10_000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("no collision-free scenario found on map '{map}' after {attempts} attempts")]
pub struct SamplingError {
    pub map: String,
    pub attempts: usize,
}

/// Rejection-samples a collision-free start pose and goal.
pub fn sample_scenario<T: Real, R: Rng + ?Sized>(
    map: &WorldMap<T>,
    cfg: &ScenarioConfig<T>,
    rng: &mut R,
) -> Result<Scenario<T>, SamplingError> {
    let clearance = cfg.robot_radius + map.margin();
    let b = map.bounds();
    let err = || SamplingError { map: map.name().to_string(), attempts: cfg.max_attempts };
    if b.width() <= clearance * T::lit(2.0) || b.height() <= clearance * T::lit(2.0) {
        return Err(err());
    }
    let point = |rng: &mut R| {
        let x = b.min.x + clearance + T::lit(rng.random::<f64>()) * (b.width() - clearance * T::lit(2.0));
        let y = b.min.y + clearance + T::lit(rng.random::<f64>()) * (b.height() - clearance * T::lit(2.0));
        Vec2::new(x, y)
    };
    let mut attempts = 0;
    let start = loop {
        if attempts >= cfg.max_attempts {
            return Err(err());
        }
        attempts += 1;
        let p = point(rng);
        let theta = T::lit(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        let pose = RobotPose::new(p.x, p.y, theta);
        if !check_collision(map, &pose, clearance) {
            break pose;
        }
    };
    loop {
        if attempts >= cfg.max_attempts {
            return Err(err());
        }
        attempts += 1;
        let g = point(rng);
        let d = g.distance(start.position());
        if d < cfg.min_goal_distance || cfg.max_goal_distance.is_some_and(|m| d > m) {
            continue;
        }
        if !check_collision(map, &RobotPose::new(g.x, g.y, T::zero()), clearance) {
            return Ok(Scenario { start, goal: g, map: map.name().to_string() });
        }
    }
}

/// Writes scenarios as JSON lines, one object per line.
pub fn write_scenarios_jsonl<T: Real, W: Write>(mut out: W, scenarios: &[Scenario<T>]) -> io::Result<()> {
    for s in scenarios {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
