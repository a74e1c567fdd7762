//! Deterministic 2D navigation world: static obstacle maps, unicycle motion,
//! raycast lidar and collision handling.
//!
//! Maps are immutable once loaded and can be shared between threads; all
//! per-rollout state lives in caller-owned values.

pub mod dynamics;
pub mod geometry;
pub mod lidar;
pub mod map;
pub mod scenario;

pub use dynamics::{
    advance, check_collision, step_dynamics, Action, RobotPose, SimConfig, SimOutcome, MAX_ANGULAR_VELOCITY,
    MAX_LINEAR_VELOCITY,
};
pub use geometry::{Aabb, Circle, ConvexPolygon, Obstacle, Vec2};
pub use lidar::{raycast_scan, LidarConfig, LidarScan};
pub use map::{generate_cluttered, load_map, ClutterParams, MapError, MapSpec, WorldMap};
pub use scenario::{sample_scenario, write_scenarios_jsonl, SamplingError, Scenario, ScenarioConfig};
