//! Unicycle kinematics and the swept, collision-clamped simulation step.

use serde::{Deserialize, Serialize};

use super::geometry::Vec2;
use super::lidar::{raycast_scan, LidarConfig, LidarScan};
use super::map::WorldMap;
use crate::scalar::normalize_angle;
use crate::Real;

pub const MAX_LINEAR_VELOCITY: f64 = 0.5;
pub const MAX_ANGULAR_VELOCITY: f64 = std::f64::consts::FRAC_PI_2;

/// Planar pose; heading is kept in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotPose<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> RobotPose<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    #[inline]
    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }
}

/// Velocity command. Linear in `[0, 0.5]` m/s, angular in `[-pi/2, pi/2]` rad/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action<T> {
    pub v: T,
    pub omega: T,
}

impl<T: Real> Action<T> {
    pub fn new(v: T, omega: T) -> Self {
        Self { v, omega }
    }

    /// Projects onto the action box.
    pub fn clamped(v: T, omega: T) -> Self {
        let w = T::lit(MAX_ANGULAR_VELOCITY);
        Self { v: v.max(T::zero()).min(T::lit(MAX_LINEAR_VELOCITY)), omega: omega.max(-w).min(w) }
    }

    pub fn in_bounds(&self) -> bool {
        let w = T::lit(MAX_ANGULAR_VELOCITY);
        self.v >= T::zero() && self.v <= T::lit(MAX_LINEAR_VELOCITY) && self.omega >= -w && self.omega <= w
    }

    pub fn low() -> [T; 2] {
        [T::zero(), -T::lit(MAX_ANGULAR_VELOCITY)]
    }

    pub fn high() -> [T; 2] {
        [T::lit(MAX_LINEAR_VELOCITY), T::lit(MAX_ANGULAR_VELOCITY)]
    }
}

/// Exact-arc unicycle integration over `dt` seconds.
pub fn step_dynamics<T: Real>(pose: RobotPose<T>, action: Action<T>, dt: T) -> RobotPose<T> {
    let RobotPose { x, y, theta } = pose;
    let Action { v, omega } = action;
    let turned = theta + omega * dt;
    let (nx, ny) = if omega.abs() < T::lit(1e-9) {
        // second-order expansion keeps the small-omega case smooth
        let mid = theta + omega * dt * T::lit(0.5);
        (x + v * dt * mid.cos(), y + v * dt * mid.sin())
    } else {
        let r = v / omega;
        (x + r * (turned.sin() - theta.sin()), y - r * (turned.cos() - theta.cos()))
    };
    RobotPose::new(nx, ny, turned)
}

/// True iff a disc of `radius` at the pose touches an obstacle or wall.
pub fn check_collision<T: Real>(map: &WorldMap<T>, pose: &RobotPose<T>, radius: T) -> bool {
    map.signed_distance(pose.position()) < radius
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct SimConfig<T> {
    /// Control period, seconds.
    pub dt: T,
    pub robot_radius: T,
    pub goal_radius: T,
    /// Collision checks per control period along the swept path.
    pub substeps: usize,
    pub lidar: LidarConfig<T>,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(0.2),
            robot_radius: T::lit(0.17),
            goal_radius: T::lit(0.3),
            substeps: 10,
            lidar: LidarConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome<T> {
    pub next_pose: RobotPose<T>,
    pub collided: bool,
    pub goal_reached: bool,
    pub scan: LidarScan<T>,
}

/// Advances the robot one control period.
///
/// The path is checked at `cfg.substeps` evenly spaced points. At the first
/// contact the motion stops at the previous collision-free point, keeping the
/// full commanded heading change. Whichever of contact and goal entry happens
/// first along the path decides the outcome.
pub fn advance<T: Real>(
    map: &WorldMap<T>,
    pose: RobotPose<T>,
    action: Action<T>,
    goal: Vec2<T>,
    cfg: &SimConfig<T>,
) -> SimOutcome<T> {
    let n = cfg.substeps.max(1);
    let mut last_free = pose;
    let mut collided = false;
    let mut goal_reached = false;
    let mut end = step_dynamics(pose, action, cfg.dt);
    for k in 1..=n {
        let frac = T::lit(k as f64 / n as f64);
        let sub = if k == n { end } else { step_dynamics(pose, action, cfg.dt * frac) };
        if check_collision(map, &sub, cfg.robot_radius) {
            collided = true;
            end = RobotPose::new(last_free.x, last_free.y, pose.theta + action.omega * cfg.dt);
            break;
        }
        if sub.position().distance(goal) < cfg.goal_radius {
            goal_reached = true;
            end = sub;
            break;
        }
        last_free = sub;
    }
    let scan = raycast_scan(map, &end, &cfg.lidar);
    SimOutcome { next_pose: end, collided, goal_reached, scan }
}
