//! Policy inputs and rewards.
//!
//! A state is `[l_1 .. l_m, d_goal, phi_goal, v, omega]` where each lidar
//! feature is `1 / (range - beta)` for a trainable offset `beta`. Replay keeps
//! the raw ranges ([`RawObservation`]) and the transform is applied when a
//! batch is assembled, so a retrained `beta` also applies to old experience.

use serde::{Deserialize, Serialize};

use crate::episode::EventKind;
use crate::scalar::normalize_angle;
use crate::world::{Action, LidarScan, RobotPose, Vec2};
use crate::Real;

/// Result of the reciprocal transform; `clamped` marks a singularity guard hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transformed<T> {
    pub value: T,
    pub clamped: bool,
}

/// `1 / (reading - beta)`, with the denominator floored at `eps`.
#[inline]
pub fn reciprocal_transform<T: Real>(reading: T, beta: T, eps: T) -> Transformed<T> {
    let gap = reading - beta;
    if gap < eps || gap.is_nan() {
        Transformed { value: eps.recip(), clamped: true }
    } else {
        Transformed { value: gap.recip(), clamped: false }
    }
}

/// The trainable lidar offset together with its legal range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParam<T> {
    beta: T,
    /// Minimum allowed `reading - beta`.
    pub eps: T,
    /// Smallest reading the sensor can report in a collision-free pose.
    pub reading_floor: T,
}

impl<T: Real> TransformParam<T> {
    pub fn new(beta: T, eps: T, reading_floor: T) -> Self {
        let mut p = Self { beta: T::zero(), eps, reading_floor };
        p.set_beta(beta);
        p
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn max_beta(&self) -> T {
        self.reading_floor - self.eps
    }

    /// Stores `beta`, clamped below `reading_floor - eps`.
    pub fn set_beta(&mut self, beta: T) {
        self.beta = beta.min(self.max_beta());
    }

    #[inline]
    pub fn apply(&self, reading: T) -> Transformed<T> {
        reciprocal_transform(reading, self.beta, self.eps)
    }
}

impl<T: Real> Default for TransformParam<T> {
    fn default() -> Self {
        Self::new(T::zero(), T::lit(0.05), T::lit(0.17))
    }
}

/// Distance and body-frame bearing to the goal; bearing in `(-pi, pi]`.
pub fn goal_polar<T: Real>(pose: &RobotPose<T>, goal: Vec2<T>) -> (T, T) {
    let d = goal - pose.position();
    (d.norm(), normalize_angle(d.y.atan2(d.x) - pose.theta))
}

/// Observation before the lidar transform. This is what replay stores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawObservation<T> {
    pub ranges: Vec<T>,
    pub goal_distance: T,
    pub goal_bearing: T,
    pub v: T,
    pub omega: T,
}

impl<T: Real> RawObservation<T> {
    pub fn new(scan: &LidarScan<T>, pose: &RobotPose<T>, goal: Vec2<T>, velocity: Action<T>) -> Self {
        let (goal_distance, goal_bearing) = goal_polar(pose, goal);
        Self { ranges: scan.ranges.clone(), goal_distance, goal_bearing, v: velocity.v, omega: velocity.omega }
    }

    /// Length of the state vector built from this observation.
    pub fn state_dim(&self) -> usize {
        self.ranges.len() + 4
    }

    pub fn to_state(&self, param: &TransformParam<T>) -> StateVector<T> {
        let mut v = Vec::with_capacity(self.state_dim());
        v.extend(self.ranges.iter().map(|&r| param.apply(r).value));
        v.extend([self.goal_distance, self.goal_bearing, self.v, self.omega]);
        StateVector(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T>(pub Vec<T>);

impl<T: Real> StateVector<T> {
    fn beams(&self) -> usize {
        self.0.len() - 4
    }

    pub fn lidar(&self) -> &[T] {
        &self.0[..self.beams()]
    }

    pub fn goal_distance(&self) -> T {
        self.0[self.beams()]
    }

    pub fn goal_bearing(&self) -> T {
        self.0[self.beams() + 1]
    }

    pub fn v(&self) -> T {
        self.0[self.beams() + 2]
    }

    pub fn omega(&self) -> T {
        self.0[self.beams() + 3]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

pub fn build_observation<T: Real>(
    scan: &LidarScan<T>,
    pose: &RobotPose<T>,
    goal: Vec2<T>,
    velocity: Action<T>,
    param: &TransformParam<T>,
) -> StateVector<T> {
    RawObservation::new(scan, pose, goal, velocity).to_state(param)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct RewardParams<T> {
    pub success: T,
    pub collision: T,
    /// Progress shaping per meter.
    pub progress_scale: T,
}

impl<T: Real> Default for RewardParams<T> {
    fn default() -> Self {
        Self { success: T::lit(10.0), collision: T::lit(-10.0), progress_scale: T::lit(5.0) }
    }
}

/// Terminal rewards for success and collision, progress shaping otherwise.
pub fn compute_reward<T: Real>(event: EventKind, dist_now: T, dist_next: T, params: &RewardParams<T>) -> T {
    match event {
        EventKind::Success => params.success,
        EventKind::Collision => params.collision,
        EventKind::Timeout | EventKind::None => params.progress_scale * (dist_now - dist_next),
    }
}
