//! Raycast range finder.

use serde::{Deserialize, Serialize};

use super::dynamics::RobotPose;
use super::geometry::Vec2;
use super::map::WorldMap;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct LidarConfig<T> {
    pub beams: usize,
    /// Field of view, radians. A value of 2*pi or more gives a full ring.
    pub fov: T,
    pub max_range: T,
    /// Floor applied to readings so they stay strictly positive.
    pub min_range: T,
}

impl<T: Real> Default for LidarConfig<T> {
    fn default() -> Self {
        Self { beams: 24, fov: T::lit(270f64.to_radians()), max_range: T::lit(6.0), min_range: T::lit(1e-3) }
    }
}

impl<T: Real> LidarConfig<T> {
    /// Angular spacing between adjacent beams.
    pub fn increment(&self) -> T {
        if self.beams <= 1 {
            T::zero()
        } else if self.fov >= T::TAU() {
            T::TAU() / T::lit(self.beams as f64)
        } else {
            self.fov / T::lit((self.beams - 1) as f64)
        }
    }

    /// Beam angle relative to the heading. Beam 0 is the leftmost beam and
    /// angles decrease clockwise from there.
    pub fn beam_angle(&self, index: usize) -> T {
        let first = if self.fov >= T::TAU() { T::zero() } else { self.fov * T::lit(0.5) };
        first - self.increment() * T::lit(index as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarScan<T> {
    /// Meters, ordered by beam index.
    pub ranges: Vec<T>,
    pub max_range: T,
}

impl<T: Real> LidarScan<T> {
    pub fn min_reading(&self) -> T {
        self.ranges.iter().copied().fold(self.max_range, T::min)
    }
}

/// Distance to the first surface along each beam, clamped to the sensor range.
pub fn raycast_scan<T: Real>(map: &WorldMap<T>, pose: &RobotPose<T>, cfg: &LidarConfig<T>) -> LidarScan<T> {
    let origin = pose.position();
    let ranges = (0..cfg.beams)
        .map(|i| {
            let dir = Vec2::from_angle(pose.theta + cfg.beam_angle(i));
            map.ray_distance(origin, dir).max(cfg.min_range).min(cfg.max_range)
        })
        .collect();
    LidarScan { ranges, max_range: cfg.max_range }
}
