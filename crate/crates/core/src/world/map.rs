//! Static obstacle maps and their text format.
//!
//! Maps are TOML documents:
//!
//! ```toml
//! name = "cluttered"
//! margin = 0.05
//! bounds = { min = [0.0, 0.0], max = [8.0, 8.0] }
//!
//! [[circles]]
//! center = [2.0, 3.0]
//! radius = 0.4
//!
//! [[polygons]]
//! vertices = [[4.0, 4.0], [5.0, 4.0], [5.0, 5.0]]
//! ```
//!
//! All lengths are meters. The bounds rectangle acts as a wall.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{Aabb, Circle, ConvexPolygon, Obstacle, Vec2};
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("map text is not valid: {0}")]
    Parse(String),
    #[error("bounds must be finite with min < max")]
    InvalidBounds,
    #[error("margin must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("circle {index}: radius must be finite and positive, got {radius}")]
    InvalidRadius { index: usize, radius: f64 },
    #[error("polygon {index}: {reason}")]
    InvalidPolygon { index: usize, reason: &'static str },
    #[error("{kind} {index} lies outside the map bounds")]
    OutOfBounds { kind: &'static str, index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonSpec {
    pub vertices: Vec<[f64; 2]>,
}

/// Human-editable map description, as read from a map file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub name: String,
    #[serde(default)]
    pub margin: f64,
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub circles: Vec<CircleSpec>,
    #[serde(default)]
    pub polygons: Vec<PolygonSpec>,
}

impl MapSpec {
    pub fn from_toml(text: &str) -> Result<Self, MapError> {
        toml::from_str(text).map_err(|e| MapError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("map spec serializes")
    }

    /// Maps compiled into the crate, addressable by name from configs.
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "cluttered" => include_str!("../../../../maps/cluttered.toml"),
            "cluttered_test" => include_str!("../../../../maps/cluttered_test.toml"),
            "empty" => include_str!("../../../../maps/empty.toml"),
            _ => return None,
        };
        Some(Self::from_toml(text).expect("builtin map parses"))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["cluttered", "cluttered_test", "empty"]
    }
}

/// Immutable obstacle geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldMap<T> {
    name: String,
    bounds: Aabb<T>,
    obstacles: Vec<Obstacle<T>>,
    margin: T,
}

impl<T: Real> WorldMap<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bounds(&self) -> &Aabb<T> {
        &self.bounds
    }

    pub fn obstacles(&self) -> &[Obstacle<T>] {
        &self.obstacles
    }

    /// Extra free-space clearance required around sampled start and goal points.
    pub fn margin(&self) -> T {
        self.margin
    }

    /// Distance from `p` to the nearest obstacle surface or wall; negative when
    /// `p` is inside an obstacle or outside the bounds.
    pub fn signed_distance(&self, p: Vec2<T>) -> T {
        self.obstacles.iter().map(|o| o.signed_distance(p)).fold(self.bounds.interior_distance(p), T::min)
    }

    /// First hit along a unit ray, bounded by the walls.
    pub fn ray_distance(&self, origin: Vec2<T>, dir: Vec2<T>) -> T {
        self.obstacles
            .iter()
            .filter_map(|o| o.ray_hit(origin, dir))
            .fold(self.bounds.exit_distance(origin, dir), T::min)
    }

    pub fn point_in_obstacle(&self, p: Vec2<T>) -> bool {
        !self.bounds.contains(p) || self.obstacles.iter().any(|o| o.contains(p))
    }
}

/// Validates a map description and builds the immutable geometry.
pub fn load_map<T: Real>(spec: &MapSpec) -> Result<WorldMap<T>, MapError> {
    let [x0, y0] = spec.bounds.min;
    let [x1, y1] = spec.bounds.max;
    if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) || x0 >= x1 || y0 >= y1 {
        return Err(MapError::InvalidBounds);
    }
    if !spec.margin.is_finite() || spec.margin < 0.0 {
        return Err(MapError::InvalidMargin(spec.margin));
    }
    let inside = |x: f64, y: f64| x >= x0 && x <= x1 && y >= y0 && y <= y1;

    let mut obstacles = Vec::with_capacity(spec.circles.len() + spec.polygons.len());
    for (index, c) in spec.circles.iter().enumerate() {
        if !c.radius.is_finite() || c.radius <= 0.0 || !c.center.iter().all(|v| v.is_finite()) {
            return Err(MapError::InvalidRadius { index, radius: c.radius });
        }
        let [cx, cy] = c.center;
        if !inside(cx - c.radius, cy - c.radius) || !inside(cx + c.radius, cy + c.radius) {
            return Err(MapError::OutOfBounds { kind: "circle", index });
        }
        obstacles
            .push(Obstacle::Circle(Circle { center: Vec2::new(T::lit(cx), T::lit(cy)), radius: T::lit(c.radius) }));
    }
    for (index, p) in spec.polygons.iter().enumerate() {
        let mut verts = p.vertices.clone();
        if verts.len() < 3 {
            return Err(MapError::InvalidPolygon { index, reason: "needs at least 3 vertices" });
        }
        if !verts.iter().flatten().all(|v| v.is_finite()) {
            return Err(MapError::InvalidPolygon { index, reason: "non-finite vertex" });
        }
        let area2: f64 = (0..verts.len())
            .map(|i| {
                let [ax, ay] = verts[i];
                let [bx, by] = verts[(i + 1) % verts.len()];
                ax * by - ay * bx
            })
            .sum();
        if area2.abs() < 1e-12 {
            return Err(MapError::InvalidPolygon { index, reason: "zero area" });
        }
        if area2 < 0.0 {
            verts.reverse();
        }
        let n = verts.len();
        let convex = (0..n).all(|i| {
            let [ax, ay] = verts[i];
            let [bx, by] = verts[(i + 1) % n];
            let [cx, cy] = verts[(i + 2) % n];
            (bx - ax) * (cy - by) - (by - ay) * (cx - bx) >= 0.0
        });
        if !convex {
            return Err(MapError::InvalidPolygon { index, reason: "not convex" });
        }
        if !verts.iter().all(|&[x, y]| inside(x, y)) {
            return Err(MapError::OutOfBounds { kind: "polygon", index });
        }
        let verts = verts.into_iter().map(|[x, y]| Vec2::new(T::lit(x), T::lit(y))).collect();
        obstacles.push(Obstacle::Polygon(ConvexPolygon::from_ccw_unchecked(verts)));
    }

    Ok(WorldMap {
        name: spec.name.clone(),
        bounds: Aabb::new(Vec2::new(T::lit(x0), T::lit(y0)), Vec2::new(T::lit(x1), T::lit(y1))),
        obstacles,
        margin: T::lit(spec.margin),
    })
}

/// Knobs for procedurally generated clutter.
#[derive(Clone, Debug)]
pub struct ClutterParams {
    pub width: f64,
    pub height: f64,
    pub circles: usize,
    pub boxes: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Minimum gap between obstacles and to the walls, so corridors stay passable.
    pub min_gap: f64,
}

impl Default for ClutterParams {
    fn default() -> Self {
        Self { width: 8.0, height: 8.0, circles: 6, boxes: 6, min_size: 0.3, max_size: 0.6, min_gap: 0.6 }
    }
}

/// Generates a map of randomly placed circles and rotated boxes.
pub fn generate_cluttered<R: Rng>(name: &str, params: &ClutterParams, rng: &mut R) -> MapSpec {
    // bounding circles of placed obstacles
    let mut placed: Vec<([f64; 2], f64)> = Vec::new();
    let mut circles = Vec::new();
    let mut polygons = Vec::new();
    let want = params.circles + params.boxes;
    let mut attempts = 0;
    while placed.len() < want && attempts < 10_000 {
        attempts += 1;
        let is_circle = circles.len() < params.circles && (polygons.len() >= params.boxes || rng.random_bool(0.5));
        let size = rng.random_range(params.min_size..=params.max_size);
        // bounding radius
        let reach = if is_circle { size } else { size * std::f64::consts::SQRT_2 };
        let lo = reach + params.min_gap;
        if params.width - lo <= lo || params.height - lo <= lo {
            break;
        }
        let cx = rng.random_range(lo..params.width - lo);
        let cy = rng.random_range(lo..params.height - lo);
        let clear = placed
            .iter()
            .all(|&([px, py], pr)| ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() >= pr + reach + params.min_gap);
        if !clear {
            continue;
        }
        placed.push(([cx, cy], reach));
        if is_circle {
            circles.push(CircleSpec { center: [round_mm(cx), round_mm(cy)], radius: round_mm(size) });
        } else {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let vertices = (0..4)
                .map(|k| {
                    let a = angle + std::f64::consts::FRAC_PI_4 + k as f64 * std::f64::consts::FRAC_PI_2;
                    [round_mm(cx + reach * a.cos()), round_mm(cy + reach * a.sin())]
                })
                .collect();
            polygons.push(PolygonSpec { vertices });
        }
    }
    MapSpec {
        name: name.to_string(),
        margin: 0.05,
        bounds: BoundsSpec { min: [0.0, 0.0], max: [params.width, params.height] },
        circles,
        polygons,
    }
}

fn round_mm(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
