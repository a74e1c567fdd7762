//! Planar primitives: vectors, circles, convex polygons and ray queries.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_angle(angle: T) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn cast<U: Real>(self) -> Vec2<U> {
        Vec2::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()))
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec2<T>, max: Vec2<T>) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> T {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> T {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Distance from `p` to the nearest wall; negative outside the box.
    pub fn interior_distance(&self, p: Vec2<T>) -> T {
        (p.x - self.min.x).min(self.max.x - p.x).min(p.y - self.min.y).min(self.max.y - p.y)
    }

    /// Ray parameter at which a ray starting inside leaves the box.
    pub fn exit_distance(&self, origin: Vec2<T>, dir: Vec2<T>) -> T {
        let mut t = T::infinity();
        if dir.x > T::zero() {
            t = t.min((self.max.x - origin.x) / dir.x);
        } else if dir.x < T::zero() {
            t = t.min((self.min.x - origin.x) / dir.x);
        }
        if dir.y > T::zero() {
            t = t.min((self.max.y - origin.y) / dir.y);
        } else if dir.y < T::zero() {
            t = t.min((self.min.y - origin.y) / dir.y);
        }
        t.max(T::zero())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle<T> {
    pub center: Vec2<T>,
    pub radius: T,
}

impl<T: Real> Circle<T> {
    pub fn signed_distance(&self, p: Vec2<T>) -> T {
        p.distance(self.center) - self.radius
    }

    /// First non-negative hit parameter along a unit-direction ray.
    pub fn ray_hit(&self, origin: Vec2<T>, dir: Vec2<T>) -> Option<T> {
        let oc = origin - self.center;
        let c = oc.norm_squared() - self.radius * self.radius;
        if c <= T::zero() {
            return Some(T::zero());
        }
        let b = dir.dot(oc);
        if b > T::zero() {
            // pointing away and outside
            return None;
        }
        let disc = b * b - c;
        if disc < T::zero() {
            return None;
        }
        Some((-b - disc.sqrt()).max(T::zero()))
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon<T> {
    vertices: Vec<Vec2<T>>,
}

impl<T: Real> ConvexPolygon<T> {
    /// Caller guarantees convexity and CCW order; see `world::map` for validation.
    pub(crate) fn from_ccw_unchecked(vertices: Vec<Vec2<T>>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Vec2<T>] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2<T>, Vec2<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        self.edges().all(|(a, b)| (b - a).cross(p - a) >= T::zero())
    }

    pub fn signed_distance(&self, p: Vec2<T>) -> T {
        let d = self.edges().map(|(a, b)| point_segment_distance(p, a, b)).fold(T::infinity(), T::min);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    pub fn ray_hit(&self, origin: Vec2<T>, dir: Vec2<T>) -> Option<T> {
        if self.contains(origin) {
            return Some(T::zero());
        }
        self.edges().filter_map(|(a, b)| ray_segment_hit(origin, dir, a, b)).fold(None, |best, t| match best {
            Some(b) if b <= t => Some(b),
            _ => Some(t),
        })
    }
}

pub fn point_segment_distance<T: Real>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == T::zero() {
        return p.distance(a);
    }
    let s = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.distance(a + ab * s)
}

/// Hit parameter of a ray against segment `ab`, if any.
pub fn ray_segment_hit<T: Real>(origin: Vec2<T>, dir: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> Option<T> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom == T::zero() {
        return None;
    }
    let ao = a - origin;
    let t = ao.cross(e) / denom;
    let s = ao.cross(dir) / denom;
    if t >= T::zero() && s >= T::zero() && s <= T::one() {
        Some(t)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle<T> {
    Circle(Circle<T>),
    Polygon(ConvexPolygon<T>),
}

impl<T: Real> Obstacle<T> {
    pub fn signed_distance(&self, p: Vec2<T>) -> T {
        match self {
            Obstacle::Circle(c) => c.signed_distance(p),
            Obstacle::Polygon(poly) => poly.signed_distance(p),
        }
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        match self {
            Obstacle::Circle(c) => c.signed_distance(p) <= T::zero(),
            Obstacle::Polygon(poly) => poly.contains(p),
        }
    }

    pub fn ray_hit(&self, origin: Vec2<T>, dir: Vec2<T>) -> Option<T> {
        match self {
            Obstacle::Circle(c) => c.ray_hit(origin, dir),
            Obstacle::Polygon(poly) => poly.ray_hit(origin, dir),
        }
    }
}
