//! Planar geometry helpers shared by the world simulator and the router.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Bearing of this vector in radians, normalized to [0, 2π).
    pub fn bearing(self) -> f64 {
        normalize_angle(self.y.atan2(self.x))
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into [0, 2π).
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Wraps an angle difference into (-π, π].
pub fn signed_angle(theta: f64) -> f64 {
    let wrapped = normalize_angle(theta);
    if wrapped > std::f64::consts::PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Closest point on the segment to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let ab = self.b - self.a;
        let len2 = ab.dot(ab);
        if len2 == 0.0 {
            return self.a;
        }
        let t = ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0);
        self.a + ab * t
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.closest_point(p).distance(p)
    }
}

/// Distance along a ray from `origin` in unit direction `dir` to `seg`.
///
/// Returns `None` when the ray misses. A ray running collinear with the
/// segment reports the nearest collinear point.
pub fn ray_segment_distance(origin: Vec2, dir: Vec2, seg: &Segment) -> Option<f64> {
    let edge = seg.b - seg.a;
    let denom = dir.cross(edge);
    let to_a = seg.a - origin;
    if denom.abs() < 1e-12 {
        if to_a.cross(dir).abs() > 1e-9 {
            return None;
        }
        let ta = to_a.dot(dir);
        let tb = (seg.b - origin).dot(dir);
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        if hi < 0.0 {
            return None;
        }
        return Some(lo.max(0.0));
    }
    let t = to_a.cross(edge) / denom;
    let u = to_a.cross(dir) / denom;
    if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Fraction along `path` (0..=1) at which it first touches `seg`.
pub fn segment_intersection_param(path: &Segment, seg: &Segment) -> Option<f64> {
    let len = path.length();
    if len == 0.0 {
        return None;
    }
    let dir = (path.b - path.a) * (1.0 / len);
    ray_segment_distance(path.a, dir, seg)
        .filter(|&t| t <= len)
        .map(|t| t / len)
}

/// Even-odd containment test. Points on the boundary count as outside.
pub fn point_in_polygon(p: Vec2, vertices: &[Vec2]) -> bool {
    if vertices.len() < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        let (vi, vj) = (vertices[i], vertices[j]);
        if Segment::new(vi, vj).distance_to(p) < 1e-12 {
            return false;
        }
        if (vi.y > p.y) != (vj.y > p.y) {
            let x_cross = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Unsigned shoelace area.
pub fn polygon_area(vertices: &[Vec2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, v) in vertices.iter().enumerate() {
        let w = vertices[(i + 1) % vertices.len()];
        twice += v.cross(w);
    }
    twice.abs() / 2.0
}
