//! Planar geometry: vectors, oriented rectangles, segment predicates.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle` (radians, counter-clockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotate counter-clockwise by `angle`.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Vec2, t: f64) -> Self {
        self + (other - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into `[-π, π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Oriented rectangle given by center, heading and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    pub fn inflated(self, margin: f64) -> Self {
        Self {
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
            ..self
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let fwd = Vec2::from_angle(self.heading);
        [fwd, Vec2::new(-fwd.y, fwd.x)]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [fwd, left] = self.axes();
        let f = fwd * (self.length * 0.5);
        let l = left * (self.width * 0.5);
        let c = self.center;
        [c + f + l, c - f + l, c - f - l, c + f - l]
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in self.corners() {
            let d = p.dot(axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }

    /// Separating-axis overlap test. Touching rectangles count as overlapping.
    pub fn overlaps(&self, other: &Rect) -> bool {
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let (lo_a, hi_a) = self.project(axis);
            let (lo_b, hi_b) = other.project(axis);
            if hi_a < lo_b || hi_b < lo_a {
                return false;
            }
        }
        true
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        let local = (p - self.center).rotate(-self.heading);
        local.x.abs() <= self.length * 0.5 && local.y.abs() <= self.width * 0.5
    }

    /// Edge-to-edge distance; zero when the rectangles overlap.
    pub fn distance(&self, other: &Rect) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (e0, e1) = (b[i], b[(i + 1) % 4]);
            for &p in &a {
                best = best.min(point_segment_distance(p, e0, e1));
            }
            let (e0, e1) = (a[i], a[(i + 1) % 4]);
            for &p in &b {
                best = best.min(point_segment_distance(p, e0, e1));
            }
        }
        best
    }

    /// Approximate contact point: centroid of the overlap polygon, falling
    /// back to the midpoint of the centers for degenerate (touching) contact.
    pub fn contact_point(&self, other: &Rect) -> Vec2 {
        let clipped = clip_convex(&self.corners(), &other.corners());
        if clipped.is_empty() {
            return self.center.lerp(other.center, 0.5);
        }
        polygon_centroid(&clipped)
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Sign of the orientation of `c` relative to the directed line `a → b`,
/// computed exactly: positive for a counter-clockwise turn.
pub fn orientation(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    robust::orient2d(
        robust::Coord { x: a.x, y: a.y },
        robust::Coord { x: b.x, y: b.y },
        robust::Coord { x: c.x, y: c.y },
    )
}

fn within_box(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test with exact orientation predicates.
/// Degenerate (zero-length) segments are treated as points.
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let o1 = orientation(p1, p2, q1);
    let o2 = orientation(p1, p2, q2);
    let o3 = orientation(q1, q2, p1);
    let o4 = orientation(q1, q2, p2);

    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && within_box(p1, p2, q1))
        || (o2 == 0.0 && within_box(p1, p2, q2))
        || (o3 == 0.0 && within_box(q1, q2, p1))
        || (o4 == 0.0 && within_box(q1, q2, p2))
}

/// Axis-aligned bounding box of a segment.
#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of_segment(a: Vec2, b: Vec2) -> Self {
        Self {
            min: Vec2::new(a.x.min(b.x), a.y.min(b.y)),
            max: Vec2::new(a.x.max(b.x), a.y.max(b.y)),
        }
    }
}

// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output: Vec<Vec2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (c0, c1) = (clip[i], clip[(i + 1) % clip.len()]);
        let edge = c1 - c0;
        let inside = |p: Vec2| edge.cross(p - c0) >= 0.0;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (cur_in, prev_in) = (inside(cur), inside(prev));
            if cur_in != prev_in {
                let d = cur - prev;
                let denom = edge.cross(d);
                if denom != 0.0 {
                    let t = edge.cross(c0 - prev) / denom;
                    output.push(prev + d * t);
                }
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

fn polygon_centroid(poly: &[Vec2]) -> Vec2 {
    let mut area = 0.0;
    let mut acc = Vec2::ZERO;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let w = a.cross(b);
        area += w;
        acc += (a + b) * w;
    }
    if area.abs() < 1e-12 {
        let n = poly.len() as f64;
        let sum = poly.iter().fold(Vec2::ZERO, |s, &p| s + p);
        return sum * (1.0 / n);
    }
    acc * (1.0 / (3.0 * area))
}
