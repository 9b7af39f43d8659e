//! Planar pose algebra and oriented-box collision tests.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

const TWO_PI: f64 = 2.0 * PI;

/// Wraps an angle into the half-open interval (-π, π].
///
/// Values already inside the interval are returned untouched, which makes
/// the function exactly idempotent.
pub fn normalize_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFinite("angle"));
    }
    Ok(wrap_angle(a))
}

/// Infallible variant of [`normalize_angle`] for values known to be finite.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        r = 0.0;
    }
    if r > PI {
        r -= TWO_PI;
    }
    // rem_euclid rounding can land exactly on -π
    if r <= -PI {
        r = PI;
    }
    r
}

/// Planar pose: position in meters, heading in radians within (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    /// Builds a pose, wrapping the heading. Panics on non-finite input; use
    /// [`Pose2D::try_new`] for untrusted values.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self::try_new(x, y, theta).expect("finite pose")
    }

    pub fn try_new(x: f64, y: f64, theta: f64) -> Result<Self, GeometryError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GeometryError::NonFinite("position"));
        }
        Ok(Self {
            x,
            y,
            theta: normalize_angle(theta)?,
        })
    }

    pub const fn origin() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Expresses `self` (given in the world frame) in the local frame `frame`.
    pub fn in_frame(&self, frame: &Pose2D) -> Pose2D {
        let (s, c) = frame.theta.sin_cos();
        let dx = self.x - frame.x;
        let dy = self.y - frame.y;
        Pose2D {
            x: c * dx + s * dy,
            y: -s * dx + c * dy,
            theta: wrap_angle(self.theta - frame.theta),
        }
    }

    /// Forward transform: maps a pose given in the local frame `self` to the world.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D {
            x: self.x + c * local.x - s * local.y,
            y: self.y + s * local.x + c * local.y,
            theta: wrap_angle(self.theta + local.theta),
        }
    }

    /// Maps a point given in this pose's local frame to the world.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rigid-body inverse transform of `world` into `frame`; the heading is wrapped.
pub fn pose_in_frame(world: &Pose2D, frame: &Pose2D) -> Result<Pose2D, GeometryError> {
    if !world.is_finite() || !frame.is_finite() {
        return Err(GeometryError::NonFinite("pose"));
    }
    Ok(world.in_frame(frame))
}

/// Rectangle with a pose; half extents are measured along the heading
/// (length) and across it (width).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2D,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, half_length: f64, half_width: f64) -> Result<Self, GeometryError> {
        if !(half_length > 0.0 && half_width > 0.0) {
            return Err(GeometryError::InvalidBox {
                half_length,
                half_width,
            });
        }
        Ok(Self {
            center,
            half_length,
            half_width,
        })
    }

    /// Grows both half extents by `margin`.
    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            center: self.center,
            half_length: self.half_length + margin,
            half_width: self.half_width + margin,
        }
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (l, w) = (self.half_length, self.half_width);
        [
            self.center.transform_point(l, w),
            self.center.transform_point(-l, w),
            self.center.transform_point(-l, -w),
            self.center.transform_point(l, -w),
        ]
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.center.theta.sin_cos();
        let dx = px - self.center.x;
        let dy = py - self.center.y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.half_length && ly.abs() <= self.half_width
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.center.theta.sin_cos();
        [(c, s), (-s, c)]
    }

    /// Radius of the projection of this box onto a unit axis.
    fn projected_radius(&self, axis: (f64, f64)) -> f64 {
        let [u, v] = self.axes();
        self.half_length * (u.0 * axis.0 + u.1 * axis.1).abs()
            + self.half_width * (v.0 * axis.0 + v.1 * axis.1).abs()
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let cs = self.corners();
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in cs {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }
}

/// Separating-axis overlap test over the four face normals; touching boxes
/// count as overlapping.
pub fn obb_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    let d = (b.center.x - a.center.x, b.center.y - a.center.y);
    a.axes().into_iter().chain(b.axes()).all(|axis| {
        let dist = (d.0 * axis.0 + d.1 * axis.1).abs();
        dist <= a.projected_radius(axis) + b.projected_radius(axis)
    })
}
