//! Small geometry helpers shared across the crate.

use std::f64::consts::PI;

/// A point in world coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Normalize an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Shortest signed angular difference `b - a`, in (-pi, pi].
pub fn angle_diff(b: f64, a: f64) -> f64 {
    wrap_angle(b - a)
}

/// Rotate a planar vector by `yaw`.
pub fn rotate2(x: f64, y: f64, yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Inverse-rotate a planar vector by `yaw` (world -> body).
pub fn rotate2_inv(x: f64, y: f64, yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (c * x + s * y, -s * x + c * y)
}
