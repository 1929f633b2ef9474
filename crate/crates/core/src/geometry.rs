//! Planar rigid transforms and small linear-algebra helpers.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// A 2D point or direction in meters.
pub type Point2 = Vector2<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid can land exactly on TAU for tiny negative inputs.
    if a <= -PI {
        a += TAU;
    }
    a
}

/// A rigid transform in SE(2): rotation by `theta`, then translation by `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `self ⊕ other`: the transform that first applies `other`, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// The pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose2D) -> Pose2D {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

pub fn compose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

pub fn transform_points(pose: &Pose2D, points: &[Point2]) -> Vec<Point2> {
    let (s, c) = pose.theta.sin_cos();
    points
        .iter()
        .map(|p| Point2::new(pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y))
        .collect()
}

/// Eigen-decomposition of a symmetric 2x2 matrix.
///
/// Returns `(small, large, v_small, v_large)` with unit eigenvectors.
pub(crate) fn sym2_eigen(m: &Matrix2<f64>) -> (f64, f64, Point2, Point2) {
    let a = m[(0, 0)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let d = m[(1, 1)];
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let large = half_tr + disc;
    let small = half_tr - disc;
    // Angle of the dominant eigenvector.
    let phi = 0.5 * (2.0 * b).atan2(a - d);
    let v_large = Point2::new(phi.cos(), phi.sin());
    let v_small = Point2::new(-v_large.y, v_large.x);
    (small, large, v_small, v_large)
}
