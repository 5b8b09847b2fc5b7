//! Small geometric value types shared across stages.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// Integer pixel coordinate. `x` grows to the right, `y` grows downwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// True when `other` is one of the eight neighbours of `self`.
    pub fn touches(self, other: Pixel) -> bool {
        self != other && (self.x - other.x).abs() <= 1 && (self.y - other.y).abs() <= 1
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.x as f64, self.y as f64)
    }

    /// The eight neighbours in clockwise order starting east.
    pub fn neighbours(self) -> [Pixel; 8] {
        NEIGHBOUR_OFFSETS.map(|(dx, dy)| Pixel::new(self.x + dx, self.y + dy))
    }
}

/// Clockwise 8-neighbourhood offsets starting east (image coordinates, y down).
pub const NEIGHBOUR_OFFSETS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Step length between two 8-adjacent pixels: 1 for cardinal, √2 for diagonal moves.
pub fn step_length(a: Pixel, b: Pixel) -> f64 {
    if a.x != b.x && a.y != b.y {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

/// Summed step length of an ordered 8-connected chain, closing the loop when `cyclic`.
pub fn chain_length(points: &[Pixel], cyclic: bool) -> f64 {
    let mut len: f64 = points.windows(2).map(|w| step_length(w[0], w[1])).sum();
    if cyclic && points.len() > 2 {
        len += step_length(points[points.len() - 1], points[0]);
    }
    len
}

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

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction, or zero for a zero vector.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            Vec2::new(self.x / n, self.y / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn round(self) -> Pixel {
        Pixel::new(self.x.round() as i32, self.y.round() as i32)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Wraps an angle difference into (−π, π].
pub fn wrap_pi(mut a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    a %= TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

/// Normalizes an axis orientation into [0, π).
pub fn wrap_half_turn(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Signed difference between two axis orientations, in (−π/2, π/2].
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut d = (a - b).rem_euclid(PI);
    if d > FRAC_PI_2 {
        d -= PI;
    }
    d
}

/// Zero-centred Gaussian with peak 1. A non-positive `sigma` scores only exact zeros.
pub fn gaussian_score(value: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if value == 0.0 { 1.0 } else { 0.0 };
    }
    (-0.5 * (value / sigma).powi(2)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_length_counts_diagonals() {
        let pts = [Pixel::new(0, 0), Pixel::new(1, 0), Pixel::new(2, 1)];
        assert!((chain_length(&pts, false) - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn axis_diff_wraps() {
        use std::f64::consts::PI;
        assert!((axis_angle_diff(0.05, PI - 0.05) - 0.1).abs() < 1e-12);
        assert!((axis_angle_diff(PI - 0.05, 0.05) + 0.1).abs() < 1e-12);
        assert!(wrap_half_turn(-0.1) > 3.0);
    }
}
