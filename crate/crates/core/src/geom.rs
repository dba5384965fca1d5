//! Small planar geometry helpers shared by the planner, behaviours and simulator.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// A planar robot configuration. `yaw` is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Configuration {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn distance(&self, other: &Configuration) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn heading(&self) -> (f64, f64) {
        (self.yaw.cos(), self.yaw.sin())
    }

    /// Transforms a point from the body frame (x forward, y left) into the world frame.
    pub fn to_world(&self, bx: f64, by: f64) -> (f64, f64) {
        let (c, s) = self.heading();
        (self.x + c * bx - s * by, self.y + s * bx + c * by)
    }

    /// Transforms a world point into the body frame.
    pub fn to_body(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (c, s) = self.heading();
        let dx = wx - self.x;
        let dy = wy - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Axis-aligned rectangle in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn centered(cx: f64, cy: f64, half_x: f64, half_y: f64) -> Self {
        Self {
            min_x: cx - half_x,
            min_y: cy - half_y,
            max_x: cx + half_x,
            max_y: cy + half_y,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_keeps_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(-5.0 * PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn body_world_round_trip() {
        let c = Configuration::new(1.0, -2.0, 0.7);
        let (wx, wy) = c.to_world(0.3, -0.4);
        let (bx, by) = c.to_body(wx, wy);
        assert!((bx - 0.3).abs() < 1e-12 && (by + 0.4).abs() < 1e-12);
    }
}
