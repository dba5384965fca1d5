//! Tilted multi-beam lidar on a rotating mount.

use std::f64::consts::TAU;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::{slab, WorldModel};
use crate::error::{Error, Result};
use crate::occupancy::LidarRay;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub channels: usize,
    pub min_elevation: f64,
    pub max_elevation: f64,
    /// Downward tilt of the spin axis (rad).
    pub tilt: f64,
    pub spin_hz: f64,
    pub mount_hz: f64,
    pub points_per_second: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub range_sigma: f64,
    /// Sensor origin in the body frame (x forward, z up from the ground contact).
    pub mount_offset: [f64; 3],
    /// Mount angle at t = 0 (rad).
    pub mount_phase: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            channels: 16,
            min_elevation: -15f64.to_radians(),
            max_elevation: 15f64.to_radians(),
            tilt: 30f64.to_radians(),
            spin_hz: 10.0,
            mount_hz: 0.5,
            points_per_second: 30_000.0,
            range_min: 0.3,
            range_max: 15.0,
            range_sigma: 0.01,
            mount_offset: [0.4, 0.0, 0.8],
            mount_phase: 0.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("sensor needs at least one channel".into()));
        }
        if !(self.spin_hz > 0.0 && self.mount_hz > 0.0 && self.points_per_second > 0.0) {
            return Err(Error::Config("sensor rates must be positive".into()));
        }
        if !(self.range_min >= 0.0 && self.range_min < self.range_max) {
            return Err(Error::Config("sensor range_min must be below range_max".into()));
        }
        if !(self.range_sigma >= 0.0) {
            return Err(Error::Config("sensor range_sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn elevations(&self) -> Vec<f64> {
        if self.channels == 1 {
            return vec![0.5 * (self.min_elevation + self.max_elevation)];
        }
        let step = (self.max_elevation - self.min_elevation) / (self.channels - 1) as f64;
        (0..self.channels).map(|i| self.min_elevation + i as f64 * step).collect()
    }

    /// Beam direction in the body frame at time `t`.
    pub fn beam_direction(&self, elevation: f64, t: f64) -> Vector3<f64> {
        let az = TAU * self.spin_hz * t;
        let local = Vector3::new(elevation.cos() * az.cos(), elevation.cos() * az.sin(), elevation.sin());
        let tilt = Rotation3::from_axis_angle(&Vector3::y_axis(), self.tilt);
        let mount = Rotation3::from_axis_angle(&Vector3::z_axis(), TAU * self.mount_hz * t + self.mount_phase);
        mount * (tilt * local)
    }
}

/// Full 6-DoF pose of the vehicle base (ground contact point under the body centre).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    /// Nose-up positive.
    pub pitch: f64,
    /// Left side up positive.
    pub roll: f64,
}

impl Pose6 {
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, -self.pitch, self.yaw)
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.rotation() * Point3::new(p[0], p[1], p[2]);
        [w.x + self.x, w.y + self.y, w.z + self.z]
    }
}

/// Body box used as an occluder, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BodyBox {
    fn intersect(&self, pose: &Pose6, o: [f64; 3], d: Vector3<f64>, t_max: f64) -> Option<f64> {
        let inv = pose.rotation().inverse();
        let lo = inv * Vector3::new(o[0] - pose.x, o[1] - pose.y, o[2] - pose.z);
        let ld = inv * d;
        slab([lo.x, lo.y, lo.z], [ld.x, ld.y, ld.z], self.min, self.max, t_max)
    }
}

/// Casts every beam fired in `[t0, t1)` and returns the hits.
///
/// Firing instants are on a fixed global schedule, so consecutive batches tile
/// time without gaps or duplicates. Beams that find nothing within range, or
/// that strike the vehicle body, are dropped.
pub fn raycast_scan<R: Rng + ?Sized>(
    world: &WorldModel,
    pose: &Pose6,
    body: &BodyBox,
    t0: f64,
    t1: f64,
    sm: &SensorModel,
    rng: &mut R,
) -> Vec<LidarRay> {
    let firing_hz = sm.points_per_second / sm.channels as f64;
    let k0 = (t0 * firing_hz - 1e-9).ceil().max(0.0) as u64;
    let k1 = (t1 * firing_hz - 1e-9).ceil().max(0.0) as u64;
    let elevations = sm.elevations();
    let noise = Normal::new(0.0, sm.range_sigma.max(0.0)).expect("finite sigma");
    let rot = pose.rotation();
    let origin = pose.to_world(sm.mount_offset);
    let mut out = Vec::with_capacity(((k1 - k0) as usize) * elevations.len());
    for k in k0..k1 {
        let t = k as f64 / firing_hz;
        for &el in &elevations {
            let d = rot * sm.beam_direction(el, t);
            let dv = [d.x, d.y, d.z];
            let Some(range) = world.raycast(origin, dv, sm.range_max) else {
                continue;
            };
            if body.intersect(pose, origin, d, range).is_some() {
                continue;
            }
            let noisy = range + if sm.range_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            if noisy < sm.range_min || noisy > sm.range_max {
                continue;
            }
            let end = [origin[0] + dv[0] * noisy, origin[1] + dv[1] * noisy, origin[2] + dv[2] * noisy];
            out.push(LidarRay::new(origin, end, t));
        }
    }
    out
}
