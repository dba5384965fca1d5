//! Tracked-vehicle kinematics settled onto the terrain.

use serde::{Deserialize, Serialize};

use super::sensor::{BodyBox, Pose6};
use super::world::WorldModel;
use crate::behaviours::VelocityCommand;
use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Configuration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleModel {
    pub length: f64,
    pub width: f64,
    /// Body underside and top above the ground contact plane.
    pub body_bottom: f64,
    pub body_top: f64,
    /// Ground this far below the highest footprint sample no longer supports the body.
    pub support_drop: f64,
    /// Obstacles rising more than this above the body plane block motion.
    pub max_climb: f64,
    pub tip_over: f64,
    pub min_support: f64,
    /// Footprint sampling grid (along, across).
    pub samples: [usize; 2],
}

impl Default for VehicleModel {
    fn default() -> Self {
        Self {
            length: 1.0,
            width: 0.7,
            body_bottom: 0.1,
            body_top: 0.5,
            support_drop: 0.5,
            max_climb: 0.3,
            tip_over: 40f64.to_radians(),
            min_support: 0.5,
            samples: [7, 5],
        }
    }
}

impl VehicleModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.body_top > self.body_bottom) {
            return Err(Error::Config("vehicle dimensions must be positive".into()));
        }
        if self.samples[0] < 2 || self.samples[1] < 2 {
            return Err(Error::Config("vehicle needs at least 2x2 footprint samples".into()));
        }
        Ok(())
    }

    pub fn body_box(&self) -> BodyBox {
        BodyBox {
            min: [-0.5 * self.length, -0.5 * self.width, self.body_bottom],
            max: [0.5 * self.length, 0.5 * self.width, self.body_top],
        }
    }

    fn sample_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let [nu, nv] = self.samples;
        (0..nu).flat_map(move |i| {
            (0..nv).map(move |j| {
                (
                    (i as f64 / (nu - 1) as f64 - 0.5) * self.length,
                    (j as f64 / (nv - 1) as f64 - 0.5) * self.width,
                )
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose6,
    pub support_fraction: f64,
    pub fell: bool,
    /// Last step was refused because an obstacle blocked the footprint.
    pub blocked: bool,
}

impl VehicleState {
    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.pose.x, self.pose.y, self.pose.yaw)
    }
}

/// Result of resting the footprint on the terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settle {
    pub z: f64,
    pub pitch: f64,
    pub roll: f64,
    pub support_fraction: f64,
}

/// Fits the body plane to the supporting footprint samples.
pub fn settle(world: &WorldModel, vm: &VehicleModel, c: &Configuration) -> Settle {
    let pts: Vec<(f64, f64, Option<f64>)> = vm
        .sample_points()
        .map(|(u, v)| {
            let (x, y) = c.to_world(u, v);
            (u, v, world.ground_height(x, y))
        })
        .collect();
    let hmax = pts.iter().filter_map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    if !hmax.is_finite() {
        return Settle {
            z: 0.0,
            pitch: 0.0,
            roll: 0.0,
            support_fraction: 0.0,
        };
    }
    let supported: Vec<(f64, f64, f64)> = pts
        .iter()
        .filter_map(|&(u, v, h)| h.filter(|h| *h >= hmax - vm.support_drop).map(|h| (u, v, h)))
        .collect();
    let fraction = supported.len() as f64 / pts.len() as f64;
    // Least squares z = a + b u + d v.
    let n = supported.len() as f64;
    let mu = supported.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = supported.iter().map(|p| p.1).sum::<f64>() / n;
    let mz = supported.iter().map(|p| p.2).sum::<f64>() / n;
    let (mut cuu, mut cvv, mut cuv, mut cuz, mut cvz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, v, z) in &supported {
        let (du, dv, dz) = (u - mu, v - mv, z - mz);
        cuu += du * du;
        cvv += dv * dv;
        cuv += du * dv;
        cuz += du * dz;
        cvz += dv * dz;
    }
    let det = cuu * cvv - cuv * cuv;
    let (b, d) = if det > 1e-12 {
        ((cuz * cvv - cvz * cuv) / det, (cvz * cuu - cuz * cuv) / det)
    } else if cuu > 1e-12 {
        (cuz / cuu, 0.0)
    } else if cvv > 1e-12 {
        (0.0, cvz / cvv)
    } else {
        (0.0, 0.0)
    };
    let a = mz - b * mu - d * mv;
    // Lift the plane so no supporting sample pokes through it.
    let lift = supported.iter().map(|&(u, v, z)| z - (a + b * u + d * v)).fold(0.0, f64::max);
    Settle {
        z: a + lift,
        pitch: b.atan(),
        roll: d.atan(),
        support_fraction: fraction,
    }
}

/// Places a vehicle at a planar configuration.
pub fn place(world: &WorldModel, vm: &VehicleModel, c: &Configuration) -> VehicleState {
    let s = settle(world, vm, c);
    let mut st = VehicleState {
        pose: Pose6 {
            x: c.x,
            y: c.y,
            z: s.z,
            yaw: c.yaw,
            pitch: s.pitch,
            roll: s.roll,
        },
        support_fraction: s.support_fraction,
        fell: false,
        blocked: false,
    };
    st.fell = fell(vm, &s);
    st
}

fn fell(vm: &VehicleModel, s: &Settle) -> bool {
    s.support_fraction < vm.min_support || s.pitch.abs() > vm.tip_over || s.roll.abs() > vm.tip_over
}

/// Integrates a differential-drive command for `dt` seconds and settles on the terrain.
pub fn step(world: &WorldModel, vm: &VehicleModel, state: &VehicleState, dt: f64, cmd: VelocityCommand) -> VehicleState {
    if state.fell {
        return *state;
    }
    if cmd.linear == 0.0 && cmd.angular == 0.0 {
        return VehicleState { blocked: false, ..*state };
    }
    let p = state.pose;
    let (x, y, yaw) = if cmd.angular.abs() < 1e-12 {
        (p.x + cmd.linear * dt * p.yaw.cos(), p.y + cmd.linear * dt * p.yaw.sin(), p.yaw)
    } else {
        let r = cmd.linear / cmd.angular;
        let yaw2 = p.yaw + cmd.angular * dt;
        (p.x + r * (yaw2.sin() - p.yaw.sin()), p.y - r * (yaw2.cos() - p.yaw.cos()), yaw2)
    };
    let c = Configuration::new(x, y, normalize_angle(yaw));
    // Ground rising well above the current body plane stops the motion.
    let (tp, tr) = (p.pitch.tan(), p.roll.tan());
    let climb = vm
        .sample_points()
        .filter_map(|(u, v)| {
            let (wx, wy) = c.to_world(u, v);
            world.ground_height(wx, wy).map(|h| h - (p.z + tp * u + tr * v))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if climb > vm.max_climb {
        return VehicleState { blocked: true, ..*state };
    }
    let s = settle(world, vm, &c);
    VehicleState {
        pose: Pose6 {
            x,
            y,
            z: s.z,
            yaw: c.yaw,
            pitch: s.pitch,
            roll: s.roll,
        },
        support_fraction: s.support_fraction,
        fell: fell(vm, &s),
        blocked: false,
    }
}
