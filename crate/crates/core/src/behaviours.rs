//! Priority-arbitrated behaviours turning the current situation into velocity commands.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::costmap::Costmap;
use crate::geom::{normalize_angle, Configuration};
use crate::planner::{estimate_terrain_pose, for_each_footprint_cell, FailureReason, PlanResult, PlanStatus, VehicleParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub linear: f64,
    pub angular: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand { linear: 0.0, angular: 0.0 };

    pub fn new(linear: f64, angular: f64) -> Self {
        Self { linear, angular }
    }

    pub fn clamped(self, p: &BehaviourParams) -> Self {
        Self {
            linear: self.linear.clamp(-p.v_max, p.v_max),
            angular: self.angular.clamp(-p.w_max, p.w_max),
        }
    }

    pub fn within(&self, p: &BehaviourParams) -> bool {
        self.linear.abs() <= p.v_max && self.angular.abs() <= p.w_max
    }
}

/// Behaviours in priority order (highest first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviourId {
    OrientationCorrection,
    Decollide,
    PathFollow,
    Stop,
}

impl BehaviourId {
    pub fn name(self) -> &'static str {
        match self {
            Self::OrientationCorrection => "orientation_correction",
            Self::Decollide => "decollide",
            Self::PathFollow => "path_follow",
            Self::Stop => "stop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::OrientationCorrection, Self::Decollide, Self::PathFollow, Self::Stop]
            .into_iter()
            .find(|b| b.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviourDecision {
    pub behaviour: BehaviourId,
    pub admissible: bool,
    pub command: VelocityCommand,
    /// Set by decollide when no escape direction exists.
    pub stuck: bool,
}

impl BehaviourDecision {
    pub fn inadmissible(behaviour: BehaviourId) -> Self {
        Self {
            behaviour,
            admissible: false,
            command: VelocityCommand::ZERO,
            stuck: false,
        }
    }

    pub fn admissible(behaviour: BehaviourId, command: VelocityCommand) -> Self {
        Self {
            behaviour,
            admissible: true,
            command,
            stuck: false,
        }
    }

    pub fn stop() -> Self {
        Self::admissible(BehaviourId::Stop, VelocityCommand::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviourParams {
    pub v_max: f64,
    pub w_max: f64,
    pub pitch_limit: f64,
    pub roll_limit: f64,
    pub lookahead: f64,
    /// Orientation correction releases below this fraction of the limits.
    pub release_fraction: f64,
    /// Speed used by orientation correction and decollide.
    pub recovery_speed: f64,
    /// Maximum sweep distance when searching for a decollide direction.
    pub decollide_range: f64,
    pub heading_gain: f64,
}

impl Default for BehaviourParams {
    fn default() -> Self {
        Self::for_vehicle(&VehicleParams::default())
    }
}

impl BehaviourParams {
    /// Limits are the planner's attitude limits plus a 5° margin.
    pub fn for_vehicle(vp: &VehicleParams) -> Self {
        let margin = 5f64.to_radians();
        Self {
            v_max: 0.6,
            w_max: 0.8,
            pitch_limit: vp.max_pitch + margin,
            roll_limit: vp.max_roll + margin,
            lookahead: 0.8,
            release_fraction: 0.8,
            recovery_speed: 0.2,
            decollide_range: 1.0,
            heading_gain: 2.0,
        }
    }
}

/// Snapshot of everything the behaviours may look at.
#[derive(Debug, Clone, Copy)]
pub struct Situation<'a> {
    pub pose: Configuration,
    pub pitch: f64,
    pub roll: f64,
    pub path: Option<&'a PlanResult>,
    pub costmap: Option<&'a Costmap>,
    pub time: f64,
}

/// First admissible decision in the given order; zero when none is.
pub fn arbitrate(decisions: &[BehaviourDecision]) -> VelocityCommand {
    select(decisions).map_or(VelocityCommand::ZERO, |d| d.command)
}

/// The decision that [`arbitrate`] executes.
pub fn select(decisions: &[BehaviourDecision]) -> Option<&BehaviourDecision> {
    decisions.iter().find(|d| d.admissible)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Motion {
    Forward,
    Reverse,
    Turn,
}

fn segment_motion(a: &Configuration, b: &Configuration) -> Motion {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    if dx.hypot(dy) < 1e-6 {
        return Motion::Turn;
    }
    let (c, s) = a.heading();
    if dx * c + dy * s >= 0.0 {
        Motion::Forward
    } else {
        Motion::Reverse
    }
}

fn nearest_index(path: &[Configuration], pose: &Configuration) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in path.iter().enumerate() {
        let d = c.distance(pose) + 0.1 * normalize_angle(c.yaw - pose.yaw).abs();
        if d < best_d - 1e-9 {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Pure pursuit along the current path.
pub fn path_follow(s: &Situation, p: &BehaviourParams) -> BehaviourDecision {
    let id = BehaviourId::PathFollow;
    let Some(plan) = s.path else {
        return BehaviourDecision::inadmissible(id);
    };
    if plan.path.is_empty() || matches!(plan.status, PlanStatus::Failed(_)) {
        return BehaviourDecision::inadmissible(id);
    }
    if s.pitch.abs() > p.pitch_limit || s.roll.abs() > p.roll_limit {
        return BehaviourDecision::inadmissible(id);
    }
    let configs: Vec<Configuration> = plan.path.iter().map(|q| q.config).collect();
    let n = nearest_index(&configs, &s.pose);

    // First segment kind determines the current mode; stop at cusps.
    let mut mode = None;
    let mut target = configs[n];
    let mut travelled = 0.0;
    let mut remaining = 0.0;
    for i in n..configs.len().saturating_sub(1) {
        let m = segment_motion(&configs[i], &configs[i + 1]);
        match (mode, m) {
            (None, _) => mode = Some(m),
            (Some(Motion::Turn), Motion::Turn) => {}
            (Some(a), b) if a != b => break,
            _ => {}
        }
        let step = configs[i].distance(&configs[i + 1]);
        remaining += step;
        if travelled < p.lookahead {
            travelled += step;
            target = configs[i + 1];
        }
        if mode == Some(Motion::Turn) {
            // Turn-in-place sequences end at the first translation.
            if configs.get(i + 2).is_some_and(|c| segment_motion(&configs[i + 1], c) != Motion::Turn) {
                break;
            }
        }
    }

    let k = p.heading_gain;
    let cmd = match mode {
        None => VelocityCommand::ZERO,
        Some(Motion::Turn) => VelocityCommand::new(0.0, k * normalize_angle(target.yaw - s.pose.yaw)),
        Some(dir) => {
            let dx = target.x - s.pose.x;
            let dy = target.y - s.pose.y;
            if dx.hypot(dy) < 1e-3 {
                VelocityCommand::ZERO
            } else {
                let bearing = dy.atan2(dx);
                let facing = if dir == Motion::Reverse { s.pose.yaw + PI } else { s.pose.yaw };
                let err = normalize_angle(bearing - facing);
                let angular = k * err;
                let align = if err.abs() > FRAC_PI_4 { 0.0 } else { err.cos() };
                let taper = (remaining / p.lookahead).clamp(0.25, 1.0);
                let speed = p.v_max * align * taper;
                let linear = if dir == Motion::Reverse { -speed } else { speed };
                VelocityCommand::new(linear, angular)
            }
        }
    };
    BehaviourDecision::admissible(id, cmd.clamped(p))
}

/// Tip-over prevention with release hysteresis.
#[derive(Debug, Clone, Default)]
pub struct OrientationCorrection {
    active: bool,
}

impl OrientationCorrection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn evaluate(&mut self, s: &Situation, vp: &VehicleParams, p: &BehaviourParams) -> BehaviourDecision {
        let id = BehaviourId::OrientationCorrection;
        let over = s.pitch.abs() > p.pitch_limit || s.roll.abs() > p.roll_limit;
        let above_release =
            s.pitch.abs() > p.release_fraction * p.pitch_limit || s.roll.abs() > p.release_fraction * p.roll_limit;
        self.active = over || (self.active && above_release);
        if !self.active {
            return BehaviourDecision::inadmissible(id);
        }
        let estimate = s.costmap.map(|cm| estimate_terrain_pose(cm, &s.pose, vp));
        let cmd = match estimate {
            Some(t) if !t.degenerate => downhill_command(t.pitch, t.roll, p),
            _ => VelocityCommand::new(-p.recovery_speed, 0.0),
        };
        BehaviourDecision::admissible(id, cmd.clamped(p))
    }
}

/// Turn the nearer end of the vehicle downhill and drive that way.
fn downhill_command(pitch: f64, roll: f64, p: &BehaviourParams) -> VelocityCommand {
    let b = pitch.tan();
    let d = roll.tan();
    if b.hypot(d) < 1e-9 {
        return VelocityCommand::new(-p.recovery_speed, 0.0);
    }
    // Downhill direction in the body frame.
    let downhill = (-d).atan2(-b);
    let (turn, dir) = if downhill.abs() <= FRAC_PI_2 + 1e-9 {
        (downhill, 1.0)
    } else {
        (normalize_angle(downhill - PI), -1.0)
    };
    let linear = dir * p.recovery_speed * turn.cos().max(0.0);
    VelocityCommand::new(linear, p.heading_gain * turn)
}

fn footprint_fatal(cm: &Costmap, c: &Configuration, vp: &VehicleParams) -> bool {
    let mut fatal = false;
    let outside = for_each_footprint_cell(cm, c, vp.length, vp.width, |col, row, _, _| {
        fatal |= cm.get(col, row).is_fatal();
    });
    fatal || outside
}

/// Escape direction (body-frame angle) and distance that clears the footprint of
/// fatal cells soonest, or `None` when nothing clears within `range`.
///
/// Straight reverse and forward are tried first and win whenever one of them clears.
/// The six diagonal headings need a turn in place, which moves the footprint and can
/// flip the choice on the next tick, so they are only used when driving straight
/// cannot escape.
pub fn decollide_direction(cm: &Costmap, pose: &Configuration, vp: &VehicleParams, range: f64) -> Option<(f64, f64)> {
    let step = 0.5 * cm.geometry.resolution;
    let steps = (range / step).round() as usize;
    let sweep = |order: &[i32]| {
        let mut best: Option<(f64, f64)> = None;
        // Earlier entries win ties.
        for &k in order {
            let angle = normalize_angle(k as f64 * FRAC_PI_4);
            let (sin, cos) = (pose.yaw + angle).sin_cos();
            for i in 1..=steps {
                let dist = i as f64 * step;
                if best.is_some_and(|(_, d)| dist >= d) {
                    break;
                }
                let moved = Configuration::new(pose.x + dist * cos, pose.y + dist * sin, pose.yaw);
                if !footprint_fatal(cm, &moved, vp) {
                    best = Some((angle, dist));
                    break;
                }
            }
        }
        best
    };
    sweep(&[4, 0]).or_else(|| sweep(&[3, 5, 1, 7, 2, 6]))
}

/// Moves the vehicle off fatal cells after the planner refused to start.
pub fn decollide(s: &Situation, vp: &VehicleParams, p: &BehaviourParams) -> BehaviourDecision {
    let id = BehaviourId::Decollide;
    let triggered = s
        .path
        .is_some_and(|r| r.status == PlanStatus::Failed(FailureReason::StartFatal));
    if !triggered {
        return BehaviourDecision::inadmissible(id);
    }
    let Some(cm) = s.costmap else {
        return BehaviourDecision::inadmissible(id);
    };
    // Already clear: hold still until the next plan rather than overshoot.
    if !footprint_fatal(cm, &s.pose, vp) {
        return BehaviourDecision::admissible(id, VelocityCommand::ZERO);
    }
    let Some((angle, _)) = decollide_direction(cm, &s.pose, vp, p.decollide_range) else {
        return BehaviourDecision {
            stuck: true,
            ..BehaviourDecision::admissible(id, VelocityCommand::ZERO)
        };
    };
    let (turn, dir) = if angle.abs() <= FRAC_PI_2 + 1e-9 {
        (angle, 1.0)
    } else {
        (normalize_angle(angle - PI), -1.0)
    };
    let cmd = if turn.abs() > 0.05 {
        VelocityCommand::new(0.0, p.heading_gain * turn)
    } else {
        VelocityCommand::new(dir * p.recovery_speed, 0.0)
    };
    BehaviourDecision::admissible(id, cmd.clamped(p))
}

/// Evaluates all behaviours in priority order, ending with the stop fallback.
pub fn decide(
    s: &Situation,
    oc: &mut OrientationCorrection,
    vp: &VehicleParams,
    p: &BehaviourParams,
) -> [BehaviourDecision; 4] {
    [oc.evaluate(s, vp, p), decollide(s, vp, p), path_follow(s, p), BehaviourDecision::stop()]
}
