//! Closed-loop scenario execution on a fixed tick schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sensor::{raycast_scan, SensorModel};
use super::vehicle::{place, step, VehicleModel, VehicleState};
use super::world::WorldModel;
use super::worlds::SuccessRule;
use crate::behaviours::{decide, select, BehaviourId, BehaviourParams, OrientationCorrection, Situation, VelocityCommand};
use crate::costmap::{build_costmap_with, Costmap, FatalityParams, VirtualHandling};
use crate::error::{Error, Result};
use crate::geom::Configuration;
use crate::heightmap::{extract_heightmap, CellClass, ColumnScanParams, GridGeometry, Heightmap};
use crate::occupancy::{LidarRay, OccupancyConfig, OccupancyMap};
use crate::planner::{for_each_footprint_cell, plan, PlanResult, PlannerConfig, VehicleParams, VirtualSurfacePolicy};

/// Every tunable of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub control_dt: f64,
    pub map_period: f64,
    pub replan_period: f64,
    pub goal_radius: f64,
    /// Uniform start perturbation (m, rad).
    pub start_jitter: [f64; 2],
    /// Radius of ground assumed observed under the vehicle at start.
    pub start_prior_radius: f64,
    /// Seconds of continuous decollide failure before giving up.
    pub stuck_after: f64,
    /// Voxel grid origin. Offsetting z by half a voxel keeps level ground off voxel boundaries.
    pub map_origin: [f64; 3],
    pub record_snapshots: bool,
    pub sensor: SensorModel,
    pub vehicle: VehicleModel,
    pub occupancy: OccupancyConfig,
    pub planner: PlannerConfig,
    pub fatality: FatalityParams,
    pub vehicle_params: VehicleParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.1,
            map_period: 0.5,
            replan_period: 1.0,
            goal_radius: 0.5,
            start_jitter: [0.05, 0.03],
            start_prior_radius: 0.71,
            stuck_after: 10.0,
            map_origin: [0.0, 0.0, -0.05],
            record_snapshots: false,
            sensor: SensorModel::default(),
            vehicle: VehicleModel::default(),
            occupancy: OccupancyConfig::default(),
            planner: PlannerConfig::default(),
            fatality: FatalityParams::default(),
            vehicle_params: VehicleParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_dt > 0.0 && self.control_dt <= 0.1) {
            return Err(Error::Config("control_dt must be in (0, 0.1]".into()));
        }
        for (name, v) in [("map_period", self.map_period), ("replan_period", self.replan_period)] {
            let ratio = v / self.control_dt;
            if !(v > 0.0) || (ratio - ratio.round()).abs() > 1e-6 {
                return Err(Error::Config(format!("{name} must be a positive multiple of control_dt")));
            }
        }
        self.sensor.validate()?;
        self.vehicle.validate()?;
        self.occupancy.validate()?;
        self.fatality.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub world: WorldModel,
    pub start: Configuration,
    pub goal: [f64; 2],
    pub policy: VirtualSurfacePolicy,
    pub seed: u64,
    pub timeout: f64,
    pub success: SuccessRule,
    pub config: SimConfig,
}

impl ScenarioSpec {
    /// Spec for a built-in world with default settings.
    pub fn builtin(name: &str, policy: VirtualSurfacePolicy, seed: u64) -> Result<Self> {
        let b = super::worlds::builtin_world(name).ok_or_else(|| Error::Config(format!("unknown world '{name}'")))??;
        Ok(Self {
            name: name.to_string(),
            world: b.world,
            start: b.start,
            goal: b.goal,
            policy,
            seed,
            timeout: 60.0,
            success: b.success,
            config: SimConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.world.ground_height(self.start.x, self.start.y).is_none() {
            return Err(Error::Config("start lies outside the world".into()));
        }
        if !self.goal.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("goal must be finite".into()));
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    GoalReached,
    Timeout,
    Fell,
    Stuck,
    /// The run panicked or errored inside a batch; only produced by the experiment harness.
    Aborted,
}

impl TerminalReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::GoalReached => "goal_reached",
            Self::Timeout => "timeout",
            Self::Fell => "fell",
            Self::Stuck => "stuck",
            Self::Aborted => "aborted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::GoalReached, Self::Timeout, Self::Fell, Self::Stuck, Self::Aborted]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub behaviour: BehaviourId,
    pub linear: f64,
    pub angular: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// The footprint overlaps a fatal cell of the latest costmap.
    pub footprint_fatal: bool,
    /// Bit `i` set when the behaviour at priority `i` was admissible this tick.
    pub admissible: u8,
}

/// Costmap and plan captured at a map update.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub costmap: Costmap,
    pub plan: Option<PlanResult>,
}

/// Plan issued at a replanning instant.
#[derive(Debug, Clone)]
pub struct PlanRecord {
    pub time: f64,
    pub result: PlanResult,
}

/// Aggregate checks collected while running.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub virtual_cells_checked: usize,
    /// Virtual cells lower than the true surface by more than one voxel.
    pub virtual_bound_violations: usize,
    pub path_configs_checked: usize,
    /// Path configurations on fatal cells or beyond the attitude limits.
    pub unsafe_path_configs: usize,
    pub plans: usize,
    pub rays: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: String,
    pub policy: VirtualSurfacePolicy,
    pub seed: u64,
    pub success: bool,
    pub duration: f64,
    pub reason: TerminalReason,
    pub trace: Vec<TickRecord>,
    pub plans: Vec<PlanRecord>,
    pub snapshots: Vec<Snapshot>,
    pub stats: RunStats,
}

fn handling(policy: VirtualSurfacePolicy) -> VirtualHandling {
    match policy {
        VirtualSurfacePolicy::Traversable => VirtualHandling::Gap,
        _ => VirtualHandling::Surface,
    }
}

/// Heightmap region covering the map window, aligned to the voxel grid.
pub fn window_region(map: &OccupancyMap) -> GridGeometry {
    let res = map.resolution();
    let c = map.window_center();
    let h = map.window_half_extent();
    let o = map.origin();
    let x0 = ((c[0] - h[0] - o[0]) / res - 1e-9).ceil() * res + o[0];
    let y0 = ((c[1] - h[1] - o[1]) / res - 1e-9).ceil() * res + o[1];
    let cols = ((c[0] + h[0] - x0) / res + 1e-9).floor() as usize;
    let rows = ((c[1] + h[1] - y0) / res + 1e-9).floor() as usize;
    GridGeometry {
        resolution: res,
        origin: [x0, y0],
        cols,
        rows,
    }
}

/// Counts virtual cells and those lying more than one voxel below the true surface.
pub fn virtual_bound_check(hm: &Heightmap, world: &WorldModel) -> (usize, usize) {
    let g = hm.geometry;
    let mut checked = 0;
    let mut bad = 0;
    for row in 0..g.rows {
        for col in 0..g.cols {
            let cell = hm.get(col, row);
            if cell.class != CellClass::Virtual {
                continue;
            }
            let x0 = g.origin[0] + col as f64 * g.resolution;
            let y0 = g.origin[1] + row as f64 * g.resolution;
            let Some(truth) = world.min_surface_in(x0, y0, x0 + g.resolution, y0 + g.resolution) else {
                continue;
            };
            checked += 1;
            if cell.height < truth - g.resolution - 1e-9 {
                bad += 1;
            }
        }
    }
    (checked, bad)
}

/// Path configurations whose footprint touches a fatal cell or whose stored
/// attitude exceeds the limits. The first configuration (the start) is skipped.
pub fn unsafe_configs(costmap: &Costmap, result: &PlanResult, vp: &VehicleParams) -> (usize, usize) {
    let mut checked = 0;
    let mut bad = 0;
    for p in result.path.iter().skip(1) {
        checked += 1;
        let mut fatal = false;
        let outside = for_each_footprint_cell(costmap, &p.config, vp.length, vp.width, |c, r, _, _| {
            fatal |= costmap.get(c, r).is_fatal();
        });
        let exempt_attitude = p.pose.degenerate;
        let attitude = !exempt_attitude && (p.pose.pitch.abs() > vp.max_pitch + 1e-9 || p.pose.roll.abs() > vp.max_roll + 1e-9);
        if fatal || outside || (attitude && !virtual_only(costmap, p.config, vp)) {
            bad += 1;
        }
    }
    (checked, bad)
}

fn virtual_only(costmap: &Costmap, c: Configuration, vp: &VehicleParams) -> bool {
    let mut real = 0;
    let mut virt = 0;
    for_each_footprint_cell(costmap, &c, vp.length, vp.width, |col, row, _, _| match costmap.get(col, row).class {
        CellClass::Real => real += 1,
        CellClass::Virtual => virt += 1,
        CellClass::Unknown => {}
    });
    real == 0 && virt > 0
}

fn footprint_touches_fatal(costmap: &Costmap, c: &Configuration, vp: &VehicleParams) -> bool {
    let mut fatal = false;
    for_each_footprint_cell(costmap, c, vp.length, vp.width, |col, row, _, _| {
        fatal |= costmap.get(col, row).is_fatal();
    });
    fatal
}

/// Rays from the sensor to the ground under the vehicle, standing in for
/// terrain observed before the run started.
fn start_prior(world: &WorldModel, state: &VehicleState, sm: &SensorModel, radius: f64) -> Vec<LidarRay> {
    let origin = state.pose.to_world(sm.mount_offset);
    let mut rays = Vec::new();
    let step = 0.05;
    let n = (radius / step).ceil() as i32;
    for i in -n..=n {
        for j in -n..=n {
            let (dx, dy) = (i as f64 * step, j as f64 * step);
            if dx.hypot(dy) > radius {
                continue;
            }
            let (x, y) = (state.pose.x + dx, state.pose.y + dy);
            if let Some(h) = world.ground_height(x, y) {
                rays.push(LidarRay::new(origin, [x, y, h - 0.01], 0.0));
            }
        }
    }
    rays
}

/// Start of tick `k`, rounded so multiples of `dt` print cleanly.
fn tick_time(k: u64, dt: f64) -> f64 {
    (k as f64 * dt * 1e9).round() / 1e9
}

/// Runs one scenario to completion.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunResult> {
    spec.validate()?;
    let cfg = &spec.config;
    let vp = &cfg.vehicle_params;
    let bp = BehaviourParams::for_vehicle(vp);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jx = rng.random_range(-1.0..=1.0) * cfg.start_jitter[0];
    let jy = rng.random_range(-1.0..=1.0) * cfg.start_jitter[0];
    let jyaw = rng.random_range(-1.0..=1.0) * cfg.start_jitter[1];
    let mut sensor = cfg.sensor.clone();
    sensor.mount_phase += rng.random_range(0.0..std::f64::consts::TAU);
    let start = Configuration::new(spec.start.x + jx, spec.start.y + jy, spec.start.yaw + jyaw);
    let goal = Configuration::new(spec.goal[0], spec.goal[1], 0.0);

    let mut state = place(&spec.world, &cfg.vehicle, &start);
    let body = cfg.vehicle.body_box();
    let scan_params = ColumnScanParams::for_vehicle(vp.clearance_height, cfg.occupancy.resolution);
    let center = |s: &VehicleState| [s.pose.x, s.pose.y, s.pose.z];
    let mut map = OccupancyMap::new(cfg.occupancy.clone(), cfg.map_origin, center(&state))?;
    for _ in 0..3 {
        map.integrate_rays(&start_prior(&spec.world, &state, &sensor, cfg.start_prior_radius));
    }

    let dt = cfg.control_dt;
    let map_every = (cfg.map_period / dt).round() as u64;
    let plan_every = (cfg.replan_period / dt).round() as u64;
    let max_ticks = (spec.timeout / dt).ceil() as u64;

    let mut stats = RunStats::default();
    let mut trace = Vec::with_capacity(max_ticks as usize);
    let mut plans = Vec::new();
    let mut snapshots = Vec::new();
    let mut pending: Vec<LidarRay> = Vec::new();
    let mut costmap: Option<Costmap> = None;
    let mut current_plan: Option<PlanResult> = None;
    let mut oc = OrientationCorrection::new();
    let mut stuck_since: Option<f64> = None;
    let mut outcome = None;

    for k in 0..max_ticks {
        let t = tick_time(k, dt);
        let rays = raycast_scan(&spec.world, &state.pose, &body, t, t + dt, &sensor, &mut rng);
        stats.rays += rays.len();
        pending.extend(rays);

        if k % map_every == 0 {
            map.crop_to_window(center(&state));
            map.integrate_rays(&pending);
            pending.clear();
            let hm = extract_heightmap(&map, window_region(&map), state.pose.z, &scan_params)?;
            let (checked, bad) = virtual_bound_check(&hm, &spec.world);
            stats.virtual_cells_checked += checked;
            stats.virtual_bound_violations += bad;
            costmap = Some(build_costmap_with(&hm, &cfg.fatality, handling(spec.policy)));
        }
        let cm = costmap.as_ref().expect("costmap built on first tick");
        if k % plan_every == 0 {
            let result = plan(cm, state.configuration(), goal, vp, spec.policy, &cfg.planner);
            let (checked, bad) = unsafe_configs(cm, &result, vp);
            stats.path_configs_checked += checked;
            stats.unsafe_path_configs += bad;
            stats.plans += 1;
            plans.push(PlanRecord {
                time: t,
                result: result.clone(),
            });
            current_plan = Some(result);
        }
        if cfg.record_snapshots && k % map_every == 0 {
            snapshots.push(Snapshot {
                time: t,
                costmap: cm.clone(),
                plan: current_plan.clone(),
            });
        }

        let situation = Situation {
            pose: state.configuration(),
            pitch: state.pose.pitch,
            roll: state.pose.roll,
            path: current_plan.as_ref(),
            costmap: Some(cm),
            time: t,
        };
        let decisions = decide(&situation, &mut oc, vp, &bp);
        let chosen = *select(&decisions).expect("stop is always admissible");
        let cmd: VelocityCommand = chosen.command;
        trace.push(TickRecord {
            time: t,
            behaviour: chosen.behaviour,
            linear: cmd.linear,
            angular: cmd.angular,
            x: state.pose.x,
            y: state.pose.y,
            z: state.pose.z,
            yaw: state.pose.yaw,
            pitch: state.pose.pitch,
            roll: state.pose.roll,
            footprint_fatal: footprint_touches_fatal(cm, &state.configuration(), vp),
            admissible: decisions
                .iter()
                .enumerate()
                .filter(|(_, d)| d.admissible)
                .fold(0u8, |m, (i, _)| m | (1 << i)),
        });

        if chosen.stuck {
            let since = *stuck_since.get_or_insert(t);
            if t + dt - since >= cfg.stuck_after {
                outcome = Some((TerminalReason::Stuck, t + dt));
                break;
            }
        } else {
            stuck_since = None;
        }

        state = step(&spec.world, &cfg.vehicle, &state, dt, cmd);
        let now = tick_time(k + 1, dt);
        if state.fell {
            outcome = Some((TerminalReason::Fell, now));
            break;
        }
        if state.configuration().distance(&goal) <= cfg.goal_radius {
            outcome = Some((TerminalReason::GoalReached, now));
            break;
        }
    }
    let (reason, duration) = outcome.unwrap_or((TerminalReason::Timeout, spec.timeout));
    let success = match spec.success {
        SuccessRule::ReachGoal => reason == TerminalReason::GoalReached,
        SuccessRule::SurviveUntilTimeout => matches!(reason, TerminalReason::Timeout | TerminalReason::GoalReached),
    };
    Ok(RunResult {
        scenario: spec.name.clone(),
        policy: spec.policy,
        seed: spec.seed,
        success,
        duration,
        reason,
        trace,
        plans,
        snapshots,
        stats,
    })
}
