//! Hybrid A* over (x, y, yaw) with footprint terrain costing.
//!
//! Continuous states are binned into a lattice of costmap cells times yaw bins.
//! Successors come from a small set of forward/reverse motion primitives (and
//! in-place yaw steps for point-turning vehicles). Each successor is costed by
//! arc length plus penalties for reversing, turning and the pitch/roll of the
//! plane fitted to the terrain under the vehicle footprint.

mod heuristic;
mod terrain;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use heuristic::{heuristic, DistanceField, SIXTEEN_CONNECTED_STRETCH};
pub use terrain::{estimate_terrain_pose, fit_footprint, for_each_footprint_cell, FootprintStats, TerrainPose, VehicleParams};

use crate::costmap::Costmap;
use crate::geom::{normalize_angle, Configuration};
use crate::heightmap::CellClass;

/// How the planner treats virtual heightmap cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VirtualSurfacePolicy {
    /// Virtual cells are best-case surfaces: costed from their heights like real cells.
    BestCase,
    /// Any virtual cell under the footprint makes a configuration inadmissible.
    NonTraversable,
    /// Virtual cells are flat ground; only real cells enter the attitude estimate.
    Traversable,
}

impl VirtualSurfacePolicy {
    pub const ALL: [VirtualSurfacePolicy; 3] = [Self::BestCase, Self::NonTraversable, Self::Traversable];

    pub fn name(self) -> &'static str {
        match self {
            Self::BestCase => "bestcase",
            Self::NonTraversable => "nontraversable",
            Self::Traversable => "traversable",
        }
    }

    /// Method label used in experiment reports.
    pub fn label(self) -> &'static str {
        match self {
            Self::BestCase => "Virtual surface",
            Self::NonTraversable => "Non-traversable",
            Self::Traversable => "Traversable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "bestcase" | "virtualsurface" => Some(Self::BestCase),
            "nontraversable" => Some(Self::NonTraversable),
            "traversable" => Some(Self::Traversable),
            _ => None,
        }
    }
}

impl std::fmt::Display for VirtualSurfacePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub yaw_bins: usize,
    /// Primitive arc length as a multiple of the costmap resolution.
    pub primitive_length_cells: f64,
    /// Terrain penalty weights (m/rad, applied per metre travelled).
    pub pitch_weight: f64,
    pub roll_weight: f64,
    /// Arc-length multiplier for reverse motion.
    pub reverse_factor: f64,
    /// Penalty per radian of heading change (m/rad).
    pub yaw_weight: f64,
    pub node_budget: usize,
    pub goal_tolerance: f64,
    /// Minimum fraction of footprint cells with a known height.
    pub min_support: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            yaw_bins: 16,
            primitive_length_cells: 1.5,
            pitch_weight: 2.0,
            roll_weight: 2.0,
            reverse_factor: 2.0,
            yaw_weight: 0.3,
            node_budget: 100_000,
            goal_tolerance: 0.25,
            min_support: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    Complete,
    Partial,
    Failed(FailureReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// A fatal cell lies under the start footprint.
    StartFatal,
    /// The start footprint is not fully inside the costmap.
    StartOutsideMap,
    /// No successor of the start configuration is admissible.
    NoAdmissibleSuccessor,
    /// The budget ran out before any node beyond the start was expanded.
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub config: Configuration,
    pub pose: TerrainPose,
    /// Accumulated search cost from the start up to this point.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub path: Vec<PathPoint>,
    pub cost: f64,
    pub expansions: usize,
}

impl PlanResult {
    fn failed(reason: FailureReason) -> Self {
        Self {
            status: PlanStatus::Failed(reason),
            path: Vec::new(),
            cost: 0.0,
            expansions: 0,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, PlanStatus::Failed(_))
    }

    /// Structured-text export: `x y yaw pitch roll` per line.
    pub fn path_to_text(&self) -> String {
        let mut s = String::from("# vsnav path v1\n");
        let status = match self.status {
            PlanStatus::Complete => "complete".to_string(),
            PlanStatus::Partial => "partial".to_string(),
            PlanStatus::Failed(r) => format!("failed:{r:?}"),
        };
        let _ = writeln!(s, "status {status}");
        let _ = writeln!(s, "points {}", self.path.len());
        for p in &self.path {
            let _ = writeln!(s, "{} {} {} {} {}", p.config.x, p.config.y, p.config.yaw, p.pose.pitch, p.pose.roll);
        }
        s
    }
}

/// Parses the `x y yaw pitch roll` rows of [`PlanResult::path_to_text`].
pub fn parse_path_text(text: &str) -> Vec<(Configuration, f64, f64)> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("status") && !l.starts_with("points"))
        .filter_map(|l| {
            let v: Vec<f64> = l.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            (v.len() == 5).then(|| (Configuration::new(v[0], v[1], v[2]), v[3], v[4]))
        })
        .collect()
}

/// Outcome of evaluating a configuration against the costmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub pose: TerrainPose,
    pub stats: FootprintStats,
    pub admissible: bool,
    /// Only fatal cells (or leaving the map) rule the configuration out.
    pub fatal_or_outside: bool,
}

/// Terrain pose and admissibility of a configuration under a policy.
pub fn evaluate(
    costmap: &Costmap,
    c: &Configuration,
    vp: &VehicleParams,
    policy: VirtualSurfacePolicy,
    min_support: f64,
) -> Evaluation {
    let (pose, stats) = match policy {
        VirtualSurfacePolicy::Traversable => fit_footprint(costmap, c, vp, |k| k == CellClass::Real),
        _ => fit_footprint(costmap, c, vp, |_| true),
    };
    let fatal_or_outside = stats.fatal > 0 || stats.outside;
    let mut admissible = !fatal_or_outside && pose.support_fraction >= min_support;
    if policy == VirtualSurfacePolicy::NonTraversable && stats.virtual_cells > 0 {
        admissible = false;
    }
    // Slopes measured purely between virtual cells are not held against the vehicle.
    let attitude_exempt = policy == VirtualSurfacePolicy::BestCase && stats.real == 0 && stats.virtual_cells > 0;
    if !attitude_exempt && (pose.pitch.abs() > vp.max_pitch || pose.roll.abs() > vp.max_roll) {
        admissible = false;
    }
    Evaluation {
        pose,
        stats,
        admissible,
        fatal_or_outside,
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    config: Configuration,
    pose: TerrainPose,
    g: f64,
    terrain_penalty: f64,
    h: f64,
    parent: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    seq: usize,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Primitive {
    length: f64,
    curvature: f64,
    reverse: bool,
    /// In-place rotation (radians) when `length == 0`.
    turn: f64,
}

fn primitives(cfg: &PlannerConfig, vp: &VehicleParams, resolution: f64) -> Vec<Primitive> {
    let length = cfg.primitive_length_cells * resolution;
    let mut curvatures = vec![0.0];
    if vp.min_turn_radius > 0.0 {
        let k = 1.0 / vp.min_turn_radius;
        curvatures.extend([k, -k, 0.5 * k, -0.5 * k]);
    }
    let mut out = Vec::new();
    for reverse in [false, true] {
        for &curvature in &curvatures {
            out.push(Primitive {
                length,
                curvature,
                reverse,
                turn: 0.0,
            });
        }
    }
    if vp.min_turn_radius == 0.0 {
        let step = TAU / cfg.yaw_bins as f64;
        for turn in [step, -step] {
            out.push(Primitive {
                length: 0.0,
                curvature: 0.0,
                reverse: false,
                turn,
            });
        }
    }
    out
}

fn apply(c: &Configuration, p: &Primitive) -> Configuration {
    if p.length == 0.0 {
        return Configuration::new(c.x, c.y, c.yaw + p.turn);
    }
    let s = if p.reverse { -p.length } else { p.length };
    if p.curvature == 0.0 {
        let (cos, sin) = c.heading();
        Configuration::new(c.x + s * cos, c.y + s * sin, c.yaw)
    } else {
        let dyaw = s * p.curvature;
        let r = 1.0 / p.curvature;
        let yaw2 = c.yaw + dyaw;
        Configuration::new(c.x + r * (yaw2.sin() - c.yaw.sin()), c.y - r * (yaw2.cos() - c.yaw.cos()), yaw2)
    }
}

/// Plans from `start` toward `goal` over the costmap.
pub fn plan(
    costmap: &Costmap,
    start: Configuration,
    goal: Configuration,
    vp: &VehicleParams,
    policy: VirtualSurfacePolicy,
    cfg: &PlannerConfig,
) -> PlanResult {
    let g = costmap.geometry;
    if !g.contains(start.x, start.y) {
        return PlanResult::failed(FailureReason::StartOutsideMap);
    }
    let start_eval = evaluate(costmap, &start, vp, policy, cfg.min_support);
    if start_eval.stats.fatal > 0 {
        return PlanResult::failed(FailureReason::StartFatal);
    }
    if start_eval.stats.outside {
        return PlanResult::failed(FailureReason::StartOutsideMap);
    }

    let field = DistanceField::compute(costmap, &goal);
    let h_of = |c: &Configuration| heuristic(c, &goal, costmap, field.as_ref());
    let yaw_bins = cfg.yaw_bins.max(1);
    let bin_of = |c: &Configuration| -> Option<usize> {
        let (col, row) = g.cell_of(c.x, c.y)?;
        let yb = ((normalize_angle(c.yaw) + std::f64::consts::PI) / TAU * yaw_bins as f64).round() as usize % yaw_bins;
        Some((row * g.cols + col) * yaw_bins + yb)
    };
    let prims = primitives(cfg, vp, g.resolution);

    let mut nodes: Vec<Node> = Vec::with_capacity(4096);
    let mut closed = vec![false; g.len() * yaw_bins];
    let mut best_g = vec![f64::INFINITY; g.len() * yaw_bins];
    let mut open = BinaryHeap::new();
    let mut seq = 0usize;

    let start_h = h_of(&start);
    nodes.push(Node {
        config: start,
        pose: start_eval.pose,
        g: 0.0,
        terrain_penalty: 0.0,
        h: start_h,
        parent: usize::MAX,
    });
    best_g[bin_of(&start).unwrap()] = 0.0;
    open.push(Open {
        f: start_h,
        seq,
        node: 0,
    });

    let mut best_partial = 0usize;
    let mut expansions = 0usize;
    let mut start_had_successor = false;
    let mut goal_node = None;

    while let Some(Open { node, .. }) = open.pop() {
        let cur = nodes[node];
        let bin = bin_of(&cur.config).unwrap();
        if closed[bin] {
            continue;
        }
        closed[bin] = true;
        expansions += 1;

        let bp = nodes[best_partial];
        let better = cur.h < bp.h
            || (cur.h == bp.h
                && (cur.terrain_penalty < bp.terrain_penalty || (cur.terrain_penalty == bp.terrain_penalty && cur.g < bp.g)));
        if better {
            best_partial = node;
        }
        if cur.config.distance(&goal) <= cfg.goal_tolerance {
            goal_node = Some(node);
            break;
        }
        if expansions >= cfg.node_budget {
            break;
        }

        for p in &prims {
            let next = apply(&cur.config, p);
            let Some(nbin) = bin_of(&next) else { continue };
            if closed[nbin] {
                continue;
            }
            let eval = evaluate(costmap, &next, vp, policy, cfg.min_support);
            if !eval.admissible {
                continue;
            }
            if node == 0 {
                start_had_successor = true;
            }
            let travel = if p.length == 0.0 { 0.5 * g.resolution } else { p.length };
            let attitude = cfg.pitch_weight * eval.pose.pitch.abs() + cfg.roll_weight * eval.pose.roll.abs();
            let terrain = attitude * travel;
            let mut step = if p.reverse { cfg.reverse_factor * p.length } else { p.length };
            step += cfg.yaw_weight * normalize_angle(next.yaw - cur.config.yaw).abs();
            step += terrain;
            let ng = cur.g + step;
            if ng >= best_g[nbin] {
                continue;
            }
            best_g[nbin] = ng;
            let h = h_of(&next);
            nodes.push(Node {
                config: next,
                pose: eval.pose,
                g: ng,
                terrain_penalty: cur.terrain_penalty + terrain,
                h,
                parent: node,
            });
            seq += 1;
            open.push(Open {
                f: ng + h,
                seq,
                node: nodes.len() - 1,
            });
        }
    }

    let (end, status) = match goal_node {
        Some(n) => (n, PlanStatus::Complete),
        None => {
            if !start_had_successor && expansions < cfg.node_budget {
                let mut r = PlanResult::failed(FailureReason::NoAdmissibleSuccessor);
                r.expansions = expansions;
                return r;
            }
            if expansions >= cfg.node_budget && nodes.len() == 1 {
                let mut r = PlanResult::failed(FailureReason::BudgetExhausted);
                r.expansions = expansions;
                return r;
            }
            (best_partial, PlanStatus::Partial)
        }
    };
    let mut path = Vec::new();
    let mut n = end;
    while n != usize::MAX {
        path.push(PathPoint {
            config: nodes[n].config,
            pose: nodes[n].pose,
            cost: nodes[n].g,
        });
        n = nodes[n].parent;
    }
    path.reverse();
    PlanResult {
        status,
        path,
        cost: nodes[end].g,
        expansions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_parse_back() {
        for p in VirtualSurfacePolicy::ALL {
            assert_eq!(VirtualSurfacePolicy::parse(p.name()), Some(p));
        }
        assert_eq!(VirtualSurfacePolicy::parse("Best-Case"), Some(VirtualSurfacePolicy::BestCase));
        assert_eq!(VirtualSurfacePolicy::parse("sometimes"), None);
    }

    #[test]
    fn straight_primitive_moves_along_heading() {
        let c = Configuration::new(1.0, 2.0, std::f64::consts::FRAC_PI_2);
        let p = Primitive {
            length: 0.15,
            curvature: 0.0,
            reverse: true,
            turn: 0.0,
        };
        let n = apply(&c, &p);
        assert!((n.x - 1.0).abs() < 1e-12 && (n.y - 1.85).abs() < 1e-12);
    }

    #[test]
    fn arc_primitive_keeps_curvature() {
        let c = Configuration::new(0.0, 0.0, 0.0);
        let p = Primitive {
            length: 0.5,
            curvature: 1.0,
            reverse: false,
            turn: 0.0,
        };
        let n = apply(&c, &p);
        // Point on a unit circle centred at (0, 1).
        assert!((n.x.powi(2) + (n.y - 1.0).powi(2) - 1.0).abs() < 1e-12);
        assert!((n.yaw - 0.5).abs() < 1e-12);
    }
}
