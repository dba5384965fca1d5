//! Footprint sampling and terrain pose estimation.

use serde::{Deserialize, Serialize};

use crate::costmap::Costmap;
use crate::geom::Configuration;
use crate::heightmap::CellClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    /// Zero allows point turns.
    pub min_turn_radius: f64,
    pub max_pitch: f64,
    pub max_roll: f64,
    /// Overall body height used for the heightmap clearance test.
    pub clearance_height: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 1.0,
            width: 0.7,
            min_turn_radius: 0.0,
            max_pitch: 30f64.to_radians(),
            max_roll: 25f64.to_radians(),
            clearance_height: 0.9,
        }
    }
}

/// Estimated vehicle attitude when resting on the terrain at a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainPose {
    /// Nose-up positive.
    pub pitch: f64,
    /// Positive when the left side is higher.
    pub roll: f64,
    pub height: f64,
    /// Fraction of footprint cells with a known height.
    pub support_fraction: f64,
    /// Fewer than three non-collinear cells: pitch and roll were not estimated.
    pub degenerate: bool,
}

impl TerrainPose {
    pub const FLAT: TerrainPose = TerrainPose {
        pitch: 0.0,
        roll: 0.0,
        height: 0.0,
        support_fraction: 0.0,
        degenerate: true,
    };
}

/// Summary of the cells under a footprint.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FootprintStats {
    pub cells: usize,
    pub real: usize,
    pub virtual_cells: usize,
    pub fatal: usize,
    /// Part of the footprint lies outside the costmap.
    pub outside: bool,
}

/// Visits every costmap cell whose centre lies inside the footprint rectangle.
pub fn for_each_footprint_cell(
    costmap: &Costmap,
    c: &Configuration,
    length: f64,
    width: f64,
    mut f: impl FnMut(usize, usize, f64, f64),
) -> bool {
    let g = &costmap.geometry;
    let hl = 0.5 * length;
    let hw = 0.5 * width;
    let corners = [(hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw)].map(|(u, v)| c.to_world(u, v));
    let mut outside = false;
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in corners {
        outside |= !g.contains(x, y);
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let res = g.resolution;
    let c0 = (((min_x - g.origin[0]) / res - 0.5).ceil()).max(0.0) as usize;
    let r0 = (((min_y - g.origin[1]) / res - 0.5).ceil()).max(0.0) as usize;
    let c1 = ((max_x - g.origin[0]) / res - 0.5).floor();
    let r1 = ((max_y - g.origin[1]) / res - 0.5).floor();
    if c1 < 0.0 || r1 < 0.0 {
        return true;
    }
    let c1 = (c1 as usize).min(g.cols.saturating_sub(1));
    let r1 = (r1 as usize).min(g.rows.saturating_sub(1));
    let (cos, sin) = c.heading();
    for row in r0..=r1 {
        let cy = g.origin[1] + (row as f64 + 0.5) * res - c.y;
        for col in c0..=c1 {
            let cx = g.origin[0] + (col as f64 + 0.5) * res - c.x;
            let u = cos * cx + sin * cy;
            let v = -sin * cx + cos * cy;
            if u.abs() <= hl && v.abs() <= hw {
                f(col, row, u, v);
            }
        }
    }
    outside
}

/// Least-squares plane fit over footprint cells accepted by `include`.
///
/// Returns the pose together with footprint statistics.
pub fn fit_footprint(
    costmap: &Costmap,
    c: &Configuration,
    vp: &VehicleParams,
    include: impl Fn(CellClass) -> bool,
) -> (TerrainPose, FootprintStats) {
    let mut stats = FootprintStats::default();
    // Normal equations for z = a + b*u + d*v in the body frame.
    let (mut n, mut su, mut sv, mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sz, mut suz, mut svz) = (0.0, 0.0, 0.0);
    let mut known = 0usize;
    stats.outside = for_each_footprint_cell(costmap, c, vp.length, vp.width, |col, row, u, v| {
        let cell = costmap.get(col, row);
        stats.cells += 1;
        match cell.class {
            CellClass::Real => stats.real += 1,
            CellClass::Virtual => stats.virtual_cells += 1,
            CellClass::Unknown => {}
        }
        if cell.is_fatal() {
            stats.fatal += 1;
        }
        if cell.class.is_known() {
            known += 1;
        }
        if cell.class.is_known() && include(cell.class) {
            let z = cell.height;
            n += 1.0;
            su += u;
            sv += v;
            suu += u * u;
            svv += v * v;
            suv += u * v;
            sz += z;
            suz += u * z;
            svz += v * z;
        }
    });
    let support_fraction = if stats.cells == 0 {
        0.0
    } else {
        known as f64 / stats.cells as f64
    };
    if n < 1.0 {
        return (
            TerrainPose {
                support_fraction,
                ..TerrainPose::FLAT
            },
            stats,
        );
    }
    // Centre the sums for a well-conditioned 2x2 solve.
    let mu = su / n;
    let mv = sv / n;
    let mz = sz / n;
    let cuu = suu - n * mu * mu;
    let cvv = svv - n * mv * mv;
    let cuv = suv - n * mu * mv;
    let cuz = suz - n * mu * mz;
    let cvz = svz - n * mv * mz;
    let det = cuu * cvv - cuv * cuv;
    let scale = (cuu + cvv).max(1e-12);
    if n < 3.0 || det <= 1e-9 * scale * scale {
        return (
            TerrainPose {
                pitch: 0.0,
                roll: 0.0,
                height: mz,
                support_fraction,
                degenerate: true,
            },
            stats,
        );
    }
    let b = (cuz * cvv - cvz * cuv) / det;
    let d = (cvz * cuu - cuz * cuv) / det;
    let height = mz - b * mu - d * mv;
    (
        TerrainPose {
            pitch: b.atan(),
            roll: d.atan(),
            height,
            support_fraction,
            degenerate: false,
        },
        stats,
    )
}

/// Plane fit over all known (Real or Virtual) footprint cells.
pub fn estimate_terrain_pose(costmap: &Costmap, c: &Configuration, vp: &VehicleParams) -> TerrainPose {
    fit_footprint(costmap, c, vp, |_| true).0
}
