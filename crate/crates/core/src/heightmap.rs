//! 2.5D heightmap extraction from the voxel map.
//!
//! Each vertical voxel column is scanned independently. A column produces:
//!
//! * `Real` at the occupied voxel with enough free/unobserved headroom that is
//!   nearest the reference height, otherwise
//! * `Virtual` at a free voxel sitting directly on an unobserved voxel, chosen
//!   the same way, otherwise
//! * `Unknown`.
//!
//! A virtual surface is the shallowest surface consistent with what has been
//! observed, so its height is an upper bound for whatever lies beneath.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::{OccupancyMap, VoxelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Real,
    Virtual,
    Unknown,
}

impl CellClass {
    pub fn is_known(self) -> bool {
        !matches!(self, CellClass::Unknown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightmapCell {
    /// World z of the supporting surface, NaN when `class` is `Unknown`.
    pub height: f64,
    pub class: CellClass,
}

impl HeightmapCell {
    pub const UNKNOWN: HeightmapCell = HeightmapCell {
        height: f64::NAN,
        class: CellClass::Unknown,
    };

    pub fn real(height: f64) -> Self {
        Self {
            height,
            class: CellClass::Real,
        }
    }

    pub fn virtual_surface(height: f64) -> Self {
        Self {
            height,
            class: CellClass::Virtual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnScanParams {
    /// Free or unobserved voxels required directly above a candidate.
    pub clearance_voxels: usize,
    /// Search range relative to the reference height (metres).
    pub search_low: f64,
    pub search_high: f64,
}

impl Default for ColumnScanParams {
    fn default() -> Self {
        Self::for_vehicle(0.9, 0.1)
    }
}

impl ColumnScanParams {
    /// `clearance_voxels = ceil(vehicle_height / resolution) + 2`, search range [-3 m, +1.5 m].
    pub fn for_vehicle(vehicle_height: f64, resolution: f64) -> Self {
        Self {
            clearance_voxels: (vehicle_height / resolution - 1e-9).ceil() as usize + 2,
            search_low: -3.0,
            search_high: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clearance_voxels == 0 {
            return Err(Error::Config("clearance_voxels must be at least 1".into()));
        }
        if !(self.search_low < self.search_high) {
            return Err(Error::Config("search_low must be below search_high".into()));
        }
        Ok(())
    }
}

/// A vertical run of voxel states, bottom to top.
///
/// `states[search]` are the voxels eligible as surfaces. The slice must hold
/// one voxel below `search.start` (or `search.start == 0`) and may extend above
/// `search.end` to provide clearance headroom; anything past the slice reads
/// as unobserved.
#[derive(Debug, Clone)]
pub struct Column<'a> {
    pub states: &'a [VoxelState],
    pub search: Range<usize>,
    /// World z of the bottom face of `states[0]`.
    pub bottom_z: f64,
    pub resolution: f64,
}

impl Column<'_> {
    fn state(&self, i: usize) -> VoxelState {
        self.states.get(i).copied().unwrap_or(VoxelState::Unobserved)
    }

    fn has_clearance(&self, i: usize, clearance: usize) -> bool {
        (i + 1..=i + clearance).all(|j| self.state(j) != VoxelState::Occupied)
    }
}

/// Picks the surface for one column.
pub fn scan_column(column: &Column<'_>, reference_height: f64, clearance_voxels: usize) -> HeightmapCell {
    let res = column.resolution;
    let nearest = |candidates: &mut dyn Iterator<Item = f64>| {
        let mut best: Option<f64> = None;
        for h in candidates {
            best = match best {
                None => Some(h),
                Some(b) => {
                    let (db, dh) = ((b - reference_height).abs(), (h - reference_height).abs());
                    if dh < db || (dh == db && h < b) {
                        Some(h)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    };

    let mut real = column
        .search
        .clone()
        .filter(|&i| column.state(i) == VoxelState::Occupied && column.has_clearance(i, clearance_voxels))
        .map(|i| column.bottom_z + (i + 1) as f64 * res);
    if let Some(h) = nearest(&mut real) {
        return HeightmapCell::real(h);
    }

    let mut virt = column
        .search
        .clone()
        .filter(|&i| {
            i > 0
                && column.state(i) == VoxelState::Free
                && column.state(i - 1) == VoxelState::Unobserved
                && column.has_clearance(i, clearance_voxels)
        })
        .map(|i| column.bottom_z + i as f64 * res);
    match nearest(&mut virt) {
        Some(h) => HeightmapCell::virtual_surface(h),
        None => HeightmapCell::UNKNOWN,
    }
}

/// Grid placement of a 2D map (cells are `resolution` squares, cell (0,0) starts at `origin`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub cols: usize,
    pub rows: usize,
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin[0] + (col as f64 + 0.5) * self.resolution,
            self.origin[1] + (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing a world point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin[0]) / self.resolution).floor();
        let r = ((y - self.origin[1]) / self.resolution).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            None
        } else {
            Some((c as usize, r as usize))
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some()
    }

    pub fn max_x(&self) -> f64 {
        self.origin[0] + self.cols as f64 * self.resolution
    }

    pub fn max_y(&self) -> f64 {
        self.origin[1] + self.rows as f64 * self.resolution
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heightmap {
    pub geometry: GridGeometry,
    pub cells: Vec<HeightmapCell>,
    pub reference_height: f64,
}

impl Heightmap {
    pub fn new(geometry: GridGeometry, reference_height: f64) -> Self {
        Self {
            geometry,
            cells: vec![HeightmapCell::UNKNOWN; geometry.len()],
            reference_height,
        }
    }

    pub fn get(&self, col: usize, row: usize) -> HeightmapCell {
        self.cells[self.geometry.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, cell: HeightmapCell) {
        let i = self.geometry.index(col, row);
        self.cells[i] = cell;
    }

    pub fn at(&self, x: f64, y: f64) -> Option<HeightmapCell> {
        self.geometry.cell_of(x, y).map(|(c, r)| self.get(c, r))
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.cells.iter().filter(|c| c.class == class).count()
    }

    /// Structured-text export: one line per row (bottom row first), `R:<h>`, `V:<h>` or `U` tokens.
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut s = String::new();
        let _ = writeln!(s, "# vsnav heightmap v1");
        let _ = writeln!(s, "resolution {}", g.resolution);
        let _ = writeln!(s, "origin {} {}", g.origin[0], g.origin[1]);
        let _ = writeln!(s, "size {} {}", g.cols, g.rows);
        let _ = writeln!(s, "reference_height {}", self.reference_height);
        for row in 0..g.rows {
            let line: Vec<String> = (0..g.cols)
                .map(|col| {
                    let c = self.get(col, row);
                    match c.class {
                        CellClass::Real => format!("R:{}", c.height),
                        CellClass::Virtual => format!("V:{}", c.height),
                        CellClass::Unknown => "U".to_string(),
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

/// Collapses the voxel map over `region` into a heightmap.
///
/// `region` must be aligned with the voxel grid and lie inside the map window.
pub fn extract_heightmap(
    map: &OccupancyMap,
    region: GridGeometry,
    reference_height: f64,
    params: &ColumnScanParams,
) -> Result<Heightmap> {
    params.validate()?;
    let res = map.resolution();
    if (region.resolution - res).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "heightmap resolution {} differs from map resolution {res}",
            region.resolution
        )));
    }
    let origin = map.origin();
    let fx = (region.origin[0] - origin[0]) / res;
    let fy = (region.origin[1] - origin[1]) / res;
    if (fx - fx.round()).abs() > 1e-6 || (fy - fy.round()).abs() > 1e-6 {
        return Err(Error::Config("heightmap region is not aligned with the voxel grid".into()));
    }
    let wc = map.window_center();
    let wh = map.window_half_extent();
    let slack = 0.5 * res + 1e-9;
    if region.origin[0] < wc[0] - wh[0] - slack
        || region.origin[1] < wc[1] - wh[1] - slack
        || region.max_x() > wc[0] + wh[0] + slack
        || region.max_y() > wc[1] + wh[1] + slack
    {
        return Err(Error::RegionOutsideWindow(format!(
            "[{:.2}, {:.2}] x [{:.2}, {:.2}]",
            region.origin[0],
            region.max_x(),
            region.origin[1],
            region.max_y()
        )));
    }
    let ix0 = fx.round() as i32;
    let iy0 = fy.round() as i32;
    let iz_lo = ((reference_height + params.search_low - origin[2]) / res).floor() as i32;
    let iz_hi = ((reference_height + params.search_high - origin[2]) / res).ceil() as i32 - 1;
    // One voxel below the search range for the virtual test, headroom above for clearance.
    let fetch_lo = iz_lo - 1;
    let fetch_hi = iz_hi + params.clearance_voxels as i32;
    let search = 1..(iz_hi - iz_lo + 2) as usize;
    let bottom_z = origin[2] + fetch_lo as f64 * res;

    let mut hm = Heightmap::new(region, reference_height);
    let mut states = Vec::with_capacity((fetch_hi - fetch_lo + 1) as usize);
    for row in 0..region.rows {
        for col in 0..region.cols {
            map.column_states(ix0 + col as i32, iy0 + row as i32, fetch_lo, fetch_hi, &mut states);
            let column = Column {
                states: &states,
                search: search.clone(),
                bottom_z,
                resolution: res,
            };
            hm.set(col, row, scan_column(&column, reference_height, params.clearance_voxels));
        }
    }
    Ok(hm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use VoxelState::{Free as F, Occupied as O, Unobserved as U};

    fn col(states: &[VoxelState]) -> Column<'_> {
        Column {
            states,
            search: 1..states.len(),
            bottom_z: 0.0,
            resolution: 0.1,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn column_a_virtual_at_free_unobserved_interface() {
        // Unobserved below, a free stack above.
        let s = [U, U, U, F, F, F, F, F];
        let c = scan_column(&col(&s), 0.5, 3);
        assert_eq!(c.class, CellClass::Virtual);
        assert!(close(c.height, 0.3));
    }

    #[test]
    fn column_b_real_at_occupied_voxel() {
        let s = [U, O, O, F, F, F, F, F];
        let c = scan_column(&col(&s), 0.3, 3);
        assert_eq!(c.class, CellClass::Real);
        assert!(close(c.height, 0.3));
    }

    #[test]
    fn column_c_rejects_candidate_without_clearance() {
        // Lower surface at index 1, an overhang at index 4 with only one free voxel above.
        let s = [U, O, F, F, O, F, O, O, O];
        let c = scan_column(&col(&s), 0.5, 2);
        assert_eq!(c.class, CellClass::Real);
        assert!(close(c.height, 0.2));
    }

    #[test]
    fn real_wins_over_virtual() {
        let s = [U, O, F, F, F, U, F, F, F, F];
        let c = scan_column(&col(&s), 0.6, 2);
        assert_eq!(c.class, CellClass::Real);
        assert!(close(c.height, 0.2));
    }

    #[test]
    fn ties_go_to_lower_candidate() {
        let s = [U, O, F, F, O, F, F, F, F];
        // Tops at 0.2 and 0.5, reference exactly between.
        let c = scan_column(&col(&s), 0.35, 2);
        assert!(close(c.height, 0.2));
    }

    #[test]
    fn all_unobserved_is_unknown() {
        let s = [U; 10];
        assert_eq!(scan_column(&col(&s), 0.0, 2).class, CellClass::Unknown);
        assert!(scan_column(&col(&s), 0.0, 2).height.is_nan());
    }

    #[test]
    fn clearance_default_from_vehicle_height() {
        assert_eq!(ColumnScanParams::for_vehicle(0.9, 0.1).clearance_voxels, 11);
        assert_eq!(ColumnScanParams::for_vehicle(0.55, 0.1).clearance_voxels, 8);
    }
}
