//! Fatal obstacle labelling over a heightmap.
//!
//! The heightmap is cut into 1D vertical sections along three directions
//! (0, 60 and 120 degrees). Along every section small dips are filled, then
//! every pair of cells within `section_window` is tested for a discrete step
//! or an excessive slope; offending pairs flag their higher cell. A cell is
//! fatal when any direction flags it. Virtual cells never stay fatal, so a
//! steep virtual drop shows up as a fatal band on the real upper edge only.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heightmap::{CellClass, GridGeometry, Heightmap};

const EPS: f64 = 1e-6;

/// Section directions in the grid plane.
pub const SECTION_DIRECTIONS: [f64; 3] = [0.0, PI / 3.0, 2.0 * PI / 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Traversability {
    NonFatal,
    Fatal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostmapCell {
    pub height: f64,
    pub class: CellClass,
    pub traversability: Traversability,
}

impl CostmapCell {
    pub fn is_fatal(&self) -> bool {
        self.traversability == Traversability::Fatal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatalityParams {
    /// Largest traversable discrete step (m).
    pub max_step: f64,
    /// Largest traversable slope (rad).
    pub max_slope: f64,
    /// Length of the pairwise analysis window (m).
    pub section_window: f64,
    /// Widest dip that is filled before analysis (m).
    pub concavity_width: f64,
}

impl Default for FatalityParams {
    fn default() -> Self {
        Self {
            max_step: 0.3,
            max_slope: 45f64.to_radians(),
            section_window: 1.0,
            concavity_width: 0.3,
        }
    }
}

impl FatalityParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.max_step, self.max_slope, self.section_window, self.concavity_width];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("fatality parameters must be positive".into()));
        }
        if self.max_slope >= PI / 2.0 {
            return Err(Error::Config("max_slope must be below 90 degrees".into()));
        }
        Ok(())
    }
}

/// How virtual cells take part in the section analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VirtualHandling {
    /// Virtual heights are analysed like real ones (best-case surfaces).
    #[default]
    Surface,
    /// Virtual cells split sections like unknown cells, so no slope is measured against them.
    Gap,
}

/// One sample of a vertical section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionSample {
    /// Horizontal position along the section (m).
    pub along: f64,
    /// Offset across the section (m); cells sharing a section are not exactly collinear.
    pub lateral: f64,
    pub height: f64,
    pub class: CellClass,
}

/// Flags fatal samples along one section. Unknown samples split the section.
pub fn section_fatal_scan(samples: &[SectionSample], params: &FatalityParams, resolution: f64) -> Vec<bool> {
    let mut flags = vec![false; samples.len()];
    let mut start = 0;
    while start < samples.len() {
        if !samples[start].class.is_known() {
            start += 1;
            continue;
        }
        let mut end = start;
        while end < samples.len() && samples[end].class.is_known() {
            end += 1;
        }
        scan_run(&samples[start..end], params, resolution, &mut flags[start..end]);
        start = end;
    }
    flags
}

fn scan_run(run: &[SectionSample], params: &FatalityParams, resolution: f64, flags: &mut [bool]) {
    let heights = fill_concavities(run, params.concavity_width, resolution);
    let tan_max = params.max_slope.tan();
    let step_run = 2.0 * resolution + EPS;
    for i in 0..run.len() {
        for j in i + 1..run.len() {
            let along = run[j].along - run[i].along;
            if along > params.section_window + EPS {
                break;
            }
            let dist = along.hypot(run[j].lateral - run[i].lateral);
            let rise = (heights[j] - heights[i]).abs();
            let step = rise > params.max_step + EPS && dist <= step_run;
            let slope = rise > dist * tan_max + EPS;
            if step || slope {
                if heights[j] > heights[i] {
                    flags[j] = true;
                } else {
                    flags[i] = true;
                }
            }
        }
    }
}

/// Raises every sample lying in a dip narrower than `width` to the lower of the dip's shoulders.
/// Only real samples act as shoulders: virtual heights are upper bounds and would lift
/// observed ground above itself.
fn fill_concavities(run: &[SectionSample], width: f64, resolution: f64) -> Vec<f64> {
    let span = width + resolution + EPS;
    let mut out: Vec<f64> = run.iter().map(|s| s.height).collect();
    for i in 0..run.len() {
        let h = run[i].height;
        let mut fill = h;
        for l in (0..i).rev() {
            if run[i].along - run[l].along > span {
                break;
            }
            if run[l].height <= h || run[l].class != CellClass::Real {
                continue;
            }
            for r in i + 1..run.len() {
                if run[r].along - run[l].along > span {
                    break;
                }
                if run[r].height > h && run[r].class == CellClass::Real {
                    fill = fill.max(run[l].height.min(run[r].height));
                }
            }
        }
        out[i] = fill;
    }
    out
}

/// Groups the grid cells into sections along `theta`, each sorted by position along the section.
pub fn sections(geometry: &GridGeometry, theta: f64) -> Vec<Vec<(usize, f64, f64)>> {
    let (s, c) = theta.sin_cos();
    let res = geometry.resolution;
    let mut keyed: Vec<(i64, f64, f64, usize)> = Vec::with_capacity(geometry.len());
    for row in 0..geometry.rows {
        for col in 0..geometry.cols {
            let px = (col as f64 + 0.5) * res;
            let py = (row as f64 + 0.5) * res;
            let lateral = -s * px + c * py;
            let line = (lateral / res + 1e-9).floor() as i64;
            let along = c * px + s * py;
            keyed.push((line, along, lateral, geometry.index(col, row)));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<Vec<(usize, f64, f64)>> = Vec::new();
    let mut current_line = None;
    for (line, along, lateral, idx) in keyed {
        if current_line != Some(line) {
            out.push(Vec::new());
            current_line = Some(line);
        }
        out.last_mut().unwrap().push((idx, along, lateral));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub geometry: GridGeometry,
    pub cells: Vec<CostmapCell>,
    pub reference_height: f64,
}

impl Costmap {
    pub fn get(&self, col: usize, row: usize) -> CostmapCell {
        self.cells[self.geometry.index(col, row)]
    }

    pub fn at(&self, x: f64, y: f64) -> Option<CostmapCell> {
        self.geometry.cell_of(x, y).map(|(c, r)| self.get(c, r))
    }

    pub fn fatal_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_fatal()).count()
    }

    /// Heightmap view of this costmap (heights and classes carried through).
    pub fn heightmap(&self) -> Heightmap {
        let mut hm = Heightmap::new(self.geometry, self.reference_height);
        for (dst, src) in hm.cells.iter_mut().zip(&self.cells) {
            dst.height = src.height;
            dst.class = src.class;
        }
        hm
    }

    /// Structured-text form: tokens `R:<h>:N`, `R:<h>:F`, `V:<h>:N`, `U`, bottom row first.
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut s = String::new();
        let _ = writeln!(s, "# vsnav costmap v1");
        let _ = writeln!(s, "resolution {}", g.resolution);
        let _ = writeln!(s, "origin {} {}", g.origin[0], g.origin[1]);
        let _ = writeln!(s, "size {} {}", g.cols, g.rows);
        let _ = writeln!(s, "reference_height {}", self.reference_height);
        for row in 0..g.rows {
            let tokens: Vec<String> = (0..g.cols)
                .map(|col| {
                    let c = self.get(col, row);
                    let t = if c.is_fatal() { 'F' } else { 'N' };
                    match c.class {
                        CellClass::Real => format!("R:{}:{t}", c.height),
                        CellClass::Virtual => format!("V:{}:{t}", c.height),
                        CellClass::Unknown => "U".into(),
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", tokens.join(" "));
        }
        s
    }

    /// Parses [`Costmap::to_text`] output. Errors carry the 1-based line number.
    pub fn from_text(text: &str) -> std::result::Result<Self, (usize, String)> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&"# vsnav costmap v1") {
            return Err((1, "missing costmap header".into()));
        }
        let field = |n: usize, name: &str| -> std::result::Result<Vec<f64>, (usize, String)> {
            let line = lines.get(n).ok_or((n + 1, format!("missing '{name}'")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(name) {
                return Err((n + 1, format!("expected '{name}'")));
            }
            it.map(|v| v.parse::<f64>().map_err(|e| (n + 1, e.to_string()))).collect()
        };
        let resolution = field(1, "resolution")?[0];
        let origin = field(2, "origin")?;
        let size = field(3, "size")?;
        let reference_height = field(4, "reference_height")?[0];
        if origin.len() != 2 || size.len() != 2 {
            return Err((3, "origin and size need two values".into()));
        }
        let geometry = GridGeometry {
            resolution,
            origin: [origin[0], origin[1]],
            cols: size[0] as usize,
            rows: size[1] as usize,
        };
        let mut cells = Vec::with_capacity(geometry.len());
        for row in 0..geometry.rows {
            let n = 5 + row;
            let line = lines.get(n).ok_or((n + 1, "missing grid row".to_string()))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != geometry.cols {
                return Err((n + 1, format!("expected {} cells, found {}", geometry.cols, tokens.len())));
            }
            for tok in tokens {
                let cell = if tok == "U" {
                    CostmapCell {
                        height: f64::NAN,
                        class: CellClass::Unknown,
                        traversability: Traversability::NonFatal,
                    }
                } else {
                    let parts: Vec<&str> = tok.split(':').collect();
                    if parts.len() != 3 {
                        return Err((n + 1, format!("bad cell token '{tok}'")));
                    }
                    let class = match parts[0] {
                        "R" => CellClass::Real,
                        "V" => CellClass::Virtual,
                        _ => return Err((n + 1, format!("bad cell class in '{tok}'"))),
                    };
                    let height = parts[1].parse::<f64>().map_err(|e| (n + 1, e.to_string()))?;
                    let traversability = match parts[2] {
                        "N" => Traversability::NonFatal,
                        "F" => Traversability::Fatal,
                        _ => return Err((n + 1, format!("bad traversability in '{tok}'"))),
                    };
                    CostmapCell {
                        height,
                        class,
                        traversability,
                    }
                };
                cells.push(cell);
            }
        }
        Ok(Self {
            geometry,
            cells,
            reference_height,
        })
    }
}

pub fn build_costmap(hm: &Heightmap, params: &FatalityParams) -> Costmap {
    build_costmap_with(hm, params, VirtualHandling::Surface)
}

pub fn build_costmap_with(hm: &Heightmap, params: &FatalityParams, handling: VirtualHandling) -> Costmap {
    let g = hm.geometry;
    let mut fatal = vec![false; g.len()];
    let mut samples = Vec::new();
    for theta in SECTION_DIRECTIONS {
        for section in sections(&g, theta) {
            samples.clear();
            samples.extend(section.iter().map(|&(idx, along, lateral)| {
                let cell = hm.cells[idx];
                let class = match (cell.class, handling) {
                    (CellClass::Virtual, VirtualHandling::Gap) => CellClass::Unknown,
                    (c, _) => c,
                };
                SectionSample {
                    along,
                    lateral,
                    height: cell.height,
                    class,
                }
            }));
            let flags = section_fatal_scan(&samples, params, g.resolution);
            for (&(idx, _, _), flag) in section.iter().zip(flags) {
                fatal[idx] |= flag;
            }
        }
    }
    let cells = hm
        .cells
        .iter()
        .zip(fatal)
        .map(|(c, f)| CostmapCell {
            height: c.height,
            class: c.class,
            traversability: if f && c.class == CellClass::Real {
                Traversability::Fatal
            } else {
                Traversability::NonFatal
            },
        })
        .collect();
    Costmap {
        geometry: g,
        cells,
        reference_height: hm.reference_height,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightmap::HeightmapCell;

    fn section(heights: &[f64]) -> Vec<SectionSample> {
        heights
            .iter()
            .enumerate()
            .map(|(i, &h)| SectionSample {
                along: i as f64 * 0.1,
                lateral: 0.0,
                height: h,
                class: if h.is_nan() { CellClass::Unknown } else { CellClass::Real },
            })
            .collect()
    }

    #[test]
    fn gentle_ramp_has_no_flags() {
        let h: Vec<f64> = (0..30).map(|i| i as f64 * 0.1 * 20f64.to_radians().tan()).collect();
        let flags = section_fatal_scan(&section(&h), &FatalityParams::default(), 0.1);
        assert!(flags.iter().all(|f| !f));
    }

    #[test]
    fn narrow_deep_trench_is_filled() {
        let mut h = vec![0.0; 20];
        h[10] = -2.0;
        let flags = section_fatal_scan(&section(&h), &FatalityParams::default(), 0.1);
        assert!(flags.iter().all(|f| !f));
    }

    #[test]
    fn wide_trench_is_not_filled() {
        let mut h = vec![0.0; 30];
        for v in h.iter_mut().skip(10).take(8) {
            *v = -2.0;
        }
        let flags = section_fatal_scan(&section(&h), &FatalityParams::default(), 0.1);
        assert!(flags[9] && flags[18]);
        assert!(!flags[10] && !flags[17]);
    }

    #[test]
    fn unknown_splits_section() {
        let h = vec![0.0, 0.0, f64::NAN, 1.0, 1.0];
        let flags = section_fatal_scan(&section(&h), &FatalityParams::default(), 0.1);
        assert!(flags.iter().all(|f| !f));
    }

    #[test]
    fn flat_costmap_has_no_fatal_cells() {
        let g = GridGeometry {
            resolution: 0.1,
            origin: [0.0, 0.0],
            cols: 30,
            rows: 30,
        };
        let mut hm = Heightmap::new(g, 0.0);
        hm.cells.iter_mut().for_each(|c| *c = HeightmapCell::real(0.0));
        assert_eq!(build_costmap(&hm, &FatalityParams::default()).fatal_count(), 0);
    }

    #[test]
    fn sections_partition_every_cell_once() {
        let g = GridGeometry {
            resolution: 0.1,
            origin: [0.0, 0.0],
            cols: 17,
            rows: 11,
        };
        for theta in SECTION_DIRECTIONS {
            let mut seen = vec![0; g.len()];
            for s in sections(&g, theta) {
                for (idx, _, _) in s {
                    seen[idx] += 1;
                }
            }
            assert!(seen.iter().all(|&n| n == 1));
        }
    }

    #[test]
    fn text_round_trip() {
        let g = GridGeometry {
            resolution: 0.1,
            origin: [-1.0, 2.5],
            cols: 4,
            rows: 3,
        };
        let mut hm = Heightmap::new(g, 0.2);
        hm.set(0, 0, HeightmapCell::real(0.3));
        hm.set(1, 0, HeightmapCell::real(-0.7));
        hm.set(2, 1, HeightmapCell::virtual_surface(-0.4));
        let cm = build_costmap(&hm, &FatalityParams::default());
        let back = Costmap::from_text(&cm.to_text()).unwrap();
        assert_eq!(back.geometry, cm.geometry);
        for (a, b) in back.cells.iter().zip(&cm.cells) {
            assert_eq!(a.class, b.class);
            assert_eq!(a.traversability, b.traversability);
            assert!(a.height == b.height || (a.height.is_nan() && b.height.is_nan()));
        }
    }
}
