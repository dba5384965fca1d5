//! Heightfield terrain with box obstacles and fast ray intersection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns per acceleration block edge.
const BLOCK: usize = 16;

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxObstacle {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    /// Entry distance of a ray, if it hits within `[0, t_max]`.
    pub fn intersect(&self, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<f64> {
        slab(o, d, self.min, self.max, t_max)
    }
}

/// Slab test returning the entry distance (or 0 when starting inside).
pub(crate) fn slab(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3], t_max: f64) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

/// Dense grid of column heights. Each cell is a flat-topped column, so slopes
/// are fine staircases at the grid spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub cols: usize,
    pub rows: usize,
    heights: Vec<f64>,
    block_cols: usize,
    block_rows: usize,
    block_max: Vec<f64>,
    max_height: f64,
}

impl Heightfield {
    pub fn new(origin: [f64; 2], spacing: f64, cols: usize, rows: usize, heights: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0) || cols == 0 || rows == 0 {
            return Err(Error::Config("heightfield needs positive spacing and size".into()));
        }
        if heights.len() != cols * rows {
            return Err(Error::Config(format!(
                "heightfield expects {} heights, got {}",
                cols * rows,
                heights.len()
            )));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::Config("heightfield heights must be finite".into()));
        }
        let block_cols = cols.div_ceil(BLOCK);
        let block_rows = rows.div_ceil(BLOCK);
        let mut block_max = vec![f64::NEG_INFINITY; block_cols * block_rows];
        for r in 0..rows {
            for c in 0..cols {
                let b = (r / BLOCK) * block_cols + c / BLOCK;
                block_max[b] = block_max[b].max(heights[r * cols + c]);
            }
        }
        let max_height = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            origin,
            spacing,
            cols,
            rows,
            heights,
            block_cols,
            block_rows,
            block_max,
            max_height,
        })
    }

    /// Builds a heightfield by sampling `f` at cell centres.
    pub fn from_fn(origin: [f64; 2], spacing: f64, cols: usize, rows: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut heights = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                heights.push(f(
                    origin[0] + (c as f64 + 0.5) * spacing,
                    origin[1] + (r as f64 + 0.5) * spacing,
                ));
            }
        }
        Self::new(origin, spacing, cols, rows, heights)
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin[0]) / self.spacing).floor();
        let r = ((y - self.origin[1]) / self.spacing).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows).then(|| (c as usize, r as usize))
    }

    /// Column height at a point; `None` off the grid.
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.cell_of(x, y).map(|(c, r)| self.heights[r * self.cols + c])
    }

    fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.cols as f64 * self.spacing,
                self.origin[1] + self.rows as f64 * self.spacing,
            ],
        )
    }

    /// Lowest column height over an axis-aligned rectangle.
    pub fn min_height_in(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<f64> {
        let c0 = ((x0 - self.origin[0]) / self.spacing).floor().max(0.0) as usize;
        let r0 = ((y0 - self.origin[1]) / self.spacing).floor().max(0.0) as usize;
        let c1 = (((x1 - self.origin[0]) / self.spacing).ceil() as usize).min(self.cols);
        let r1 = (((y1 - self.origin[1]) / self.spacing).ceil() as usize).min(self.rows);
        let mut m: Option<f64> = None;
        for r in r0..r1 {
            for c in c0..c1 {
                let h = self.heights[r * self.cols + c];
                m = Some(m.map_or(h, |v| v.min(h)));
            }
        }
        m
    }

    /// First intersection distance of a ray with the column tops or sides.
    pub fn raycast(&self, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<f64> {
        let (lo, hi) = self.extent();
        let t_enter = slab(
            o,
            d,
            [lo[0], lo[1], f64::NEG_INFINITY],
            [hi[0], hi[1], f64::INFINITY],
            t_max,
        )?;
        // Leave once the ray climbs above everything.
        let mut t_end = t_max;
        if d[2] > 0.0 {
            t_end = t_end.min(((self.max_height - o[2]) / d[2]).max(0.0));
        }
        if o[2] + d[2] * t_enter > self.max_height && d[2] >= 0.0 {
            return None;
        }
        let bsize = self.spacing * BLOCK as f64;
        let mut hit = None;
        dda(o, d, self.origin, bsize, t_enter, t_end, |bc, br, ta, tb| {
            if bc < 0 || br < 0 || bc as usize >= self.block_cols || br as usize >= self.block_rows {
                return true;
            }
            let bmax = self.block_max[br as usize * self.block_cols + bc as usize];
            let zmin = (o[2] + d[2] * ta).min(o[2] + d[2] * tb);
            if zmin > bmax {
                return true;
            }
            dda(o, d, self.origin, self.spacing, ta, tb, |c, r, ca, cb| {
                if c < 0 || r < 0 || c as usize >= self.cols || r as usize >= self.rows {
                    return true;
                }
                let h = self.heights[r as usize * self.cols + c as usize];
                let za = o[2] + d[2] * ca;
                if za <= h {
                    hit = Some(ca);
                    return false;
                }
                let zb = o[2] + d[2] * cb;
                if zb <= h {
                    hit = Some((o[2] - h) / -d[2]);
                    return false;
                }
                true
            });
            hit.is_none()
        });
        hit
    }
}

/// Walks the cells of a square 2D grid crossed by the ray over `[t0, t1]`.
/// The callback receives the cell and the sub-interval; returning `false` stops.
fn dda(
    o: [f64; 3],
    d: [f64; 3],
    origin: [f64; 2],
    size: f64,
    t0: f64,
    t1: f64,
    mut f: impl FnMut(i64, i64, f64, f64) -> bool,
) {
    if t1 <= t0 {
        return;
    }
    // Sample just past t0 so a start on a cell boundary picks the cell being entered.
    let tm = (t0 + 1e-9 * (1.0 + t0.abs())).min(0.5 * (t0 + t1));
    let px = (o[0] + d[0] * tm - origin[0]) / size;
    let py = (o[1] + d[1] * tm - origin[1]) / size;
    let mut ix = px.floor() as i64;
    let mut iy = py.floor() as i64;
    let axis = |dv: f64, i: i64, ov: f64, org: f64| -> (i64, f64, f64) {
        if dv > 0.0 {
            (1, (org + (i + 1) as f64 * size - ov) / dv, size / dv)
        } else if dv < 0.0 {
            (-1, (org + i as f64 * size - ov) / dv, -size / dv)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tmx, dx) = axis(d[0], ix, o[0], origin[0]);
    let (sy, mut tmy, dy) = axis(d[1], iy, o[1], origin[1]);
    let mut t = t0;
    loop {
        let next = tmx.min(tmy).min(t1);
        if !f(ix, iy, t, next) || next >= t1 {
            return;
        }
        t = next;
        if tmx <= tmy {
            ix += sx;
            tmx += dx;
        } else {
            iy += sy;
            tmy += dy;
        }
    }
}

/// Terrain plus box obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub name: String,
    pub heightfield: Heightfield,
    pub boxes: Vec<BoxObstacle>,
}

impl WorldModel {
    pub fn new(name: impl Into<String>, heightfield: Heightfield, boxes: Vec<BoxObstacle>) -> Result<Self> {
        for b in &boxes {
            if (0..3).any(|a| !(b.max[a] > b.min[a]) || !b.min[a].is_finite() || !b.max[a].is_finite()) {
                return Err(Error::Config(format!("degenerate box {:?}..{:?}", b.min, b.max)));
            }
        }
        Ok(Self {
            name: name.into(),
            heightfield,
            boxes,
        })
    }

    /// Supporting surface height at a point: column top or the top of a box standing on it.
    pub fn ground_height(&self, x: f64, y: f64) -> Option<f64> {
        let mut h = self.heightfield.height(x, y)?;
        for b in &self.boxes {
            if b.contains_xy(x, y) && b.min[2] <= h + 0.05 {
                h = h.max(b.max[2]);
            }
        }
        Some(h)
    }

    /// Lowest true surface height over a rectangle (boxes included where they stand).
    pub fn min_surface_in(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<f64> {
        let hf = &self.heightfield;
        let s = hf.spacing;
        let mut m: Option<f64> = None;
        let mut y = y0 + 0.5 * s;
        while y < y1 {
            let mut x = x0 + 0.5 * s;
            while x < x1 {
                if let Some(h) = self.ground_height(x, y) {
                    m = Some(m.map_or(h, |v: f64| v.min(h)));
                }
                x += s;
            }
            y += s;
        }
        m.or_else(|| hf.min_height_in(x0, y0, x1, y1))
    }

    /// Nearest hit of a ray with terrain and boxes.
    pub fn raycast(&self, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<f64> {
        let mut best = self.heightfield.raycast(o, d, t_max);
        for b in &self.boxes {
            let limit = best.unwrap_or(t_max);
            if let Some(t) = b.intersect(o, d, limit) {
                if best.is_none_or(|bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(h: f64) -> Heightfield {
        Heightfield::from_fn([-20.0, -20.0], 0.05, 800, 800, |_, _| h).unwrap()
    }

    #[test]
    fn downward_beam_hits_flat_plane() {
        let hf = flat(0.0);
        let el = -15f64.to_radians();
        let d = [el.cos(), 0.0, el.sin()];
        let t = hf.raycast([0.0, 0.0, 1.0], d, 20.0).unwrap();
        assert!((t - 1.0 / 15f64.to_radians().sin()).abs() < 1e-9);
    }

    #[test]
    fn upward_beam_misses() {
        let hf = flat(0.0);
        assert!(hf.raycast([0.0, 0.0, 1.0], [0.9, 0.0, 0.1], 20.0).is_none());
    }

    #[test]
    fn wall_face_is_hit_at_its_side() {
        let hf = Heightfield::from_fn([-5.0, -5.0], 0.05, 200, 200, |x, _| if x > 2.0 { 3.0 } else { 0.0 }).unwrap();
        let t = hf.raycast([0.0, 0.3, 1.0], [1.0, 0.0, 0.0], 20.0).unwrap();
        assert!((t - 2.0).abs() < 1e-9);
    }

    #[test]
    fn raycast_matches_brute_force_marching() {
        let hf = Heightfield::from_fn([-4.0, -4.0], 0.05, 160, 160, |x, y| (0.7 * x).sin() * 0.4 + 0.2 * (1.3 * y).cos()).unwrap();
        for k in 0..200 {
            let az = k as f64 * 0.731;
            let el = -0.05 - 0.4 * ((k * 7 % 13) as f64 / 13.0);
            let d = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let o = [0.1, -0.2, 1.5];
            let fast = hf.raycast(o, d, 10.0);
            // March finely; the fast result must be at or just before the first submerged sample.
            let mut slow = None;
            let mut t = 0.0;
            while t < 10.0 {
                let p = [o[0] + d[0] * t, o[1] + d[1] * t, o[2] + d[2] * t];
                if hf.height(p[0], p[1]).is_some_and(|h| p[2] <= h) {
                    slow = Some(t);
                    break;
                }
                t += 1e-4;
            }
            match (fast, slow) {
                (Some(a), Some(b)) => assert!(a <= b + 1e-9 && b - a < 2e-4, "{a} vs {b}"),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn box_hit_wins_when_nearer() {
        let w = WorldModel::new("t", flat(0.0), vec![BoxObstacle::new([2.0, -1.0, 0.0], [3.0, 1.0, 2.0])]).unwrap();
        let t = w.raycast([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 20.0).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert_eq!(w.ground_height(2.5, 0.0), Some(2.0));
        assert_eq!(w.ground_height(1.5, 0.0), Some(0.0));
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(WorldModel::new("t", flat(0.0), vec![BoxObstacle::new([0.0; 3], [1.0, 0.0, 1.0])]).is_err());
    }
}
