//! Obstacle-aware cost-to-go used to guide the hybrid A* search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::costmap::Costmap;
use crate::geom::Configuration;

/// Worst-case ratio between 16-connected grid distance and straight-line distance.
pub const SIXTEEN_CONNECTED_STRETCH: f64 = 1.0276;

const MOVES: [(i32, i32); 16] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
    (2, 1),
    (2, -1),
    (-2, 1),
    (-2, -1),
    (1, 2),
    (1, -2),
    (-1, 2),
    (-1, -2),
];

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest distance from every NonFatal cell to the goal cell, over NonFatal cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    cols: usize,
    rows: usize,
    distance: Vec<f64>,
}

impl DistanceField {
    /// Returns `None` when the goal lies outside the costmap or on a fatal cell.
    pub fn compute(costmap: &Costmap, goal: &Configuration) -> Option<Self> {
        let g = &costmap.geometry;
        let (gc, gr) = g.cell_of(goal.x, goal.y)?;
        if costmap.get(gc, gr).is_fatal() {
            return None;
        }
        let passable = |c: i32, r: i32| {
            c >= 0 && r >= 0 && (c as usize) < g.cols && (r as usize) < g.rows && !costmap.get(c as usize, r as usize).is_fatal()
        };
        let mut distance = vec![f64::INFINITY; g.len()];
        let mut heap = BinaryHeap::new();
        let start = g.index(gc, gr);
        distance[start] = 0.0;
        heap.push(Entry { cost: 0.0, idx: start });
        while let Some(Entry { cost, idx }) = heap.pop() {
            if cost > distance[idx] {
                continue;
            }
            let c = (idx % g.cols) as i32;
            let r = (idx / g.cols) as i32;
            for (dc, dr) in MOVES {
                let (nc, nr) = (c + dc, r + dr);
                if !passable(nc, nr) {
                    continue;
                }
                // Knight moves must not cut through a fatal cell.
                if dc.abs() == 2 && !passable(c + dc / 2, r) && !passable(c + dc / 2, r + dr) {
                    continue;
                }
                if dr.abs() == 2 && !passable(c, r + dr / 2) && !passable(c + dc, r + dr / 2) {
                    continue;
                }
                if dc.abs() == 1 && dr.abs() == 1 && !passable(c + dc, r) && !passable(c, r + dr) {
                    continue;
                }
                let step = ((dc * dc + dr * dr) as f64).sqrt() * g.resolution;
                let n = g.index(nc as usize, nr as usize);
                let nd = cost + step;
                if nd < distance[n] {
                    distance[n] = nd;
                    heap.push(Entry { cost: nd, idx: n });
                }
            }
        }
        Some(Self {
            cols: g.cols,
            rows: g.rows,
            distance,
        })
    }

    /// Grid distance at a cell (infinite when unreachable).
    pub fn at_cell(&self, col: usize, row: usize) -> f64 {
        if col >= self.cols || row >= self.rows {
            return f64::INFINITY;
        }
        self.distance[row * self.cols + col]
    }
}

/// Cost-to-go estimate: the larger of the straight-line distance and the
/// obstacle-aware field (deflated by the grid stretch factor). Falls back to the
/// straight-line distance outside the field or where the field is unreachable.
pub fn heuristic(c: &Configuration, goal: &Configuration, costmap: &Costmap, field: Option<&DistanceField>) -> f64 {
    let euclid = c.distance(goal);
    let Some(field) = field else {
        return euclid;
    };
    match costmap.geometry.cell_of(c.x, c.y) {
        Some((col, row)) => {
            let d = field.at_cell(col, row);
            if d.is_finite() {
                euclid.max(d / SIXTEEN_CONNECTED_STRETCH)
            } else {
                euclid
            }
        }
        None => euclid,
    }
}
