#![allow(dead_code)]

use vsnav::costmap::{build_costmap, Costmap, FatalityParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsnav::heightmap::{scan_column, CellClass, Column, GridGeometry, Heightmap, HeightmapCell};
use vsnav::occupancy::VoxelState::{self, Free, Occupied, Unobserved};

pub fn geometry(cols: usize, rows: usize, res: f64, origin: [f64; 2]) -> GridGeometry {
    GridGeometry {
        resolution: res,
        origin,
        cols,
        rows,
    }
}

/// Heightmap whose cell at centre (x, y) is `f(x, y)`.
pub fn heightmap(g: GridGeometry, f: impl Fn(f64, f64) -> HeightmapCell) -> Heightmap {
    let mut hm = Heightmap::new(g, 0.0);
    for row in 0..g.rows {
        for col in 0..g.cols {
            let (x, y) = g.cell_center(col, row);
            hm.set(col, row, f(x, y));
        }
    }
    hm
}

pub fn real_heightmap(g: GridGeometry, f: impl Fn(f64, f64) -> f64) -> Heightmap {
    heightmap(g, |x, y| HeightmapCell::real(f(x, y)))
}

pub fn real_costmap(g: GridGeometry, f: impl Fn(f64, f64) -> f64) -> Costmap {
    build_costmap(&real_heightmap(g, f), &FatalityParams::default())
}

pub fn fatal_cells(cm: &Costmap) -> Vec<(usize, usize)> {
    let g = cm.geometry;
    (0..g.rows)
        .flat_map(|r| (0..g.cols).map(move |c| (c, r)))
        .filter(|&(c, r)| cm.get(c, r).is_fatal())
        .collect()
}

pub fn count_class(cm: &Costmap, class: CellClass) -> usize {
    cm.cells.iter().filter(|c| c.class == class).count()
}

/// Brute force: list every admissible surface with its distance, take the smallest.
pub fn column_oracle(states: &[VoxelState], lo: usize, hi: usize, res: f64, reference: f64, clearance: usize) -> HeightmapCell {
    let at = |i: usize| if i < states.len() { states[i] } else { Unobserved };
    let clear = |i: usize| (1..=clearance).all(|d| at(i + d) != Occupied);
    let mut real = Vec::new();
    let mut virt = Vec::new();
    for i in lo..hi {
        if !clear(i) {
            continue;
        }
        if at(i) == Occupied {
            real.push((i + 1) as f64 * res);
        }
        if i >= 1 && at(i) == Free && at(i - 1) == Unobserved {
            virt.push(i as f64 * res);
        }
    }
    let pick = |mut v: Vec<f64>| {
        v.sort_by(|a, b| {
            let ka = ((a - reference).abs(), *a);
            let kb = ((b - reference).abs(), *b);
            ka.partial_cmp(&kb).unwrap()
        });
        v.first().copied()
    };
    if let Some(h) = pick(real) {
        HeightmapCell::real(h)
    } else if let Some(h) = pick(virt) {
        HeightmapCell::virtual_surface(h)
    } else {
        HeightmapCell::UNKNOWN
    }
}

pub fn same_cell(a: HeightmapCell, b: HeightmapCell) -> bool {
    a.class == b.class && (a.class == CellClass::Unknown || (a.height - b.height).abs() < 1e-9)
}

pub fn random_state(rng: &mut impl Rng) -> VoxelState {
    match rng.random_range(0..3) {
        0 => Free,
        1 => Occupied,
        _ => Unobserved,
    }
}

/// Runs `scan_column` against the oracle on random columns. Returns the number of
/// columns checked and a description of the first disagreement, if any.
pub fn column_scan_agreement(seed: u64, cases: usize) -> (usize, Option<String>) {
    const RES: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let len = rng.random_range(1..=12);
        let states: Vec<VoxelState> = (0..len).map(|_| random_state(&mut rng)).collect();
        let lo = rng.random_range(0..len);
        let hi = rng.random_range(lo..=len);
        let clearance = rng.random_range(1..=4);
        // Reference on the grid and between faces, so both tie orders occur.
        let reference = rng.random_range(0..=2 * len) as f64 * 0.5 * RES;
        let column = Column {
            states: &states,
            search: lo..hi,
            bottom_z: 0.0,
            resolution: RES,
        };
        let got = scan_column(&column, reference, clearance);
        let want = column_oracle(&states, lo, hi, RES, reference, clearance);
        if !same_cell(got, want) {
            let msg = format!("case {case}: {states:?} search {lo}..{hi} ref {reference} c {clearance}: {got:?} vs {want:?}");
            return (case, Some(msg));
        }
    }
    (cases, None)
}
