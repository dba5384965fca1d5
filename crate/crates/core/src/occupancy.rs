//! Local 3D probabilistic voxel occupancy map.
//!
//! Voxels hold an occupancy log-odds value that is updated from lidar rays:
//!
//! ```text
//! every voxel crossed before the endpoint  += L_miss
//! the endpoint voxel                        += L_hit
//! log_odds = clamp(log_odds, L_min, L_max)
//! ```
//!
//! Storage is sparse: voxels live in 8x8x8 chunks keyed by chunk index and a
//! voxel that was never touched by a ray reads back as `Unobserved`. The map only
//! covers a window around the robot; [`OccupancyMap::crop_to_window`] discards
//! everything outside it.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK_BITS: i32 = 3;
const CHUNK_DIM: i32 = 1 << CHUNK_BITS;
const CHUNK_MASK: i32 = CHUNK_DIM - 1;
const CHUNK_VOLUME: usize = (CHUNK_DIM * CHUNK_DIM * CHUNK_DIM) as usize;

/// Header line of the text map dump.
pub const DUMP_HEADER: &str = "# vsnav occupancy map v1";

/// Integer voxel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    fn chunk(&self) -> (ChunkKey, usize) {
        let ck = ChunkKey {
            cx: self.ix >> CHUNK_BITS,
            cy: self.iy >> CHUNK_BITS,
            cz: self.iz >> CHUNK_BITS,
        };
        let lx = (self.ix & CHUNK_MASK) as usize;
        let ly = (self.iy & CHUNK_MASK) as usize;
        let lz = (self.iz & CHUNK_MASK) as usize;
        (ck, (lz * CHUNK_DIM as usize + ly) * CHUNK_DIM as usize + lx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct ChunkKey {
    cx: i32,
    cy: i32,
    cz: i32,
}

/// Classified voxel state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoxelState {
    Unobserved,
    Free,
    Occupied,
}

/// Stored payload of an observed voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelData {
    pub log_odds: f32,
    pub last_update: f64,
}

/// A single lidar measurement in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarRay {
    pub origin: [f64; 3],
    pub endpoint: [f64; 3],
    pub time: f64,
    /// Always true for simulated data: beams without a return are dropped upstream.
    pub is_return: bool,
}

impl LidarRay {
    pub fn new(origin: [f64; 3], endpoint: [f64; 3], time: f64) -> Self {
        Self {
            origin,
            endpoint,
            time,
            is_return: true,
        }
    }

    fn is_finite(&self) -> bool {
        self.origin.iter().chain(self.endpoint.iter()).all(|v| v.is_finite()) && self.time.is_finite()
    }
}

/// Log-odds model and window geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub resolution: f64,
    pub hit_log_odds: f32,
    pub miss_log_odds: f32,
    pub min_log_odds: f32,
    pub max_log_odds: f32,
    pub occupied_threshold: f32,
    pub free_threshold: f32,
    /// Half extent of the retention window along x, y and z (metres).
    pub window_half_extent: [f64; 3],
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            hit_log_odds: prob_to_log_odds(0.7),
            miss_log_odds: prob_to_log_odds(0.4),
            min_log_odds: -2.0,
            max_log_odds: 3.5,
            occupied_threshold: 0.0,
            free_threshold: 0.0,
            window_half_extent: [5.0, 5.0, 3.0],
        }
    }
}

impl OccupancyConfig {
    /// Configures a hysteresis band of the given width centred on the current thresholds' midpoint.
    pub fn with_hysteresis(mut self, width: f32) -> Self {
        let mid = 0.5 * (self.occupied_threshold + self.free_threshold);
        self.occupied_threshold = mid + 0.5 * width;
        self.free_threshold = mid - 0.5 * width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(Error::Config("occupancy resolution must be positive".into()));
        }
        if !(self.min_log_odds < self.max_log_odds) {
            return Err(Error::Config("min_log_odds must be below max_log_odds".into()));
        }
        if self.free_threshold > self.occupied_threshold {
            return Err(Error::Config("free_threshold must not exceed occupied_threshold".into()));
        }
        if self.window_half_extent.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("window extents must be positive".into()));
        }
        Ok(())
    }
}

pub fn prob_to_log_odds(p: f64) -> f32 {
    (p / (1.0 - p)).ln() as f32
}

/// Counters describing rays that were not integrated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationDiagnostics {
    pub rays_integrated: u64,
    pub rays_skipped_nonfinite: u64,
    pub endpoints_outside_window: u64,
}

#[derive(Clone)]
struct Chunk {
    /// NaN marks an unobserved voxel.
    log_odds: [f32; CHUNK_VOLUME],
    last_update: [f64; CHUNK_VOLUME],
    /// Latched classification for voxels inside the hysteresis band.
    latched_occupied: [bool; CHUNK_VOLUME],
    observed: u32,
}

impl Chunk {
    fn new() -> Box<Self> {
        Box::new(Self {
            log_odds: [f32::NAN; CHUNK_VOLUME],
            last_update: [0.0; CHUNK_VOLUME],
            latched_occupied: [false; CHUNK_VOLUME],
            observed: 0,
        })
    }
}

/// Sparse local voxel map.
#[derive(Clone)]
pub struct OccupancyMap {
    config: OccupancyConfig,
    origin: [f64; 3],
    window_center: [f64; 3],
    chunks: FxHashMap<ChunkKey, Box<Chunk>>,
    diagnostics: IntegrationDiagnostics,
}

impl std::fmt::Debug for OccupancyMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OccupancyMap")
            .field("resolution", &self.config.resolution)
            .field("origin", &self.origin)
            .field("window_center", &self.window_center)
            .field("chunks", &self.chunks.len())
            .finish()
    }
}

impl OccupancyMap {
    /// Creates an empty map. The voxel grid has voxel (0,0,0) spanning `[origin, origin + resolution)`.
    pub fn new(config: OccupancyConfig, origin: [f64; 3], window_center: [f64; 3]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            origin,
            window_center,
            chunks: FxHashMap::default(),
            diagnostics: IntegrationDiagnostics::default(),
        })
    }

    pub fn config(&self) -> &OccupancyConfig {
        &self.config
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn window_center(&self) -> [f64; 3] {
        self.window_center
    }

    pub fn window_half_extent(&self) -> [f64; 3] {
        self.config.window_half_extent
    }

    pub fn diagnostics(&self) -> IntegrationDiagnostics {
        self.diagnostics
    }

    pub fn key_of(&self, p: [f64; 3]) -> VoxelKey {
        let r = self.config.resolution;
        VoxelKey::new(
            ((p[0] - self.origin[0]) / r).floor() as i32,
            ((p[1] - self.origin[1]) / r).floor() as i32,
            ((p[2] - self.origin[2]) / r).floor() as i32,
        )
    }

    pub fn center_of(&self, k: VoxelKey) -> [f64; 3] {
        let r = self.config.resolution;
        [
            self.origin[0] + (k.ix as f64 + 0.5) * r,
            self.origin[1] + (k.iy as f64 + 0.5) * r,
            self.origin[2] + (k.iz as f64 + 0.5) * r,
        ]
    }

    /// Whether the voxel centre lies inside the current retention window.
    pub fn in_window(&self, k: VoxelKey) -> bool {
        let c = self.center_of(k);
        let h = self.config.window_half_extent;
        (0..3).all(|i| (c[i] - self.window_center[i]).abs() <= h[i])
    }

    pub fn voxel(&self, k: VoxelKey) -> Option<VoxelData> {
        let (ck, idx) = k.chunk();
        let chunk = self.chunks.get(&ck)?;
        let l = chunk.log_odds[idx];
        if l.is_nan() {
            None
        } else {
            Some(VoxelData {
                log_odds: l,
                last_update: chunk.last_update[idx],
            })
        }
    }

    pub fn classify(&self, k: VoxelKey) -> VoxelState {
        let (ck, idx) = k.chunk();
        match self.chunks.get(&ck) {
            Some(chunk) => self.classify_slot(chunk, idx),
            None => VoxelState::Unobserved,
        }
    }

    fn classify_slot(&self, chunk: &Chunk, idx: usize) -> VoxelState {
        let l = chunk.log_odds[idx];
        if l.is_nan() {
            VoxelState::Unobserved
        } else if l >= self.config.occupied_threshold {
            VoxelState::Occupied
        } else if l <= self.config.free_threshold {
            VoxelState::Free
        } else if chunk.latched_occupied[idx] {
            VoxelState::Occupied
        } else {
            VoxelState::Free
        }
    }

    /// Fills `out` with the states of voxels `iz_lo..=iz_hi` in column `(ix, iy)`, bottom to top.
    pub fn column_states(&self, ix: i32, iy: i32, iz_lo: i32, iz_hi: i32, out: &mut Vec<VoxelState>) {
        out.clear();
        let mut iz = iz_lo;
        while iz <= iz_hi {
            let (ck, _) = VoxelKey::new(ix, iy, iz).chunk();
            let chunk_top = ((ck.cz + 1) << CHUNK_BITS) - 1;
            let stop = chunk_top.min(iz_hi);
            match self.chunks.get(&ck) {
                Some(chunk) => {
                    for z in iz..=stop {
                        let (_, idx) = VoxelKey::new(ix, iy, z).chunk();
                        out.push(self.classify_slot(chunk, idx));
                    }
                }
                None => out.extend(std::iter::repeat_n(VoxelState::Unobserved, (stop - iz + 1) as usize)),
            }
            iz = stop + 1;
        }
    }

    /// Number of stored (observed) voxels.
    pub fn observed_count(&self) -> usize {
        self.chunks.values().map(|c| c.observed as usize).sum()
    }

    /// All stored voxels sorted by key.
    pub fn voxels(&self) -> Vec<(VoxelKey, VoxelData)> {
        let mut keys: Vec<&ChunkKey> = self.chunks.keys().collect();
        keys.sort();
        let mut out = Vec::with_capacity(self.observed_count());
        for ck in keys {
            let chunk = &self.chunks[ck];
            for lz in 0..CHUNK_DIM {
                for ly in 0..CHUNK_DIM {
                    for lx in 0..CHUNK_DIM {
                        let idx = ((lz * CHUNK_DIM + ly) * CHUNK_DIM + lx) as usize;
                        let l = chunk.log_odds[idx];
                        if !l.is_nan() {
                            out.push((
                                VoxelKey::new(
                                    (ck.cx << CHUNK_BITS) + lx,
                                    (ck.cy << CHUNK_BITS) + ly,
                                    (ck.cz << CHUNK_BITS) + lz,
                                ),
                                VoxelData {
                                    log_odds: l,
                                    last_update: chunk.last_update[idx],
                                },
                            ));
                        }
                    }
                }
            }
        }
        out.sort_by_key(|(k, _)| *k);
        out
    }

    fn update(&mut self, k: VoxelKey, delta: f32, time: f64) {
        let (ck, idx) = k.chunk();
        let cfg = &self.config;
        let chunk = self.chunks.entry(ck).or_insert_with(Chunk::new);
        let prev = chunk.log_odds[idx];
        let base = if prev.is_nan() {
            chunk.observed += 1;
            0.0
        } else {
            prev
        };
        let l = (base + delta).clamp(cfg.min_log_odds, cfg.max_log_odds);
        chunk.log_odds[idx] = l;
        chunk.last_update[idx] = time;
        if l >= cfg.occupied_threshold {
            chunk.latched_occupied[idx] = true;
        } else if l <= cfg.free_threshold {
            chunk.latched_occupied[idx] = false;
        }
    }

    /// Integrates rays in order. Non-finite rays are skipped and tallied in the diagnostics.
    pub fn integrate_rays(&mut self, rays: &[LidarRay]) {
        for ray in rays {
            self.integrate_ray(ray);
        }
    }

    pub fn integrate_ray(&mut self, ray: &LidarRay) {
        if !ray.is_finite() {
            self.diagnostics.rays_skipped_nonfinite += 1;
            return;
        }
        self.diagnostics.rays_integrated += 1;
        let end_key = self.key_of(ray.endpoint);
        let miss = self.config.miss_log_odds;
        let r = self.config.resolution;
        let origin = self.origin;
        let to_grid = |p: [f64; 3]| [(p[0] - origin[0]) / r, (p[1] - origin[1]) / r, (p[2] - origin[2]) / r];
        let traversal = GridTraversal::new(to_grid(ray.origin), to_grid(ray.endpoint));
        for k in traversal {
            if k == end_key {
                break;
            }
            if self.in_window(k) {
                self.update(k, miss, ray.time);
            }
        }
        if self.in_window(end_key) {
            self.update(end_key, self.config.hit_log_odds, ray.time);
        } else {
            self.diagnostics.endpoints_outside_window += 1;
        }
    }

    /// Moves the window and discards every voxel that falls outside it.
    pub fn crop_to_window(&mut self, new_center: [f64; 3]) {
        self.window_center = new_center;
        let r = self.config.resolution;
        let h = self.config.window_half_extent;
        let origin = self.origin;
        // Voxel index range whose centres are inside the window, per axis.
        let range = |axis: usize| {
            let lo = ((new_center[axis] - h[axis] - origin[axis]) / r - 0.5).ceil() as i32;
            let hi = ((new_center[axis] + h[axis] - origin[axis]) / r - 0.5).floor() as i32;
            (lo, hi)
        };
        let ranges = [range(0), range(1), range(2)];
        let ranges = [
            self.refine_range(ranges[0], 0),
            self.refine_range(ranges[1], 1),
            self.refine_range(ranges[2], 2),
        ];
        self.chunks.retain(|ck, chunk| {
            let base = [ck.cx << CHUNK_BITS, ck.cy << CHUNK_BITS, ck.cz << CHUNK_BITS];
            let inside = |axis: usize, local: i32| {
                let i = base[axis] + local;
                i >= ranges[axis].0 && i <= ranges[axis].1
            };
            let fully_outside = (0..3).any(|a| base[a] + CHUNK_MASK < ranges[a].0 || base[a] > ranges[a].1);
            if fully_outside {
                return false;
            }
            let fully_inside = (0..3).all(|a| base[a] >= ranges[a].0 && base[a] + CHUNK_MASK <= ranges[a].1);
            if fully_inside {
                return true;
            }
            for lz in 0..CHUNK_DIM {
                for ly in 0..CHUNK_DIM {
                    for lx in 0..CHUNK_DIM {
                        if inside(0, lx) && inside(1, ly) && inside(2, lz) {
                            continue;
                        }
                        let idx = ((lz * CHUNK_DIM + ly) * CHUNK_DIM + lx) as usize;
                        if !chunk.log_odds[idx].is_nan() {
                            chunk.log_odds[idx] = f32::NAN;
                            chunk.latched_occupied[idx] = false;
                            chunk.observed -= 1;
                        }
                    }
                }
            }
            chunk.observed > 0
        });
    }

    /// Adjusts a coarse index range so it matches `in_window` exactly at the boundaries.
    fn refine_range(&self, (mut lo, mut hi): (i32, i32), axis: usize) -> (i32, i32) {
        let r = self.config.resolution;
        let h = self.config.window_half_extent[axis];
        let c = self.window_center[axis];
        let centre = |i: i32| self.origin[axis] + (i as f64 + 0.5) * r;
        while (centre(lo - 1) - c).abs() <= h {
            lo -= 1;
        }
        while (centre(lo) - c).abs() > h && lo <= hi {
            lo += 1;
        }
        while (centre(hi + 1) - c).abs() <= h {
            hi += 1;
        }
        while (centre(hi) - c).abs() > h && hi >= lo {
            hi -= 1;
        }
        (lo, hi)
    }

    /// Serialises the map in the stable text dump format.
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        let c = self.window_center;
        let h = self.config.window_half_extent;
        let voxels = self.voxels();
        let _ = writeln!(s, "{DUMP_HEADER}");
        let _ = writeln!(s, "resolution {}", self.config.resolution);
        let _ = writeln!(s, "origin {} {} {}", self.origin[0], self.origin[1], self.origin[2]);
        let _ = writeln!(s, "window_center {} {} {}", c[0], c[1], c[2]);
        let _ = writeln!(s, "window_half_extent {} {} {}", h[0], h[1], h[2]);
        let _ = writeln!(s, "voxels {}", voxels.len());
        for (k, v) in voxels {
            let _ = writeln!(s, "{} {} {} {}", k.ix, k.iy, k.iz, v.log_odds);
        }
        s
    }
}

/// Parsed form of the text dump.
#[derive(Debug, Clone, PartialEq)]
pub struct MapDump {
    pub resolution: f64,
    pub origin: [f64; 3],
    pub window_center: [f64; 3],
    pub window_half_extent: [f64; 3],
    pub voxels: Vec<(VoxelKey, f32)>,
}

impl MapDump {
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or((0, format!("unexpected end of file, expected {what}")));
        let (n, header) = next("header")?;
        if header != DUMP_HEADER {
            return Err((n, format!("expected header '{DUMP_HEADER}'")));
        }
        fn fields<const N: usize>(n: usize, line: &str, name: &str) -> std::result::Result<[f64; N], (usize, String)> {
            let mut it = line.split_whitespace();
            if it.next() != Some(name) {
                return Err((n, format!("expected '{name}'")));
            }
            let mut out = [0.0; N];
            for o in out.iter_mut() {
                *o = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or((n, format!("bad value in '{name}'")))?;
            }
            Ok(out)
        }
        let (n, l) = next("resolution")?;
        let [resolution] = fields::<1>(n, l, "resolution")?;
        let (n, l) = next("origin")?;
        let origin = fields::<3>(n, l, "origin")?;
        let (n, l) = next("window_center")?;
        let window_center = fields::<3>(n, l, "window_center")?;
        let (n, l) = next("window_half_extent")?;
        let window_half_extent = fields::<3>(n, l, "window_half_extent")?;
        let (n, l) = next("voxels")?;
        let [count] = fields::<1>(n, l, "voxels")?;
        let mut voxels = Vec::with_capacity(count as usize);
        for _ in 0..count as usize {
            let (n, l) = next("voxel record")?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 4 {
                return Err((n, "voxel record needs 'ix iy iz log_odds'".into()));
            }
            let parse_i = |s: &str| s.parse::<i32>().map_err(|e| (n, e.to_string()));
            let key = VoxelKey::new(parse_i(parts[0])?, parse_i(parts[1])?, parse_i(parts[2])?);
            let l = parts[3].parse::<f32>().map_err(|e| (n, e.to_string()))?;
            voxels.push((key, l));
        }
        Ok(Self {
            resolution,
            origin,
            window_center,
            window_half_extent,
            voxels,
        })
    }
}

/// Exact incremental traversal of the unit grid cells crossed by a segment.
///
/// Coordinates are in voxel units (voxel `(i, j, k)` spans `[i, i+1) x [j, j+1) x [k, k+1)`).
/// The iterator yields the start voxel first and stops after the voxel containing the end point.
#[derive(Debug, Clone)]
pub struct GridTraversal {
    current: [i32; 3],
    end: [i32; 3],
    step: [i32; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    done: bool,
    remaining: usize,
}

impl GridTraversal {
    pub fn new(start: [f64; 3], end: [f64; 3]) -> Self {
        let current = [start[0].floor() as i32, start[1].floor() as i32, start[2].floor() as i32];
        let last = [end[0].floor() as i32, end[1].floor() as i32, end[2].floor() as i32];
        let mut step = [0; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let d = end[a] - start[a];
            if d > 0.0 {
                step[a] = 1;
                t_delta[a] = 1.0 / d;
                t_max[a] = (current[a] as f64 + 1.0 - start[a]) / d;
            } else if d < 0.0 {
                step[a] = -1;
                t_delta[a] = -1.0 / d;
                t_max[a] = (current[a] as f64 - start[a]) / d;
            }
        }
        let remaining = (0..3).map(|a| (last[a] - current[a]).unsigned_abs() as usize).sum::<usize>() + 1;
        Self {
            current,
            end: last,
            step,
            t_max,
            t_delta,
            done: false,
            remaining,
        }
    }
}

impl Iterator for GridTraversal {
    type Item = VoxelKey;

    fn next(&mut self) -> Option<VoxelKey> {
        if self.done {
            return None;
        }
        let out = VoxelKey::new(self.current[0], self.current[1], self.current[2]);
        self.remaining -= 1;
        if self.current == self.end || self.remaining == 0 {
            self.done = true;
            return Some(out);
        }
        let mut axis = 0;
        if self.t_max[1] < self.t_max[axis] {
            axis = 1;
        }
        if self.t_max[2] < self.t_max[axis] {
            axis = 2;
        }
        if self.t_max[axis] > 1.0 {
            // Rounding pushed the last crossing past the endpoint; step straight to it.
            for a in 0..3 {
                if self.current[a] != self.end[a] {
                    axis = a;
                    break;
                }
            }
        }
        self.current[axis] += self.step[axis];
        self.t_max[axis] += self.t_delta[axis];
        Some(out)
    }
}
