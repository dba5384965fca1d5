//! Scenario files, result CSVs and on-disk run traces.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costmap::Costmap;
use crate::error::{Error, Result};
use crate::geom::Configuration;
use crate::planner::{parse_path_text, VirtualSurfacePolicy};
use crate::sim::{
    builtin_world, BoxObstacle, Heightfield, RunResult, ScenarioSpec, SimConfig, SuccessRule, TerminalReason,
    TickRecord, WorldModel,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    world: Option<String>,
    heightfield: Option<HeightfieldFile>,
    #[serde(default)]
    boxes: Vec<BoxFile>,
    start: Option<[f64; 3]>,
    goal: Option<[f64; 2]>,
    policy: Option<String>,
    seed: Option<u64>,
    timeout: Option<f64>,
    success: Option<SuccessRule>,
    config: Option<SimConfig>,
}

/// Inline terrain: `rows[j][i]` is the height of column `i` in row `j`, rows ordered by increasing y.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeightfieldFile {
    origin: [f64; 2],
    spacing: f64,
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxFile {
    min: [f64; 3],
    max: [f64; 3],
}

/// 1-based line of the first `key = ...` or `[key]` in `text`, or 1 when absent.
fn line_of_key(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
                || t.starts_with(&format!("[{key}]"))
                || t.starts_with(&format!("[[{key}]]"))
        })
        .map_or(1, |i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a scenario file.
///
/// ```toml
/// name = "trench"
/// world = "trench"           # built-in id; or give [heightfield] instead
/// policy = "bestcase"
/// seed = 1
/// timeout = 60.0
/// start = [0.0, 0.0, 0.0]    # x, y, yaw (optional with a built-in world)
/// goal = [8.5, 0.0]
/// success = "reach_goal"     # or "survive_until_timeout"
///
/// [config.sensor]            # any closed-loop setting may be overridden
/// range_sigma = 0.01
/// ```
pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioSpec> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of_offset(text, s.start));
        err(line, e.message().to_string())
    })?;

    let (mut world, start, goal, success) = match (&file.world, file.heightfield) {
        (Some(_), Some(_)) => return Err(err(line_of_key(text, "heightfield"), "give either 'world' or [heightfield], not both".into())),
        (None, None) => return Err(err(1, "missing 'world' or [heightfield]".into())),
        (Some(id), None) => {
            let b = builtin_world(id)
                .ok_or_else(|| err(line_of_key(text, "world"), format!("unknown world '{id}'")))?
                .map_err(|e| err(line_of_key(text, "world"), e.to_string()))?;
            (b.world, Some(b.start), Some(b.goal), b.success)
        }
        (None, Some(hf)) => {
            let line = line_of_key(text, "heightfield");
            let rows = hf.rows.len();
            let cols = hf.rows.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 || hf.rows.iter().any(|r| r.len() != cols) {
                return Err(err(line, "heightfield rows must be non-empty and of equal length".into()));
            }
            let heights = hf.rows.into_iter().flatten().collect();
            let field = Heightfield::new(hf.origin, hf.spacing, cols, rows, heights).map_err(|e| err(line, e.to_string()))?;
            let world = WorldModel::new("inline", field, vec![]).map_err(|e| err(line, e.to_string()))?;
            (world, None, None, SuccessRule::ReachGoal)
        }
    };
    if !file.boxes.is_empty() {
        let mut boxes = world.boxes.clone();
        boxes.extend(file.boxes.iter().map(|b| BoxObstacle::new(b.min, b.max)));
        world = WorldModel::new(world.name.clone(), world.heightfield.clone(), boxes)
            .map_err(|e| err(line_of_key(text, "boxes"), e.to_string()))?;
    }
    let start = file
        .start
        .map(|s| Configuration::new(s[0], s[1], s[2]))
        .or(start)
        .ok_or_else(|| err(1, "missing 'start'".into()))?;
    let goal = file.goal.or(goal).ok_or_else(|| err(1, "missing 'goal'".into()))?;
    let policy = match &file.policy {
        Some(p) => VirtualSurfacePolicy::parse(p)
            .ok_or_else(|| err(line_of_key(text, "policy"), format!("unknown policy '{p}'")))?,
        None => VirtualSurfacePolicy::BestCase,
    };
    let name = file
        .name
        .or(file.world)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scenario".into());
    let spec = ScenarioSpec {
        name,
        world,
        start,
        goal,
        policy,
        seed: file.seed.unwrap_or(0),
        timeout: file.timeout.unwrap_or(60.0),
        success: file.success.unwrap_or(success),
        config: file.config.unwrap_or_default(),
    };
    spec.validate().map_err(|e| {
        let line = match &e {
            Error::Config(m) if m.contains("timeout") => line_of_key(text, "timeout"),
            Error::Config(m) if m.contains("start") => line_of_key(text, "start"),
            Error::Config(m) if m.contains("goal") => line_of_key(text, "goal"),
            _ => line_of_key(text, "config"),
        };
        err(line, e.to_string())
    })?;
    Ok(spec)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: String,
    pub policy: VirtualSurfacePolicy,
    pub seed: u64,
    pub success: bool,
    pub duration: f64,
    pub reason: TerminalReason,
}

impl From<&RunResult> for RunRow {
    fn from(r: &RunResult) -> Self {
        Self {
            scenario: r.scenario.clone(),
            policy: r.policy,
            seed: r.seed,
            success: r.success,
            duration: r.duration,
            reason: r.reason,
        }
    }
}

/// Writes rows with a header line.
pub fn write_rows<W: Write>(out: W, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn rows_to_csv(rows: &[RunRow]) -> String {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Appends rows to `path`, writing the header only when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[RunRow]) -> Result<()> {
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(1, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Parses a results CSV with header.
pub fn parse_rows(text: &str, path: &Path) -> Result<Vec<RunRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_trace<W: Write>(out: W, trace: &[TickRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in trace {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<TickRecord>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Run description stored alongside a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub policy: VirtualSurfacePolicy,
    pub seed: u64,
    pub timeout: f64,
    pub control_dt: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Vehicle length and width.
    pub footprint: [f64; 2],
    pub success: bool,
    pub duration: f64,
    pub reason: TerminalReason,
}

const META_FILE: &str = "run.toml";
const TRACE_FILE: &str = "trace.csv";
const RESULT_FILE: &str = "result.csv";
const SNAPSHOT_DIR: &str = "snapshots";

fn snapshot_stem(time: f64) -> String {
    format!("t{:08.2}", time)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes a run directory: metadata, tick trace, result row, and any recorded snapshots.
pub fn write_trace_dir(dir: &Path, spec: &ScenarioSpec, result: &RunResult) -> Result<()> {
    let snaps = dir.join(SNAPSHOT_DIR);
    fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
    let meta = TraceMeta {
        scenario: result.scenario.clone(),
        policy: result.policy,
        seed: result.seed,
        timeout: spec.timeout,
        control_dt: spec.config.control_dt,
        goal: spec.goal,
        goal_radius: spec.config.goal_radius,
        footprint: [spec.config.vehicle_params.length, spec.config.vehicle_params.width],
        success: result.success,
        duration: result.duration,
        reason: result.reason,
    };
    let meta_text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join(META_FILE), &meta_text)?;
    let mut trace = Vec::new();
    write_trace(&mut trace, &result.trace)?;
    write_file(&dir.join(TRACE_FILE), &String::from_utf8(trace).expect("csv is utf-8"))?;
    write_file(&dir.join(RESULT_FILE), &rows_to_csv(&[RunRow::from(result)]))?;
    for s in &result.snapshots {
        let stem = snapshot_stem(s.time);
        write_file(&snaps.join(format!("{stem}.costmap")), &s.costmap.to_text())?;
        if let Some(p) = &s.plan {
            write_file(&snaps.join(format!("{stem}.path")), &p.path_to_text())?;
        }
    }
    Ok(())
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct TraceDir {
    pub dir: PathBuf,
    pub meta: TraceMeta,
    pub trace: Vec<TickRecord>,
    /// Snapshot times, ascending.
    pub snapshot_times: Vec<f64>,
}

/// Costmap, path and pose at one instant of a recorded run.
#[derive(Debug, Clone)]
pub struct TraceFrame {
    pub time: f64,
    pub costmap: Costmap,
    pub path: Vec<Configuration>,
    pub pose: Configuration,
}

impl TraceDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: TraceMeta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.span().map_or(1, |s| line_of_offset(&meta_text, s.start)),
            message: e.message().to_string(),
        })?;
        let trace_path = dir.join(TRACE_FILE);
        let trace_text = fs::read_to_string(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        let trace = parse_trace(&trace_text, &trace_path)?;
        let snaps = dir.join(SNAPSHOT_DIR);
        let mut snapshot_times = Vec::new();
        if let Ok(entries) = fs::read_dir(&snaps) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if let Some(t) = name.strip_suffix(".costmap").and_then(|s| s.strip_prefix('t')) {
                    if let Ok(t) = t.parse::<f64>() {
                        snapshot_times.push(t);
                    }
                }
            }
        }
        snapshot_times.sort_by(f64::total_cmp);
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            trace,
            snapshot_times,
        })
    }

    /// Covered time span: first tick to the end of the last one.
    pub fn span(&self) -> (f64, f64) {
        match (self.trace.first(), self.trace.last()) {
            (Some(a), Some(b)) => (a.time, b.time + self.meta.control_dt),
            _ => (0.0, 0.0),
        }
    }

    /// Latest snapshot at or before `time`, with the pose of the tick at `time`.
    pub fn frame_at(&self, time: f64) -> Result<TraceFrame> {
        let (start, end) = self.span();
        if self.trace.is_empty() || !(time >= start - 1e-9 && time <= end + 1e-9) {
            return Err(Error::TimeOutsideTrace { time, start, end });
        }
        let snap = self
            .snapshot_times
            .iter()
            .rev()
            .find(|&&t| t <= time + 1e-9)
            .copied()
            .ok_or_else(|| Error::Config(format!("no costmap snapshot recorded at or before {time:.2}s")))?;
        let stem = snapshot_stem(snap);
        let cm_path = self.dir.join(SNAPSHOT_DIR).join(format!("{stem}.costmap"));
        let cm_text = fs::read_to_string(&cm_path).map_err(|e| Error::io(&cm_path, e))?;
        let costmap = Costmap::from_text(&cm_text).map_err(|(line, message)| Error::Parse {
            path: cm_path.clone(),
            line,
            message,
        })?;
        let path_file = self.dir.join(SNAPSHOT_DIR).join(format!("{stem}.path"));
        let path = fs::read_to_string(&path_file)
            .map(|t| parse_path_text(&t).into_iter().map(|p| p.0).collect())
            .unwrap_or_default();
        let tick = self
            .trace
            .iter()
            .rev()
            .find(|t| t.time <= time + 1e-9)
            .unwrap_or(&self.trace[0]);
        Ok(TraceFrame {
            time: snap,
            costmap,
            path,
            pose: Configuration::new(tick.x, tick.y, tick.yaw),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenario_parses() {
        let text = "world = \"ramp\"\npolicy = \"traversable\"\nseed = 4\ntimeout = 30.0\n";
        let s = parse_scenario(text, Path::new("ramp.scn")).unwrap();
        assert_eq!(s.policy, VirtualSurfacePolicy::Traversable);
        assert_eq!(s.seed, 4);
        assert_eq!(s.goal, [-7.0, 0.0]);
        assert_eq!(s.name, "ramp");
    }

    #[test]
    fn config_overrides_are_partial() {
        let text = "world = \"flat\"\n[config.sensor]\nrange_sigma = 0.0\n";
        let s = parse_scenario(text, Path::new("x")).unwrap();
        assert_eq!(s.config.sensor.range_sigma, 0.0);
        assert_eq!(s.config.sensor.channels, 16);
    }

    #[test]
    fn inline_heightfield() {
        let text = "start = [0.2, 0.2, 0.0]\ngoal = [0.3, 0.3]\n[heightfield]\norigin = [0.0, 0.0]\nspacing = 0.5\nrows = [[0, 0], [0, 1]]\n";
        let s = parse_scenario(text, Path::new("x")).unwrap();
        assert_eq!(s.world.ground_height(0.7, 0.7), Some(1.0));
        assert_eq!(s.success, SuccessRule::ReachGoal);
    }

    #[test]
    fn errors_carry_lines() {
        let bad_policy = "world = \"trench\"\n\npolicy = \"reckless\"\n";
        match parse_scenario(bad_policy, Path::new("a.scn")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let syntax = "world = \"trench\"\nseed = \n";
        match parse_scenario(syntax, Path::new("a.scn")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let timeout = "world = \"trench\"\ntimeout = -1.0\n";
        match parse_scenario(timeout, Path::new("a.scn")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let unknown = "world = \"trench\"\nspeed = 3\n";
        assert!(matches!(parse_scenario(unknown, Path::new("a.scn")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![
            RunRow {
                scenario: "trench".into(),
                policy: VirtualSurfacePolicy::BestCase,
                seed: 3,
                success: true,
                duration: 60.0,
                reason: TerminalReason::Timeout,
            },
            RunRow {
                scenario: "ramp".into(),
                policy: VirtualSurfacePolicy::NonTraversable,
                seed: 0,
                success: false,
                duration: 17.300000000000001,
                reason: TerminalReason::Fell,
            },
        ];
        let text = rows_to_csv(&rows);
        assert!(text.starts_with("scenario,policy,seed,success,duration,reason\n"));
        assert!(text.contains("ramp,nontraversable,0,false,"));
        assert_eq!(parse_rows(&text, Path::new("r.csv")).unwrap(), rows);
    }

    #[test]
    fn bad_row_reports_line() {
        let text = "scenario,policy,seed,success,duration,reason\ntrench,bestcase,0,true,60,timeout\ntrench,bogus,1,true,60,timeout\n";
        match parse_rows(text, Path::new("r.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn append_writes_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.csv");
        let row = RunRow {
            scenario: "flat".into(),
            policy: VirtualSurfacePolicy::Traversable,
            seed: 1,
            success: true,
            duration: 9.5,
            reason: TerminalReason::GoalReached,
        };
        append_rows(&p, &[row.clone()]).unwrap();
        append_rows(&p, &[row.clone()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(parse_rows(&text, &p).unwrap(), vec![row.clone(), row]);
    }
}
