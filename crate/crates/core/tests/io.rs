use std::path::Path;

use proptest::prelude::*;
use vsnav::behaviours::BehaviourId;
use vsnav::io::{append_rows, parse_rows, parse_scenario, parse_trace, rows_to_csv, write_trace, write_trace_dir, RunRow, TraceDir};
use vsnav::planner::VirtualSurfacePolicy;
use vsnav::sim::{run_scenario, ScenarioSpec, TerminalReason, TickRecord};
use vsnav::Error;

fn policy() -> impl Strategy<Value = VirtualSurfacePolicy> {
    prop::sample::select(VirtualSurfacePolicy::ALL.to_vec())
}

fn reason() -> impl Strategy<Value = TerminalReason> {
    prop::sample::select(vec![
        TerminalReason::GoalReached,
        TerminalReason::Fell,
        TerminalReason::Stuck,
        TerminalReason::Timeout,
        TerminalReason::Aborted,
    ])
}

fn row() -> impl Strategy<Value = RunRow> {
    ("[a-z_, \"]{1,12}", policy(), any::<u64>(), any::<bool>(), 0.0..1e4f64, reason()).prop_map(
        |(scenario, policy, seed, success, duration, reason)| RunRow {
            scenario,
            policy,
            seed,
            success,
            duration,
            reason,
        },
    )
}

fn tick() -> impl Strategy<Value = TickRecord> {
    (
        0.0..100.0f64,
        prop::sample::select(vec![
            BehaviourId::OrientationCorrection,
            BehaviourId::Decollide,
            BehaviourId::PathFollow,
            BehaviourId::Stop,
        ]),
        prop::array::uniform8(-10.0..10.0f64),
        any::<bool>(),
        0u8..16,
    )
        .prop_map(|(time, behaviour, v, footprint_fatal, admissible)| TickRecord {
            time,
            behaviour,
            linear: v[0],
            angular: v[1],
            x: v[2],
            y: v[3],
            z: v[4],
            yaw: v[5],
            pitch: v[6],
            roll: v[7],
            footprint_fatal,
            admissible,
        })
}

proptest! {
    #[test]
    fn run_rows_survive_csv(rows in prop::collection::vec(row(), 0..20)) {
        let text = rows_to_csv(&rows);
        prop_assert_eq!(parse_rows(&text, Path::new("runs.csv")).unwrap(), rows);
    }

    #[test]
    fn trace_survives_csv(trace in prop::collection::vec(tick(), 0..30)) {
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let back = parse_trace(std::str::from_utf8(&buf).unwrap(), Path::new("trace.csv")).unwrap();
        prop_assert_eq!(back, trace);
    }
}

#[test]
fn appending_writes_one_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("runs.csv");
    let r = RunRow {
        scenario: "ramp".into(),
        policy: VirtualSurfacePolicy::BestCase,
        seed: 1,
        success: true,
        duration: 17.3,
        reason: TerminalReason::GoalReached,
    };
    append_rows(&p, &[r.clone()]).unwrap();
    append_rows(&p, &[r.clone(), r.clone()]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("scenario,")).count(), 1);
    assert_eq!(parse_rows(&text, &p).unwrap(), vec![r.clone(), r.clone(), r]);
}

#[test]
fn bad_row_names_its_line() {
    let text = "scenario,policy,seed,success,duration,reason\nramp,bestcase,0,true,1.0,goal_reached\nramp,bestcase,x,true,1.0,timeout\n";
    match parse_rows(text, Path::new("runs.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn scenario_file_overrides_builtin_defaults() {
    let text = "world = \"ramp\"\npolicy = \"traversable\"\nseed = 4\ntimeout = 12.5\n\n[config]\ncontrol_dt = 0.1\n";
    let s = parse_scenario(text, Path::new("x.scn")).unwrap();
    assert_eq!(s.policy, VirtualSurfacePolicy::Traversable);
    assert_eq!((s.seed, s.timeout), (4, 12.5));
    assert_eq!(s.name, "ramp");
    let err = parse_scenario("world = \"ramp\"\nspeed = 3\n", Path::new("x.scn")).unwrap_err();
    assert!(err.to_string().contains("x.scn:2"), "{err}");
}

#[test]
fn trace_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ScenarioSpec::builtin("ramp", VirtualSurfacePolicy::BestCase, 0).unwrap();
    spec.timeout = 3.0;
    spec.config.record_snapshots = true;
    let result = run_scenario(&spec).unwrap();
    let out = dir.path().join("run");
    write_trace_dir(&out, &spec, &result).unwrap();

    let td = TraceDir::open(&out).unwrap();
    assert_eq!(td.trace, result.trace);
    assert_eq!(td.meta.reason, result.reason);
    assert_eq!(td.meta.duration, result.duration);
    assert_eq!(td.snapshot_times.len(), result.snapshots.len());
    let (t0, t1) = td.span();
    assert_eq!(t0, 0.0);
    assert!(t1 <= spec.timeout + 1e-9);

    let f = td.frame_at(1.2).unwrap();
    let snap = result.snapshots.iter().rev().find(|s| s.time <= 1.2 + 1e-9).unwrap();
    assert_eq!(f.costmap.to_text(), snap.costmap.to_text());
    let tick = result.trace.iter().rev().find(|t| t.time <= 1.2 + 1e-9).unwrap();
    assert!((f.pose.x - tick.x).abs() < 1e-12 && (f.pose.y - tick.y).abs() < 1e-12);
    assert!(td.frame_at(t1 + 5.0).is_err());
}
