//! End-to-end acceptance checks. Prints one verdict line per criterion and exits
//! non-zero if any of them fails.

mod common;

use std::time::Instant;

use common::{column_scan_agreement, geometry, real_costmap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vsnav::behaviours::VelocityCommand;
use vsnav::experiment::{cmd_table, report_csv, ExperimentConfig, TableOutput};
use vsnav::geom::Configuration;
use vsnav::heightmap::{extract_heightmap, CellClass, ColumnScanParams};
use vsnav::io::rows_to_csv;
use vsnav::occupancy::OccupancyMap;
use vsnav::planner::{estimate_terrain_pose, PlanResult, PlanStatus, VehicleParams, VirtualSurfacePolicy};
use vsnav::sim::{place, raycast_scan, run_scenario, step, window_region, worlds, Heightfield, SimConfig, VehicleState, WorldModel};

use VirtualSurfacePolicy::{BestCase, NonTraversable, Traversable};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cell<'a>(t: &'a TableOutput, policy: VirtualSurfacePolicy, scenario: &str) -> &'a vsnav::experiment::ReportRow {
    t.report
        .iter()
        .find(|r| r.method == policy && r.scenario == scenario)
        .expect("every policy and scenario is in the table")
}

fn success_pattern(t: &TableOutput) -> Verdict {
    let want = [
        (BestCase, "trench", 1.0),
        (BestCase, "ramp", 1.0),
        (NonTraversable, "trench", 1.0),
        (NonTraversable, "ramp", 0.0),
        (Traversable, "trench", 0.0),
        (Traversable, "ramp", 1.0),
    ];
    let mut got = Vec::new();
    let mut pass = true;
    for (p, s, rate) in want {
        let r = cell(t, p, s);
        pass &= r.samples == 10 && r.success_rate == rate;
        got.push(format!("{p}/{s} {:.0}%", 100.0 * r.success_rate));
    }
    verdict(pass, got.join(", "))
}

fn duration_structure(t: &TableOutput, timeout: f64) -> Verdict {
    // (a) every all-timeout cell reports the timeout with no spread.
    let timed_out: Vec<_> = t
        .report
        .iter()
        .filter(|r| {
            t.outcomes
                .iter()
                .filter(|o| o.row.policy == r.method && o.row.scenario == r.scenario)
                .all(|o| o.row.reason == vsnav::sim::TerminalReason::Timeout)
        })
        .collect();
    let a = timed_out.iter().all(|r| r.duration_mean == timeout && r.duration_std == 0.0);
    let trench = cell(t, Traversable, "trench").duration_mean;
    let b = trench < 0.25 * timeout;
    let (best, trav) = (cell(t, BestCase, "ramp").duration_mean, cell(t, Traversable, "ramp").duration_mean);
    let rel = (best - trav).abs() / best.min(trav);
    let c = rel < 0.3;
    verdict(
        a && b && c,
        format!(
            "(a) {} timed-out cells exact: {a}; (b) traversable/trench {trench:.1} s of {timeout} s; (c) ramp {best:.1} vs {trav:.1} s, {:.0}% apart",
            timed_out.len(),
            100.0 * rel
        ),
    )
}

fn virtual_upper_bound(t: &TableOutput) -> Verdict {
    let checked: usize = t.outcomes.iter().map(|o| o.stats.virtual_cells_checked).sum();
    let bad: usize = t.outcomes.iter().map(|o| o.stats.virtual_bound_violations).sum();
    verdict(
        bad == 0 && checked > 0,
        format!(
            "{bad} of {checked} virtual cells more than one voxel below the true surface ({:.4}%)",
            100.0 * bad as f64 / checked.max(1) as f64
        ),
    )
}

const CREST: f64 = -1.0;

/// Drives straight at the ramp crest over a long plateau and records the steepest
/// virtual down-slope beyond it, measured from the crest, at every map update. Stops
/// at the first real observation of the ramp face.
fn approach(seed: u64) -> (Vec<(f64, f64)>, bool) {
    let cfg = SimConfig::default();
    let world = WorldModel::new(
        "long_plateau",
        Heightfield::from_fn([-10.0, -6.0], 0.05, 500, 240, |x, _| worlds::ramp_height(x)).unwrap(),
        vec![],
    )
    .unwrap();
    let vm = &cfg.vehicle;
    let mut state = place(&world, vm, &Configuration::new(8.0, 0.0, std::f64::consts::PI));
    let body = vm.body_box();
    let scan = ColumnScanParams::for_vehicle(cfg.vehicle_params.clearance_height, cfg.occupancy.resolution);
    let center = |s: &VehicleState| [s.pose.x, s.pose.y, s.pose.z];
    let mut map = OccupancyMap::new(cfg.occupancy.clone(), cfg.map_origin, center(&state)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = cfg.control_dt;
    let every = (cfg.map_period / dt).round() as usize;
    let mut slopes = Vec::new();
    let mut pending = Vec::new();
    for k in 0..400 {
        let t = k as f64 * dt;
        pending.extend(raycast_scan(&world, &state.pose, &body, t, t + dt, &cfg.sensor, &mut rng));
        if k % every == 0 {
            map.crop_to_window(center(&state));
            map.integrate_rays(&pending);
            pending.clear();
            let hm = extract_heightmap(&map, window_region(&map), state.pose.z, &scan).unwrap();
            let g = hm.geometry;
            let mut steepest: Option<(f64, f64)> = None;
            for row in 0..g.rows {
                for col in 0..g.cols {
                    let (x, y) = g.cell_center(col, row);
                    // Half a metre past the crest keeps one voxel of height error small in slope.
                    if y.abs() > 0.5 || x > CREST - 0.5 {
                        continue;
                    }
                    let c = hm.get(col, row);
                    match c.class {
                        CellClass::Real if c.height < -0.1 && (c.height - worlds::ramp_height(x)).abs() < 0.15 => {
                            return (slopes, true);
                        }
                        CellClass::Virtual => {
                            let d = CREST - x;
                            let s = -c.height / d;
                            if steepest.is_none_or(|(b, _)| s > b) {
                                steepest = Some((s, d));
                            }
                        }
                        _ => {}
                    }
                }
            }
            if let Some(s) = steepest {
                slopes.push(s);
            }
        }
        state = step(&world, vm, &state, dt, VelocityCommand::new(0.3, 0.0));
    }
    (slopes, false)
}

fn approach_steepening() -> Verdict {
    let res = SimConfig::default().occupancy.resolution;
    let mut pass = true;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let (slopes, saw_face) = approach(seed);
        // A drop of more than one voxel over the distance of the previous steepest cell.
        let violations = slopes.windows(2).filter(|w| w[1].0 < w[0].0 - res / w[0].1 - 1e-9).count();
        let decreases = slopes.windows(2).filter(|w| w[1].0 < w[0].0 - 1e-9).count();
        let rising = slopes.len() >= 3 && slopes.last().unwrap().0 > slopes[0].0;
        pass &= saw_face && rising && violations <= 1;
        notes.push(format!(
            "seed {seed}: {} updates, slope {:.2} -> {:.2}, {decreases} decreases, {violations} beyond a voxel",
            slopes.len(),
            slopes.first().map_or(f64::NAN, |s| s.0),
            slopes.last().map_or(f64::NAN, |s| s.0),
        ));
    }
    verdict(pass, notes.join("; "))
}

fn column_oracle() -> Verdict {
    let (checked, mismatch) = column_scan_agreement(2024, 100_000);
    match mismatch {
        None => verdict(true, format!("{checked} random columns agree")),
        Some(m) => verdict(false, m),
    }
}

fn edge_rule() -> Verdict {
    let mut pairs = 0;
    let mut wrong = 0;
    for rise in [0.2, 0.35, 0.5, 1.0] {
        for deg in [0.0f64, 25.0, 60.0, 90.0, 137.0] {
            let (s, c) = deg.to_radians().sin_cos();
            let cm = real_costmap(geometry(40, 40, 0.1, [-2.0, -2.0]), |x, y| if c * x + s * y > 0.03 { rise } else { 0.0 });
            let g = cm.geometry;
            for r in 0..g.rows {
                for col in 0..g.cols {
                    for (nc, nr) in [(col + 1, r), (col, r + 1)] {
                        if nc >= g.cols || nr >= g.rows {
                            continue;
                        }
                        let (a, b) = (cm.get(col, r), cm.get(nc, nr));
                        if a.is_fatal() == b.is_fatal() || a.height == b.height {
                            continue;
                        }
                        pairs += 1;
                        let (fatal, other) = if a.is_fatal() { (a, b) } else { (b, a) };
                        if fatal.height < other.height {
                            wrong += 1;
                        }
                    }
                }
            }
        }
    }
    // Characterization: a one-cell trench 1 m deep is bridged by the dip fill and
    // left traversable away from the map border.
    let g = geometry(30, 30, 0.1, [0.0, 0.0]);
    let trench = real_costmap(g, |x, _| if (1.4..1.5).contains(&x) { -1.0 } else { 0.0 });
    let interior_fatal = (10..20).flat_map(|r| (0..g.cols).map(move |c| (c, r))).filter(|&(c, r)| trench.get(c, r).is_fatal()).count();
    verdict(
        pairs > 0 && wrong == 0 && interior_fatal == 0,
        format!("{pairs} fatal/non-fatal pairs across a height change, {wrong} with the fatal cell lower; thin trench left with {interior_fatal} fatal cells"),
    )
}

fn crosses_trench(p: &PlanResult) -> bool {
    p.path.iter().any(|q| (3.0..6.0).contains(&q.config.x))
}

fn planner_safety(t: &TableOutput) -> Verdict {
    let checked: usize = t.outcomes.iter().map(|o| o.stats.path_configs_checked).sum();
    let bad: usize = t.outcomes.iter().map(|o| o.stats.unsafe_path_configs).sum();
    let mut notes = vec![format!("{bad} of {checked} path configurations unsafe")];
    let mut pass = bad == 0 && checked > 0;

    let cfg = ExperimentConfig::default();
    let half = SimConfig::default().vehicle.length / 2.0;
    let mut crossing_runs = 0;
    for seed in 0..cfg.samples as u64 {
        let spec = cfg.spec("trench", BestCase, cfg.base_seed + seed).unwrap();
        let r = run_scenario(&spec).unwrap();
        let Some(first) = r.plans.iter().position(|p| crosses_trench(&p.result)) else {
            continue;
        };
        crossing_runs += 1;
        let touch = r.trace.iter().find(|k| k.footprint_fatal).map_or(f64::INFINITY, |k| k.time);
        let replaced = r.plans[first + 1..]
            .iter()
            .find(|p| p.result.status == PlanStatus::Partial || !crosses_trench(&p.result));
        let ok = replaced.is_some_and(|p| {
            let front = r.trace.iter().rev().find(|k| k.time <= p.time + 1e-9).map_or(0.0, |k| k.x + half);
            p.time < touch && front < 3.0
        });
        if !ok {
            pass = false;
            notes.push(format!("seed {seed}: crossing plan at {:.1} s never replaced in time", r.plans[first].time));
        }
    }
    notes.push(format!("{crossing_runs} trench runs started with a crossing plan, all replaced before the edge: {pass}"));
    verdict(pass, notes.join("; "))
}

fn terrain_pose() -> Verdict {
    let vp = VehicleParams::default();
    let g = geometry(40, 40, 0.1, [-2.0, -2.0]);
    let mut worst: f64 = 0.0;
    for slope in (0..=45).step_by(5) {
        let grad = (slope as f64).to_radians().tan();
        for psi in (0..360).step_by(40) {
            let psi = (psi as f64).to_radians();
            let cm = real_costmap(g, |x, y| grad * (x * psi.cos() + y * psi.sin()));
            for phi in (0..360).step_by(45) {
                let phi = (phi as f64).to_radians();
                let pose = estimate_terrain_pose(&cm, &Configuration::new(0.0, 0.0, phi), &vp);
                let pitch = (grad * (phi - psi).cos()).atan();
                let roll = (grad * (psi - phi).sin()).atan();
                worst = worst.max((pose.pitch - pitch).abs()).max((pose.roll - roll).abs());
            }
        }
    }
    verdict(worst < 1f64.to_radians(), format!("worst pitch/roll error {:.3} deg up to 45 deg", worst.to_degrees()))
}

fn csvs(t: &TableOutput) -> (String, String) {
    (rows_to_csv(&t.rows()), report_csv(&t.report))
}

fn main() {
    let clock = Instant::now();
    let cfg = ExperimentConfig::default();
    let timeout = cfg.spec("trench", BestCase, 0).unwrap().timeout;
    let table = cmd_table(&cfg).expect("matrix runs");
    let again = cmd_table(&cfg).expect("matrix runs");
    let (runs_a, table_a) = csvs(&table);
    let (runs_b, table_b) = csvs(&again);

    let verdicts = [
        ("table success pattern", success_pattern(&table)),
        ("table duration structure", duration_structure(&table, timeout)),
        ("virtual surface upper bound", virtual_upper_bound(&table)),
        ("approach steepening", approach_steepening()),
        ("column scan oracle", column_oracle()),
        ("costmap edge rule", edge_rule()),
        ("planner safety", planner_safety(&table)),
        ("terrain pose accuracy", terrain_pose()),
        (
            "determinism",
            verdict(
                runs_a == runs_b && table_a == table_b,
                format!("runs.csv {} bytes, table.csv {} bytes, identical: {}", runs_a.len(), table_a.len(), runs_a == runs_b && table_a == table_b),
            ),
        ),
    ];
    let mut failed = 0;
    for (i, (name, v)) in verdicts.iter().enumerate() {
        println!("criterion {} {name}: {} ({})", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed in {:.0} s", verdicts.len() - failed, verdicts.len(), clock.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
