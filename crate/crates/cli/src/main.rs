use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vsnav::experiment::{cmd_table, format_table, report_csv, ExperimentConfig};
use vsnav::io::{append_rows, load_scenario, rows_to_csv, write_trace_dir, RunRow, TraceDir};
use vsnav::planner::VirtualSurfacePolicy;
use vsnav::render::{render, Overlay};
use vsnav::sim::{run_scenario, TerminalReason};

#[derive(Parser)]
#[command(name = "vsnav", version, about = "Virtual-surface navigation simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write its trace directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        timeout: Option<f64>,
        /// Output root; the run goes to <out>/<scenario>_<policy>_<seed>.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Exit non-zero when the vehicle falls or gets stuck.
        #[arg(long)]
        strict: bool,
        /// Render a PNG for every stored costmap snapshot.
        #[arg(long)]
        images: bool,
        /// Seconds between stored costmap snapshots.
        #[arg(long, default_value_t = 1.0)]
        snapshot_period: f64,
    },
    /// Run the policy x scenario x seed matrix and print the summary table.
    Table {
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Seed of the first sample.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "trench,ramp")]
        scenarios: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "bestcase,nontraversable,traversable")]
        policy: Vec<String>,
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render the costmap, path and vehicle of a recorded run at one instant.
    Snapshot {
        trace: PathBuf,
        #[arg(long)]
        time: f64,
        /// Output image; defaults to <trace>/snapshot_<time>.png.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pixels per costmap cell.
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Print the costmap of a recorded run at one instant in text form.
    DumpMap {
        trace: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<VirtualSurfacePolicy> {
    match VirtualSurfacePolicy::parse(s) {
        Some(p) => Ok(p),
        None => bail!("unknown policy '{s}' (expected bestcase, nontraversable or traversable)"),
    }
}

fn render_frame(dir: &TraceDir, time: f64, scale: usize, out: &Path) -> Result<()> {
    let frame = dir.frame_at(time)?;
    let overlay = Overlay {
        path: &frame.path,
        robot: Some(frame.pose),
        footprint: dir.meta.footprint,
        goal: Some((dir.meta.goal, dir.meta.goal_radius)),
    };
    render(&frame.costmap, &overlay, scale).write_png(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &Path,
    policy: Option<String>,
    seed: Option<u64>,
    timeout: Option<f64>,
    out: &Path,
    strict: bool,
    images: bool,
    snapshot_period: f64,
) -> Result<ExitCode> {
    let mut spec = load_scenario(scenario)?;
    if let Some(p) = policy {
        spec.policy = parse_policy(&p)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(t) = timeout {
        spec.timeout = t;
    }
    spec.config.record_snapshots = true;
    let mut result = run_scenario(&spec)?;
    if snapshot_period > 0.0 {
        result.snapshots.retain(|s| {
            let k = s.time / snapshot_period;
            (k - k.round()).abs() < 1e-6
        });
    }
    let dir = out.join(format!("{}_{}_{}", spec.name, spec.policy.name(), spec.seed));
    write_trace_dir(&dir, &spec, &result)?;
    let row = RunRow::from(&result);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    append_rows(&out.join("runs.csv"), std::slice::from_ref(&row))?;
    if images {
        let trace = TraceDir::open(&dir)?;
        for &t in &trace.snapshot_times {
            render_frame(&trace, t, 4, &dir.join("snapshots").join(format!("t{t:08.2}.png")))?;
        }
    }
    print!("{}", rows_to_csv(&[row]));
    let failed = matches!(result.reason, TerminalReason::Fell | TerminalReason::Stuck);
    Ok(if strict && failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            policy,
            seed,
            timeout,
            out,
            strict,
            images,
            snapshot_period,
        } => cmd_run(&scenario, policy, seed, timeout, &out, strict, images, snapshot_period),
        Command::Table {
            samples,
            seed,
            scenarios,
            policy,
            timeout,
            out,
        } => {
            let cfg = ExperimentConfig {
                scenarios,
                policies: policy.iter().map(|p| parse_policy(p)).collect::<Result<_>>()?,
                samples,
                base_seed: seed,
                timeout,
            };
            let table = cmd_table(&cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let text = format_table(&table.report);
            fs::write(out.join("runs.csv"), rows_to_csv(&table.rows()))?;
            fs::write(out.join("table.csv"), report_csv(&table.report))?;
            fs::write(out.join("table.txt"), &text)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Snapshot { trace, time, out, scale } => {
            let dir = TraceDir::open(&trace)?;
            let out = out.unwrap_or_else(|| trace.join(format!("snapshot_{time:.2}.png")));
            render_frame(&dir, time, scale, &out)?;
            println!("{}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpMap { trace, time, out } => {
            let text = TraceDir::open(&trace)?.frame_at(time)?.costmap.to_text();
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
