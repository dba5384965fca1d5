//! Policy × scenario × seed matrices and their summary table.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::RunRow;
use crate::planner::VirtualSurfacePolicy;
use crate::sim::{run_scenario, RunStats, ScenarioSpec, TerminalReason};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Built-in scenario names, in report order.
    pub scenarios: Vec<String>,
    pub policies: Vec<VirtualSurfacePolicy>,
    pub samples: usize,
    /// Sample `i` runs with seed `base_seed + i`.
    pub base_seed: u64,
    pub timeout: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["trench".into(), "ramp".into()],
            policies: VirtualSurfacePolicy::ALL.to_vec(),
            samples: 10,
            base_seed: 0,
            timeout: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.scenarios.is_empty() || self.policies.is_empty() {
            return Err(Error::Config("need at least one scenario and one policy".into()));
        }
        // Build every spec once so bad names fail before anything runs.
        for s in &self.scenarios {
            self.spec(s, self.policies[0], self.base_seed)?.validate()?;
        }
        Ok(())
    }

    /// Scenario for one cell of the matrix.
    pub fn spec(&self, scenario: &str, policy: VirtualSurfacePolicy, seed: u64) -> Result<ScenarioSpec> {
        let mut spec = ScenarioSpec::builtin(scenario, policy, seed)?;
        if let Some(t) = self.timeout {
            spec.timeout = t;
        }
        Ok(spec)
    }
}

/// One finished cell of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub row: RunRow,
    pub stats: RunStats,
    /// Ticks whose footprint overlapped a fatal cell.
    pub footprint_fatal_ticks: usize,
}

/// Runs one matrix cell, turning a panic or error into a failed row.
pub fn run_cell(spec: &ScenarioSpec) -> CellOutcome {
    let aborted = || CellOutcome {
        row: RunRow {
            scenario: spec.name.clone(),
            policy: spec.policy,
            seed: spec.seed,
            success: false,
            duration: spec.timeout,
            reason: TerminalReason::Aborted,
        },
        stats: RunStats::default(),
        footprint_fatal_ticks: 0,
    };
    match catch_unwind(AssertUnwindSafe(|| run_scenario(spec))) {
        Ok(Ok(r)) => CellOutcome {
            row: RunRow::from(&r),
            stats: r.stats,
            footprint_fatal_ticks: r.trace.iter().filter(|t| t.footprint_fatal).count(),
        },
        _ => aborted(),
    }
}

/// Runs the full matrix. Results come back ordered by policy, scenario, then seed,
/// whatever order the cells finished in.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<CellOutcome>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    for &p in &cfg.policies {
        for s in &cfg.scenarios {
            for i in 0..cfg.samples as u64 {
                specs.push(cfg.spec(s, p, cfg.base_seed + i)?);
            }
        }
    }
    Ok(specs.par_iter().map(run_cell).collect())
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: VirtualSurfacePolicy,
    pub scenario: String,
    pub success_rate: f64,
    pub duration_mean: f64,
    /// Sample standard deviation; zero for a single sample.
    pub duration_std: f64,
    pub samples: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregates rows per (policy, scenario) in the order given by `cfg`.
pub fn report(cfg: &ExperimentConfig, rows: &[RunRow]) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for &p in &cfg.policies {
        for s in &cfg.scenarios {
            let cell: Vec<&RunRow> = rows.iter().filter(|r| r.policy == p && &r.scenario == s).collect();
            if cell.is_empty() {
                continue;
            }
            let durations: Vec<f64> = cell.iter().map(|r| r.duration).collect();
            let (duration_mean, duration_std) = mean_std(&durations);
            out.push(ReportRow {
                method: p,
                scenario: s.clone(),
                success_rate: cell.iter().filter(|r| r.success).count() as f64 / cell.len() as f64,
                duration_mean,
                duration_std,
                samples: cell.len(),
            });
        }
    }
    out
}

/// Fixed-width text table.
pub fn format_table(report: &[ReportRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:<18} {:>8} {:>10} {:>8} {:>4}", "method", "scenario", "success", "mean (s)", "std", "n");
    for r in report {
        let _ = writeln!(
            s,
            "{:<16} {:<18} {:>7.0}% {:>10.1} {:>8.1} {:>4}",
            r.method.label(),
            r.scenario,
            100.0 * r.success_rate,
            r.duration_mean,
            r.duration_std,
            r.samples
        );
    }
    s
}

pub fn report_csv(report: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in report {
        w.serialize(r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

/// The Table-shaped summary plus the per-run rows behind it.
#[derive(Debug, Clone)]
pub struct TableOutput {
    pub outcomes: Vec<CellOutcome>,
    pub report: Vec<ReportRow>,
}

impl TableOutput {
    pub fn rows(&self) -> Vec<RunRow> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }
}

pub fn cmd_table(cfg: &ExperimentConfig) -> Result<TableOutput> {
    let outcomes = run_matrix(cfg)?;
    let rows: Vec<RunRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    let report = report(cfg, &rows);
    Ok(TableOutput { outcomes, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: VirtualSurfacePolicy, scenario: &str, success: bool, duration: f64) -> RunRow {
        RunRow {
            scenario: scenario.into(),
            policy,
            seed: 0,
            success,
            duration,
            reason: if success { TerminalReason::Timeout } else { TerminalReason::Fell },
        }
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((m - 5.0).abs() < 1e-12);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn report_has_one_row_per_cell() {
        let cfg = ExperimentConfig::default();
        let mut rows = Vec::new();
        for p in VirtualSurfacePolicy::ALL {
            for s in ["trench", "ramp"] {
                for _ in 0..10 {
                    rows.push(row(p, s, p != VirtualSurfacePolicy::Traversable, 60.0));
                }
            }
        }
        let rep = report(&cfg, &rows);
        assert_eq!(rep.len(), 6);
        assert_eq!(rep[0].method, VirtualSurfacePolicy::BestCase);
        assert_eq!(rep[0].scenario, "trench");
        assert_eq!(rep[0].success_rate, 1.0);
        assert_eq!(rep[0].duration_std, 0.0);
        assert_eq!(rep[5].success_rate, 0.0);
        let text = format_table(&rep);
        assert_eq!(text.lines().count(), 7);
        assert!(report_csv(&rep).starts_with("method,scenario,success_rate,duration_mean,duration_std,samples\n"));
    }

    #[test]
    fn zero_samples_rejected() {
        let cfg = ExperimentConfig {
            samples: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            scenarios: vec!["moon".into()],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
