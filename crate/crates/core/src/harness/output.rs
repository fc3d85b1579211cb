//! CSV output.
//!
//! * `trajectory.csv`: `tick, true_<c>…, <filter>_est_<c>…` for trial 0
//! * `rmse.csv`: `tick, <filter>_rmse_<c>…`
//! * `cost.csv`: `filter, flops_total, flops_normalized, wall_time_normalized`
//!
//! Floats use Rust's shortest round-trip formatting, so parsing a cell gives
//! back the exact in-memory value. Normalized costs are left empty when the
//! naive EKF was not part of the run.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::monte_carlo::MonteCarloReport;
use crate::harness::sim::TrialResult;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const RMSE_FILE: &str = "rmse.csv";
pub const COST_FILE: &str = "cost.csv";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn wrap_csv(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn trajectory_header(trial: &TrialResult) -> Vec<String> {
    let mut h = vec!["tick".to_string()];
    h.extend(trial.components.iter().map(|c| format!("true_{c}")));
    for f in &trial.filters {
        h.extend(trial.components.iter().map(|c| format!("{}_est_{c}", f.name)));
    }
    h
}

pub fn write_trajectory_csv(trial: &TrialResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let err = wrap_csv(path);
    w.write_record(trajectory_header(trial)).map_err(&err)?;
    for (t, tick) in trial.ticks.iter().enumerate() {
        let mut row = vec![tick.to_string()];
        row.extend(trial.truth[t].iter().map(|v| v.to_string()));
        for f in &trial.filters {
            row.extend(f.states[t].mean.iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_rmse_csv(report: &MonteCarloReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let err = wrap_csv(path);
    let mut header = vec!["tick".to_string()];
    for f in &report.filters {
        header.extend(report.components.iter().map(|c| format!("{}_rmse_{c}", f.name)));
    }
    w.write_record(&header).map_err(&err)?;
    for (t, tick) in report.ticks.iter().enumerate() {
        let mut row = vec![tick.to_string()];
        for f in &report.filters {
            row.extend(f.rmse.iter().map(|series| series[t].to_string()));
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_cost_csv(report: &MonteCarloReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let err = wrap_csv(path);
    w.write_record(["filter", "flops_total", "flops_normalized", "wall_time_normalized"])
        .map_err(&err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for f in &report.filters {
        w.write_record([
            f.name.clone(),
            f.flops_total.to_string(),
            opt(report.flops_normalized(&f.name)),
            opt(report.wall_time_normalized(&f.name)),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the three CSV files into `out_dir`, creating it if needed.
pub fn emit_csv(report: &MonteCarloReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let traj = out_dir.join(TRAJECTORY_FILE);
    let rmse = out_dir.join(RMSE_FILE);
    let cost = out_dir.join(COST_FILE);
    write_trajectory_csv(&report.first_trial, &traj)?;
    write_rmse_csv(report, &rmse)?;
    write_cost_csv(report, &cost)?;
    Ok(vec![traj, rmse, cost])
}
