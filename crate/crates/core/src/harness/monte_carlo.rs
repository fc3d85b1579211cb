//! Monte Carlo aggregation: per-tick RMSE across runs and cost totals.

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::scenario::ScenarioConfig;
use crate::harness::sim::{run_trial, TrialResult};
use crate::Tick;

/// Aggregate over all runs for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub name: String,
    /// `rmse[c][t]`: RMSE of component `c` at tick index `t`.
    pub rmse: Vec<Vec<f64>>,
    /// RMSE of the whole error vector, `sqrt(mean_r ‖e‖²)`, per tick.
    pub rmse_total: Vec<f64>,
    pub flops_total: u64,
    pub wall_seconds: f64,
    pub discarded: u64,
    /// Covariance updates projected back to PSD.
    pub psd_violations: u64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub runs: usize,
    pub ticks: Vec<Tick>,
    pub components: Vec<String>,
    pub filters: Vec<FilterSummary>,
    /// Full trace of trial 0, kept for trajectory output.
    pub first_trial: TrialResult,
}

/// Squared errors of one trial: `[filter][component][tick]` plus totals.
struct TrialErrors {
    sq: Vec<Vec<Vec<f64>>>,
    flops: Vec<u64>,
    wall: Vec<f64>,
    discarded: Vec<u64>,
    psd_violations: Vec<u64>,
}

fn trial_errors(res: &TrialResult) -> TrialErrors {
    let nc = res.components.len();
    let nt = res.ticks.len();
    let sq = (0..res.filters.len())
        .map(|f| {
            let mut per = vec![vec![0.0; nt]; nc];
            for t in 0..nt {
                let e = res.error(f, t);
                for (row, v) in per.iter_mut().zip(e.iter()) {
                    row[t] = v * v;
                }
            }
            per
        })
        .collect();
    TrialErrors {
        sq,
        flops: res.filters.iter().map(|f| f.flops).collect(),
        wall: res.filters.iter().map(|f| f.wall_time.as_secs_f64()).collect(),
        discarded: res.filters.iter().map(|f| f.discarded).collect(),
        psd_violations: res.filters.iter().map(|f| f.psd_violations).collect(),
    }
}

/// Runs `runs` trials produced by `trial` and aggregates them. Trials run in
/// parallel; aggregation happens afterwards in trial order, so the result
/// does not depend on the number of worker threads.
pub fn aggregate_trials<F>(scenario: &str, runs: usize, trial: F) -> Result<MonteCarloReport>
where
    F: Fn(usize) -> Result<TrialResult> + Sync,
{
    let first = trial(0)?;
    let mut rest: Vec<TrialErrors> = (1..runs)
        .into_par_iter()
        .map(|i| trial(i).map(|r| trial_errors(&r)))
        .collect::<Result<Vec<_>>>()?;
    let mut all = vec![trial_errors(&first)];
    all.append(&mut rest);

    let nf = first.filters.len();
    let nc = first.components.len();
    let nt = first.ticks.len();
    let n = all.len() as f64;
    let filters = (0..nf)
        .map(|f| {
            let mut rmse = vec![vec![0.0; nt]; nc];
            let mut total = vec![0.0; nt];
            for (c, row) in rmse.iter_mut().enumerate() {
                for (t, cell) in row.iter_mut().enumerate() {
                    let sum: f64 = all.iter().map(|e| e.sq[f][c][t]).sum();
                    *cell = (sum / n).sqrt();
                    total[t] += sum / n;
                }
            }
            FilterSummary {
                name: first.filters[f].name.clone(),
                rmse,
                rmse_total: total.into_iter().map(f64::sqrt).collect(),
                flops_total: all.iter().map(|e| e.flops[f]).sum(),
                wall_seconds: all.iter().map(|e| e.wall[f]).sum(),
                discarded: all.iter().map(|e| e.discarded[f]).sum(),
                psd_violations: all.iter().map(|e| e.psd_violations[f]).sum(),
            }
        })
        .collect();
    Ok(MonteCarloReport {
        scenario: scenario.to_string(),
        runs,
        ticks: first.ticks.clone(),
        components: first.components.clone(),
        filters,
        first_trial: first,
    })
}

/// Monte Carlo over `cfg.runs` trials of a robot scenario.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    aggregate_trials(&cfg.name, cfg.runs, |i| run_trial(cfg, i))
}

/// Mean of a series over its final half.
pub fn steady_state_mean(series: &[f64]) -> f64 {
    let start = series.len() / 2;
    let tail = &series[start..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

impl MonteCarloReport {
    pub fn filter(&self, name: &str) -> Option<&FilterSummary> {
        self.filters.iter().find(|f| f.name == name)
    }

    /// Per-component steady-state RMSE (mean over the final half of ticks).
    pub fn steady_state_rmse(&self, name: &str) -> Option<Vec<f64>> {
        self.filter(name)
            .map(|f| f.rmse.iter().map(|s| steady_state_mean(s)).collect())
    }

    /// Steady-state RMSE of the whole error vector.
    pub fn steady_state_total(&self, name: &str) -> Option<f64> {
        self.filter(name).map(|f| steady_state_mean(&f.rmse_total))
    }

    /// Flop total relative to the naive EKF; `None` when no EKF ran.
    pub fn flops_normalized(&self, name: &str) -> Option<f64> {
        let base = self.filter("ekf")?.flops_total as f64;
        Some(self.filter(name)?.flops_total as f64 / base)
    }

    pub fn wall_time_normalized(&self, name: &str) -> Option<f64> {
        let base = self.filter("ekf")?.wall_seconds;
        Some(self.filter(name)?.wall_seconds / base)
    }
}
