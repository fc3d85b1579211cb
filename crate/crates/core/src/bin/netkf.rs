use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use netkf::checks::oracle_check;
use netkf::harness::{emit_csv, run_monte_carlo, FilterKind, MonteCarloReport, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "netkf", version, about = "Kalman filtering over lossy, delaying networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo study and write trajectory, RMSE and cost CSVs.
    Simulate {
        /// Built-in scenario (sim1, sim2, local, vpn) or a scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of poekf, ekf, refilter, oracle.
        #[arg(long)]
        filters: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check the delayed gain and the zero-delay reduction against
    /// independent reference computations.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the per-filter computational cost table for a scenario.
    Flops {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a scenario in the file format accepted by --scenario.
    ShowScenario {
        #[arg(long)]
        scenario: String,
    },
}

const EXIT_INVALID: u8 = 1;
const EXIT_ORACLE: u8 = 2;

fn configure(
    scenario: &str,
    runs: Option<usize>,
    seed: Option<u64>,
    filters: Option<&str>,
) -> netkf::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::resolve(scenario)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(f) = filters {
        cfg.filters = FilterKind::parse_list(f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_costs(report: &MonteCarloReport) {
    println!("{:<10} {:>16} {:>16} {:>16}", "filter", "flops_total", "flops_norm", "wall_norm");
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    for f in &report.filters {
        println!(
            "{:<10} {:>16} {:>16} {:>16}",
            f.name,
            f.flops_total,
            fmt(report.flops_normalized(&f.name)),
            fmt(report.wall_time_normalized(&f.name)),
        );
    }
}

fn run(cli: Cli) -> netkf::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            scenario,
            runs,
            seed,
            filters,
            out,
        } => {
            let cfg = configure(&scenario, runs, seed, filters.as_deref())?;
            let report = run_monte_carlo(&cfg)?;
            for path in emit_csv(&report, &out)? {
                println!("wrote {}", path.display());
            }
            for f in &report.filters {
                if let Some(rmse) = report.steady_state_rmse(&f.name) {
                    println!(
                        "{:<10} steady-state rmse x={:.5} y={:.5} theta={:.5} discarded={} psd_violations={}",
                        f.name, rmse[0], rmse[1], rmse[2], f.discarded, f.psd_violations
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { seed } => {
            let report = oracle_check(seed)?;
            for o in &report.outcomes {
                println!("{o}");
            }
            if report.all_passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_ORACLE))
            }
        }
        Command::Flops { scenario, runs, seed } => {
            let mut cfg = configure(&scenario, runs, seed, None)?;
            if !cfg.filters.contains(&FilterKind::Ekf) {
                cfg.filters.push(FilterKind::Ekf);
            }
            let report = run_monte_carlo(&cfg)?;
            print_costs(&report);
            Ok(ExitCode::SUCCESS)
        }
        Command::ShowScenario { scenario } => {
            print!("{}", configure(&scenario, None, None, None)?.to_text());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
