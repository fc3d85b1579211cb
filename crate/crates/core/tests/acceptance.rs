//! Acceptance suite. Runs every criterion sequentially (so wall-clock
//! limits are not distorted by parallel tests) and prints one line each.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use netkf::channel::{Channel, ChannelConfig, SendOutcome};
use netkf::checks::{gain_factorization, gain_stationarity, zero_delay_linear, zero_delay_robot};
use netkf::harness::linear::LinearScenario;
use netkf::harness::{run_monte_carlo, run_trial, FilterKind, MonteCarloReport, ScenarioConfig};
use netkf::linalg::{FlopCounter, Mat, Vector};
use netkf::poekf::{poekf_predict, ProcessModel};
use netkf::robot::{DiffDriveModel, RobotParams, RobotPose, WheelSpeeds};

const ZERO_DELAY_TOL: f64 = 1e-9;
const ZERO_DELAY_LIMIT: Duration = Duration::from_secs(5);
const GAIN_LIMIT: Duration = Duration::from_secs(10);
const SIM_LIMIT: Duration = Duration::from_secs(60);
const REFILTER_GAP: f64 = 0.25;
const ORDERING_SLACK: f64 = 1.02;
const JACOBIAN_TOL: f64 = 1e-5;
const CHANNEL_PACKETS: u64 = 100_000;
const CHI2_P_MIN: f64 = 0.01;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.5}")).collect();
    format!("[{}]", parts.join(", "))
}

fn zero_delay() -> Verdict {
    let start = Instant::now();
    let lin = zero_delay_linear(101, 1000).expect("linear trace");
    let robot = zero_delay_robot(102, 1000).expect("robot trace");
    let took = start.elapsed();
    verdict(
        lin < ZERO_DELAY_TOL && robot < ZERO_DELAY_TOL && took < ZERO_DELAY_LIMIT,
        format!("linear {lin:.2e}, robot {robot:.2e}, {took:.2?}"),
    )
}

fn stationarity() -> Verdict {
    let start = Instant::now();
    let out = gain_stationarity(2024).expect("gain suite");
    let took = start.elapsed();
    verdict(
        out.passed && took < GAIN_LIMIT,
        format!("max |grad| {:.2e} over 50 instances, {took:.2?}", out.worst),
    )
}

fn factorization() -> Verdict {
    let out = gain_factorization(2024).expect("gain suite");
    verdict(out.passed, format!("max elementwise deviation {:.2e}", out.worst))
}

fn total_loss() -> Verdict {
    let mut cfg = ScenarioConfig::sim1();
    cfg.meas_channel.loss_prob = 1.0;
    cfg.filters = vec![FilterKind::PoEkf];
    let trial = run_trial(&cfg, 0).expect("trial");
    let model = DiffDriveModel::new(cfg.robot);
    let mut state = trial.filters[0].states[0].clone();
    let mut exact = true;
    for (t, u) in trial.applied.iter().enumerate() {
        state = poekf_predict(&state, u, &model, &mut FlopCounter::new()).expect("predict").0;
        exact &= state == trial.filters[0].states[t + 1];
    }
    verdict(exact, format!("{} ticks bit-identical to prediction only", trial.applied.len()))
}

fn robot_study(cfg: ScenarioConfig) -> (MonteCarloReport, Duration) {
    let start = Instant::now();
    let rep = run_monte_carlo(&cfg).expect("monte carlo");
    (rep, start.elapsed())
}

fn robot_accuracy(rep: &MonteCarloReport, took: Duration) -> Verdict {
    let po = rep.steady_state_rmse("poekf").unwrap();
    let ekf = rep.steady_state_rmse("ekf").unwrap();
    let rf = rep.steady_state_rmse("refilter").unwrap();
    let gaps: Vec<f64> = (0..3).map(|c| (po[c] - rf[c]).abs() / rf[c]).collect();
    let passed = (0..3).all(|c| ekf[c] > po[c] && gaps[c] < REFILTER_GAP) && took < SIM_LIMIT;
    verdict(
        passed,
        format!(
            "poekf {} ekf {} refilter {} gap {} {took:.1?}",
            fmt_vec(&po),
            fmt_vec(&ekf),
            fmt_vec(&rf),
            fmt_vec(&gaps)
        ),
    )
}

fn linear_ordering() -> Verdict {
    let mut details = Vec::new();
    let mut passed = true;
    for sc in [LinearScenario::scalar(), LinearScenario::three_state()] {
        let rep = sc.run_monte_carlo().expect("linear monte carlo");
        let aug = rep.steady_state_total("oracle").unwrap();
        let po = rep.steady_state_total("poekf").unwrap();
        let naive = rep.steady_state_total("ekf").unwrap();
        passed &= aug <= po * ORDERING_SLACK && po <= naive * ORDERING_SLACK;
        details.push(format!("{}: oracle {aug:.5} poekf {po:.5} naive {naive:.5}", sc.name));
    }
    verdict(passed, details.join("; "))
}

fn cost_ordering(reports: &[&MonteCarloReport]) -> Verdict {
    let mut details = Vec::new();
    let mut passed = true;
    for rep in reports {
        let flops = |n: &str| rep.filter(n).unwrap().flops_total;
        let norm = rep.flops_normalized("poekf").unwrap();
        passed &= flops("refilter") > flops("poekf") && flops("poekf") > flops("ekf") && (1.0..=20.0).contains(&norm);
        details.push(format!(
            "{}: refilter {:.2} poekf {norm:.2} ekf 1",
            rep.scenario,
            rep.flops_normalized("refilter").unwrap()
        ));
    }
    verdict(passed, details.join("; "))
}

fn channel_statistics() -> Verdict {
    let cfg = ChannelConfig {
        delay_min: 8,
        delay_max: 15,
        loss_prob: 0.1,
        seed: 99,
    };
    let mut ch: Channel<()> = Channel::new(cfg);
    let span = (cfg.delay_max - cfg.delay_min + 1) as usize;
    let mut counts = vec![0u64; span];
    let mut lost = 0u64;
    for k in 0..CHANNEL_PACKETS {
        match ch.send((), k).expect("send") {
            SendOutcome::Dropped => lost += 1,
            SendOutcome::Accepted { due_tick } => counts[(due_tick - k - cfg.delay_min) as usize] += 1,
        }
    }
    let n = CHANNEL_PACKETS as f64;
    let sigma = (n * cfg.loss_prob * (1.0 - cfg.loss_prob)).sqrt();
    let z = (lost as f64 - n * cfg.loss_prob).abs() / sigma;
    let delivered: u64 = counts.iter().sum();
    let expected = delivered as f64 / span as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((span - 1) as f64).unwrap().cdf(chi2);
    verdict(
        z < 3.0 && p > CHI2_P_MIN,
        format!("loss {lost} ({z:.2} sigma), delay chi2 {chi2:.2} p={p:.3}"),
    )
}

fn jacobians() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = DiffDriveModel::new(RobotParams::default());
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..100 {
        let x = RobotPose::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-3.0..3.0),
        )
        .to_vector();
        let u = WheelSpeeds::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)).to_vector();
        let w0 = Vector::zeros(2);
        let a = model.state_jacobian(&x, &u);
        let wj = model.noise_jacobian(&x, &u);
        let fd = |f: &dyn Fn(&Vector) -> Vector, at: &Vector| {
            Mat::from_fn(3, at.len(), |r, c| {
                let mut p = at.clone();
                let mut m = at.clone();
                p[c] += h;
                m[c] -= h;
                let mut d = f(&p) - f(&m);
                d[2] = netkf::linalg::wrap_angle(d[2]);
                d[r] / (2.0 * h)
            })
        };
        let a_fd = fd(&|xx: &Vector| model.transition(xx, &u, &w0), &x);
        let w_fd = fd(&|ww: &Vector| model.transition(&x, &u, ww), &w0);
        for (an, nu) in a.iter().zip(a_fd.iter()).chain(wj.iter().zip(w_fd.iter())) {
            worst = worst.max((an - nu).abs() / an.abs().max(1.0));
        }
    }
    verdict(worst < JACOBIAN_TOL, format!("max relative deviation {worst:.2e} at 100 points"))
}

fn csv_bytes_without_wall_time(path: &Path) -> Vec<u8> {
    let text = std::fs::read_to_string(path).expect("read csv");
    let stripped: Vec<String> = text
        .lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.truncate(3);
            cells.join(",")
        })
        .collect();
    stripped.join("\n").into_bytes()
}

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_netkf"))
            .args(["simulate", "--scenario", "sim1", "--runs", "10", "--seed", "7", "--out"])
            .arg(d.path())
            .output()
            .expect("run netkf");
        if !status.status.success() {
            return verdict(false, format!("simulate failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
    }
    let mut same = true;
    for f in ["trajectory.csv", "rmse.csv"] {
        same &= std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap();
    }
    same &= csv_bytes_without_wall_time(&dirs[0].path().join("cost.csv"))
        == csv_bytes_without_wall_time(&dirs[1].path().join("cost.csv"));
    verdict(same, "trajectory.csv, rmse.csv identical; cost.csv identical apart from wall time")
}

fn main() {
    let mut sim1 = ScenarioConfig::sim1();
    sim1.filters = vec![FilterKind::PoEkf, FilterKind::Ekf, FilterKind::Refilter];
    let mut sim2 = ScenarioConfig::sim2();
    sim2.filters = sim1.filters.clone();

    let mut results: Vec<(&str, Verdict)> = vec![("zero-delay reduction", zero_delay())];
    results.push(("gain stationarity", stationarity()));
    results.push(("gain factorization", factorization()));
    results.push(("total measurement loss", total_loss()));
    let (rep1, t1) = robot_study(sim1);
    results.push(("sim1 accuracy", robot_accuracy(&rep1, t1)));
    let (rep2, t2) = robot_study(sim2);
    results.push(("sim2 accuracy", robot_accuracy(&rep2, t2)));
    results.push(("linear ordering", linear_ordering()));
    results.push(("cost ordering", cost_ordering(&[&rep1, &rep2])));
    results.push(("channel statistics", channel_statistics()));
    results.push(("robot jacobians", jacobians()));
    results.push(("cli determinism", determinism()));

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!(
            "{} [{:>2}] {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
        failed += !v.passed as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
