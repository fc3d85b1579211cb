//! Self-checks against independent reference computations.
//!
//! Each check rebuilds the quantity under test with plain matrix algebra
//! (no history buffer, no flop counter) and compares it with the library.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::estimator::{
    delayed_gain, relevance_factor, FilterOptions, GaussianState, LinearPoFilter, LinearSystem, MeasurementPacket,
    StepHistory, StepRecord,
};
use crate::filter::Estimator;
use crate::linalg::{wrap_angle, FlopCounter, Mat, Vector, DEFAULT_COND_BOUND};
use crate::poekf::PoEkf;
use crate::robot::{
    input_noise_cov, meas_noise_cov, process_jacobian_noise, process_jacobian_state, step_kinematics, DiffDriveModel,
    PoseSensor, RobotParams, RobotPose, WheelSpeeds,
};

pub const GAIN_INSTANCES: usize = 50;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const FACTORIZATION_TOL: f64 = 1e-12;
pub const EQUIVALENCE_STEPS: u64 = 1000;
pub const EQUIVALENCE_TOL: f64 = 1e-9;
pub const LINEARIZED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Largest deviation observed.
    pub worst: f64,
    pub tolerance: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance
        )
    }
}

fn outcome(name: &str, worst: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed: worst.is_finite() && worst < tolerance,
        worst,
        tolerance,
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    })
}

fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Mat {
    let m = normal_mat(rng, n, n, 1.0 / (n as f64).sqrt());
    &m * m.transpose() + Mat::identity(n, n) * floor
}

/// Random delayed-fusion problem: `m` past steps with their transitions,
/// gains and measurement matrices, plus the origin-tick terms.
#[derive(Debug, Clone)]
pub struct GainInstance {
    pub n: usize,
    pub m: usize,
    /// `steps[j − 1] = (A, K, H)` for tick `k − j`.
    pub steps: Vec<(Mat, Mat, Mat)>,
    pub p_i: Mat,
    pub p_k: Mat,
    pub h_i: Mat,
    pub r_i: Mat,
}

impl GainInstance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Self {
        let z = rng.random_range(1..=n);
        let steps = (0..m)
            .map(|_| {
                let a = Mat::identity(n, n) + normal_mat(rng, n, n, 0.3);
                let zj = rng.random_range(1..=n);
                let k = if rng.random_bool(0.2) {
                    Mat::zeros(n, zj)
                } else {
                    normal_mat(rng, n, zj, 0.3)
                };
                (a, k, normal_mat(rng, zj, n, 1.0))
            })
            .collect();
        Self {
            n,
            m,
            steps,
            p_i: spd(rng, n, 0.1),
            p_k: spd(rng, n, 0.1),
            h_i: normal_mat(rng, z, n, 1.0),
            r_i: spd(rng, z, 0.1),
        }
    }

    /// Instances cycling through dimensions 1 and 3 and delays 0..=5.
    pub fn suite(seed: u64, count: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let n = if i % 2 == 0 { 1 } else { 3 };
                Self::random(&mut rng, n, (i / 2) % 6)
            })
            .collect()
    }

    /// `F = ∏ⱼ Aⱼ (I − Kⱼ Hⱼ)`, straight product, most recent step leftmost.
    pub fn relevance_reference(&self) -> Mat {
        let id = Mat::identity(self.n, self.n);
        self.steps
            .iter()
            .fold(id.clone(), |f, (a, k, h)| f * (a * (&id - k * h)))
    }

    /// Undelayed gain `Pᵢ Hᵀ (H Pᵢ Hᵀ + R)⁻¹` via a general inverse.
    pub fn standard_gain_reference(&self) -> Mat {
        let s = &self.h_i * &self.p_i * self.h_i.transpose() + &self.r_i;
        &self.p_i * self.h_i.transpose() * s.try_inverse().expect("S is invertible")
    }

    /// `tr P⁺(K)` with `P⁺ = Pₖ − LᵀHᵀKᵀ − KHL + KHPᵢHᵀKᵀ + KRKᵀ`, `L = Pᵢ Fᵀ`.
    pub fn trace_posteriori(&self, f: &Mat, k: &Mat) -> f64 {
        let l = &self.p_i * f.transpose();
        let khl = k * &self.h_i * &l;
        let p = &self.p_k - khl.transpose() - &khl
            + k * &self.h_i * &self.p_i * self.h_i.transpose() * k.transpose()
            + k * &self.r_i * k.transpose();
        p.trace()
    }

    /// History holding the `m` steps before tick `m`, so a packet from tick
    /// 0 arrives at tick `m`.
    pub fn history(&self) -> Result<StepHistory> {
        let mut hist = StepHistory::new(crate::estimator::DEFAULT_HISTORY_DEPTH);
        for t in 0..self.m {
            let (a, k, h) = &self.steps[self.m - 1 - t];
            let p = if t == 0 { self.p_i.clone() } else { Mat::identity(self.n, self.n) };
            hist.push(StepRecord {
                tick: t as u64,
                a_mat: a.clone(),
                gain: k.clone(),
                h_mat: h.clone(),
                priori: GaussianState::new(Vector::zeros(self.n), p, t as u64)?,
            })?;
        }
        Ok(hist)
    }

    /// Delayed gain as the library computes it.
    pub fn library_gain(&self) -> Result<Mat> {
        let hist = self.history()?;
        let mut flops = FlopCounter::new();
        let f = relevance_factor(&hist, self.m as u64, self.m as u64, &mut flops)?;
        let f = if self.m == 0 { Mat::identity(self.n, self.n) } else { f };
        let priori = GaussianState::new(Vector::zeros(self.n), self.p_i.clone(), 0)?;
        delayed_gain(&f, &priori, &self.h_i, &self.r_i, DEFAULT_COND_BOUND, &mut flops)
    }
}

/// Central-difference gradient of `tr P⁺` with respect to every gain entry.
pub fn trace_gradient(inst: &GainInstance, f: &Mat, k: &Mat, step: f64) -> Mat {
    Mat::from_fn(k.nrows(), k.ncols(), |r, c| {
        let mut kp = k.clone();
        let mut km = k.clone();
        kp[(r, c)] += step;
        km[(r, c)] -= step;
        (inst.trace_posteriori(f, &kp) - inst.trace_posteriori(f, &km)) / (2.0 * step)
    })
}

/// The delayed gain is a stationary point of `tr P⁺`.
pub fn gain_stationarity(seed: u64) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for inst in GainInstance::suite(seed, GAIN_INSTANCES) {
        let k = inst.library_gain()?;
        let g = trace_gradient(&inst, &inst.relevance_reference(), &k, 1e-5);
        worst = worst.max(g.amax());
    }
    Ok(outcome("gain stationarity", worst, GRADIENT_TOL))
}

/// `K = F·K*` with both factors rebuilt independently.
pub fn gain_factorization(seed: u64) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for inst in GainInstance::suite(seed, GAIN_INSTANCES) {
        let k = inst.library_gain()?;
        let reference = inst.relevance_reference() * inst.standard_gain_reference();
        for (a, b) in k.iter().zip(reference.iter()) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    Ok(outcome("gain factorization", worst, FACTORIZATION_TOL))
}

fn rel_dev(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn rel_dev_mat(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Textbook Kalman filter step used as the reference.
fn kf_reference(x: &mut Vector, p: &mut Mat, sys: &LinearSystem, u: &Vector, z: Option<&Vector>) {
    *x = &sys.a * &*x + &sys.b * u;
    *p = &sys.a * &*p * sys.a.transpose() + &sys.q;
    if let Some(z) = z {
        let s = &sys.h * &*p * sys.h.transpose() + &sys.r;
        let k = &*p * sys.h.transpose() * s.try_inverse().expect("S is invertible");
        *x += &k * (z - &sys.h * &*x);
        *p = (Mat::identity(p.nrows(), p.nrows()) - &k * &sys.h) * &*p;
    }
}

/// Random stable three-state system with two outputs.
pub fn random_linear_system(rng: &mut ChaCha8Rng) -> LinearSystem {
    let a = Mat::identity(3, 3) * 0.9 + normal_mat(rng, 3, 3, 0.1);
    LinearSystem::new(
        a,
        normal_mat(rng, 3, 1, 1.0),
        spd(rng, 3, 0.01) * 0.1,
        normal_mat(rng, 2, 3, 1.0),
        spd(rng, 2, 0.05),
    )
    .expect("valid random system")
}

/// Worst relative deviation of mean and covariance between the
/// delayed-measurement filter fed zero-delay packets and a textbook KF.
pub fn zero_delay_linear(seed: u64, steps: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = random_linear_system(&mut rng);
    let initial = GaussianState::new(Vector::zeros(3), Mat::identity(3, 3), 0)?;
    let mut po = LinearPoFilter::new(sys.clone(), initial.clone(), FilterOptions::default());
    let (mut x, mut p) = (initial.mean.clone(), initial.cov.clone());
    let mut truth = Vector::zeros(3);
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let u = Vector::from_element(1, (0.1 * k as f64).sin());
        truth = &sys.a * &truth + &sys.b * &u + normal_mat(&mut rng, 3, 1, 0.1).column(0);
        let z: Vector = &sys.h * &truth + normal_mat(&mut rng, 2, 1, 0.2).column(0);
        let seen = rng.random_bool(0.9);
        po.predict(&u)?;
        let pkt = if seen {
            MeasurementPacket::new(z.clone(), k + 1, k + 1)
        } else {
            MeasurementPacket::lost(2, k + 1, k + 1)
        };
        po.fuse(&[pkt])?;
        kf_reference(&mut x, &mut p, &sys, &u, seen.then_some(&z));
        let s = po.state();
        worst = worst.max(rel_dev(&s.mean, &x)).max(rel_dev_mat(&s.cov, &p));
    }
    Ok(worst)
}

/// Same comparison for the robot against a textbook EKF.
pub fn zero_delay_robot(seed: u64, steps: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RobotParams::default();
    let r = meas_noise_cov();
    let initial = GaussianState::new(Vector::zeros(3), Mat::identity(3, 3) * 0.01, 0)?;
    let mut po = PoEkf::new(
        DiffDriveModel::new(params),
        PoseSensor::new(r.clone()),
        initial.clone(),
        FilterOptions::default(),
    );
    let (mut x, mut p) = (initial.mean.clone(), initial.cov.clone());
    let mut truth = RobotPose::default();
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let u = WheelSpeeds::from_body_rates(0.2, 0.3 * (0.02 * k as f64).sin(), &params);
        let noise = WheelSpeeds::new(0.05 * rng.sample::<f64, _>(StandardNormal), 0.05 * rng.sample::<f64, _>(StandardNormal));
        truth = step_kinematics(truth, u, &params, noise);
        let mut z = truth.to_vector();
        for (i, v) in z.iter_mut().enumerate() {
            *v += r[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let seen = rng.random_bool(0.9);

        po.predict(&u.to_vector())?;
        let pkt = if seen {
            MeasurementPacket::new(z.clone(), k + 1, k + 1)
        } else {
            MeasurementPacket::lost(3, k + 1, k + 1)
        };
        po.fuse(&[pkt])?;

        let pose = RobotPose::from_vector(&x);
        let a = process_jacobian_state(pose, u, &params);
        let w = process_jacobian_noise(pose, &params);
        x = step_kinematics(pose, u, &params, WheelSpeeds::default()).to_vector();
        p = &a * &p * a.transpose() + &w * input_noise_cov(u, params.delta) * w.transpose();
        if seen {
            let s = &p + &r;
            let gain = &p * s.try_inverse().expect("S is invertible");
            let mut innov = &z - &x;
            innov[2] = wrap_angle(innov[2]);
            x += &gain * innov;
            x[2] = wrap_angle(x[2]);
            p = (Mat::identity(3, 3) - &gain) * &p;
        }
        let s = po.state();
        let mut dm = &s.mean - &x;
        dm[2] = wrap_angle(dm[2]);
        worst = worst
            .max(dm.amax() / x.amax().max(1.0))
            .max(rel_dev_mat(&s.cov, &p));
    }
    Ok(worst)
}

/// The linearized filter on a linear model reproduces the linear filter
/// under random delays and losses.
pub fn linearized_matches_linear(seed: u64, steps: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = random_linear_system(&mut rng);
    let initial = GaussianState::new(Vector::zeros(3), Mat::identity(3, 3), 0)?;
    let mut lin = LinearPoFilter::new(sys.clone(), initial.clone(), FilterOptions::default());
    let mut ext = PoEkf::new(sys.clone(), sys.clone(), initial, FilterOptions::default());
    let mut truth = Vector::zeros(3);
    let mut in_flight: Vec<(u64, MeasurementPacket)> = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let u = Vector::from_element(1, (0.1 * k as f64).cos());
        truth = &sys.a * &truth + &sys.b * &u + normal_mat(&mut rng, 3, 1, 0.1).column(0);
        let z: Vector = &sys.h * &truth + normal_mat(&mut rng, 2, 1, 0.2).column(0);
        let delay = rng.random_range(0..=6u64);
        let due = k + 1 + delay;
        let pkt = if rng.random_bool(0.9) {
            MeasurementPacket::new(z, k + 1, due)
        } else {
            MeasurementPacket::lost(2, k + 1, due)
        };
        in_flight.push((due, pkt));
        let (now, later): (Vec<_>, Vec<_>) = in_flight.into_iter().partition(|(d, _)| *d == k + 1);
        in_flight = later;
        let arrived: Vec<MeasurementPacket> = now.into_iter().map(|(_, p)| p).collect();
        for f in [&mut lin as &mut dyn Estimator, &mut ext] {
            f.predict(&u)?;
            f.fuse(&arrived)?;
        }
        worst = worst
            .max(rel_dev(&ext.state().mean, &lin.state().mean))
            .max(rel_dev_mat(&ext.state().cov, &lin.state().cov));
    }
    Ok(worst)
}

/// Gain-optimality and linear-equivalence suites.
pub fn oracle_check(seed: u64) -> Result<CheckReport> {
    let outcomes = vec![
        gain_stationarity(seed)?,
        gain_factorization(seed)?,
        outcome(
            "zero-delay linear equivalence",
            zero_delay_linear(seed, EQUIVALENCE_STEPS)?,
            EQUIVALENCE_TOL,
        ),
        outcome(
            "zero-delay robot equivalence",
            zero_delay_robot(seed, EQUIVALENCE_STEPS)?,
            EQUIVALENCE_TOL,
        ),
        outcome(
            "linearized filter on linear model",
            linearized_matches_linear(seed, EQUIVALENCE_STEPS)?,
            LINEARIZED_TOL,
        ),
    ];
    Ok(CheckReport { outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_dimensions_and_delays() {
        let suite = GainInstance::suite(1, GAIN_INSTANCES);
        for n in [1, 3] {
            for m in 0..=5 {
                assert!(suite.iter().any(|i| i.n == n && i.m == m), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn gradient_is_nonzero_away_from_the_gain() {
        let inst = GainInstance::suite(2, 4).pop().unwrap();
        let f = inst.relevance_reference();
        let k = inst.library_gain().unwrap() + Mat::from_element(inst.n, inst.h_i.nrows(), 0.1);
        assert!(trace_gradient(&inst, &f, &k, 1e-5).amax() > 1e-3);
    }

    #[test]
    fn scalar_trace_by_hand() {
        // F = 2, Pᵢ = 1, H = 1, R = 1, Pₖ = 5: tr P⁺(K) = 5 − 4K + 2K².
        let one = Mat::from_element(1, 1, 1.0);
        let inst = GainInstance {
            n: 1,
            m: 0,
            steps: vec![],
            p_i: one.clone(),
            p_k: Mat::from_element(1, 1, 5.0),
            h_i: one.clone(),
            r_i: one,
        };
        let f = Mat::from_element(1, 1, 2.0);
        assert!((inst.trace_posteriori(&f, &Mat::from_element(1, 1, 1.0)) - 3.0).abs() < 1e-15);
        assert!((inst.trace_posteriori(&f, &Mat::from_element(1, 1, 0.0)) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn all_checks_pass() {
        let rep = oracle_check(7).unwrap();
        for o in &rep.outcomes {
            assert!(o.passed, "{o}");
        }
    }
}
