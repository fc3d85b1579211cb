//! Linear Gaussian scenarios over the same closed loop as the robot.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::{AugmentedKf, NaiveEkf, Refilter, DEFAULT_BUFFER_SLOTS};
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::estimator::{FilterOptions, GaussianState, LinearPoFilter, LinearSystem};
use crate::filter::Estimator;
use crate::harness::monte_carlo::{aggregate_trials, MonteCarloReport};
use crate::harness::sim::{simulate, Plant, TrialResult, TrialSeeds};
use crate::harness::FilterKind;
use crate::linalg::{Mat, Vector};
use crate::Tick;

/// Linear plant driven by `u_k = amplitude · sin(2π k / period)` on every
/// input channel.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub system: LinearSystem,
    pub x0: Vector,
    pub amplitude: f64,
    pub period: f64,
    q_chol: Mat,
    r_chol: Mat,
}

fn cholesky(m: &Mat, what: &str) -> Result<Mat> {
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Validation(format!("{what} must be positive definite")))
}

impl LinearPlant {
    pub fn new(system: LinearSystem, x0: Vector, amplitude: f64, period: f64) -> Result<Self> {
        if x0.len() != system.state_dim() {
            return Err(Error::Validation("initial state has the wrong dimension".into()));
        }
        if period.is_nan() || period <= 0.0 {
            return Err(Error::Validation("input period must be positive".into()));
        }
        Ok(Self {
            q_chol: cholesky(&system.q, "Q")?,
            r_chol: cholesky(&system.r, "R")?,
            system,
            x0,
            amplitude,
            period,
        })
    }
}

fn std_normal(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

impl Plant for LinearPlant {
    fn initial_state(&self) -> Vector {
        self.x0.clone()
    }

    fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    fn command(&self, tick: Tick) -> Vector {
        let v = self.amplitude * (std::f64::consts::TAU * tick as f64 / self.period).sin();
        Vector::from_element(self.system.input_dim(), v)
    }

    fn step(&self, x: &Vector, u: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let w = &self.q_chol * std_normal(rng, x.len());
        &self.system.a * x + &self.system.b * u + w
    }

    fn measure(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let v = &self.r_chol * std_normal(rng, self.system.meas_dim());
        &self.system.h * x + v
    }

    fn component_names(&self) -> Vec<String> {
        if self.x0.len() == 1 {
            return vec!["x".into()];
        }
        (0..self.x0.len()).map(|i| format!("x{i}")).collect()
    }

    fn angular(&self) -> Vec<bool> {
        vec![false; self.x0.len()]
    }
}

#[derive(Debug, Clone)]
pub struct LinearScenario {
    pub name: String,
    pub plant: LinearPlant,
    pub init_cov: Mat,
    pub ctrl_channel: ChannelConfig,
    pub meas_channel: ChannelConfig,
    pub length: u64,
    pub runs: usize,
    pub master_seed: u64,
    pub filters: Vec<FilterKind>,
    pub history_depth: usize,
    pub buffer_slots: usize,
}

impl LinearScenario {
    fn with_plant(name: &str, plant: LinearPlant, init_cov: Mat, seeds: (u64, u64)) -> Self {
        Self {
            name: name.into(),
            plant,
            init_cov,
            ctrl_channel: ChannelConfig::ideal(seeds.0),
            meas_channel: ChannelConfig {
                delay_min: 1,
                delay_max: 8,
                loss_prob: 0.05,
                seed: seeds.1,
            },
            length: 400,
            runs: 100,
            master_seed: 0,
            filters: FilterKind::ALL.to_vec(),
            history_depth: crate::estimator::DEFAULT_HISTORY_DEPTH,
            buffer_slots: DEFAULT_BUFFER_SLOTS,
        }
    }

    /// Scalar random walk with a sinusoidal drive, `x' = x + u + w`.
    pub fn scalar() -> Self {
        let one = || Mat::from_element(1, 1, 1.0);
        let system = LinearSystem::new(one(), one(), Mat::from_element(1, 1, 0.01), one(), Mat::from_element(1, 1, 0.25))
            .expect("valid scalar system");
        let plant = LinearPlant::new(system, Vector::zeros(1), 0.5, 40.0).expect("valid scalar plant");
        Self::with_plant("linear-scalar", plant, one(), (51, 52))
    }

    /// Position, velocity and damped acceleration with position-only
    /// measurements.
    pub fn three_state() -> Self {
        let a = Mat::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.0, 0.0, 0.95]);
        let b = Mat::from_column_slice(3, 1, &[0.0, 0.0, 0.1]);
        let q = Mat::from_diagonal(&Vector::from_row_slice(&[1e-4, 1e-4, 1e-3]));
        let h = Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let r = Mat::from_element(1, 1, 0.04);
        let system = LinearSystem::new(a, b, q, h, r).expect("valid three-state system");
        let plant = LinearPlant::new(system, Vector::zeros(3), 1.0, 50.0).expect("valid three-state plant");
        Self::with_plant("linear-3state", plant, Mat::identity(3, 3) * 0.1, (61, 62))
    }

    pub fn validate(&self) -> Result<()> {
        self.ctrl_channel.validate(u64::MAX)?;
        self.meas_channel.validate(self.history_depth as u64)?;
        if self.runs == 0 || self.length == 0 {
            return Err(Error::Validation("runs and length must be positive".into()));
        }
        let n = self.plant.system.state_dim();
        if self.init_cov.shape() != (n, n) {
            return Err(Error::Validation("initial covariance has the wrong shape".into()));
        }
        Ok(())
    }

    pub fn estimators(&self) -> Result<Vec<(String, Box<dyn Estimator>)>> {
        let sys = &self.plant.system;
        let initial = GaussianState::new(self.plant.x0.clone(), self.init_cov.clone(), 0)?;
        let options = FilterOptions {
            history_depth: self.history_depth,
            ..FilterOptions::default()
        };
        self.filters
            .iter()
            .map(|kind| {
                let est: Box<dyn Estimator> = match kind {
                    FilterKind::PoEkf => Box::new(LinearPoFilter::new(sys.clone(), initial.clone(), options)),
                    FilterKind::Ekf => Box::new(NaiveEkf::new(sys.clone(), sys.clone(), initial.clone())),
                    FilterKind::Refilter => {
                        Box::new(Refilter::new(sys.clone(), sys.clone(), initial.clone(), self.buffer_slots)?)
                    }
                    FilterKind::Oracle => Box::new(AugmentedKf::new(
                        sys.clone(),
                        sys.clone(),
                        initial.clone(),
                        self.meas_channel.delay_max as usize,
                    )),
                };
                Ok((kind.as_str().to_string(), est))
            })
            .collect()
    }

    pub fn run_trial(&self, trial_index: usize) -> Result<TrialResult> {
        let seeds = TrialSeeds::derive(self.master_seed, trial_index, self.ctrl_channel.seed, self.meas_channel.seed);
        simulate(
            &self.plant,
            self.estimators()?,
            self.ctrl_channel,
            self.meas_channel,
            self.length,
            seeds,
            trial_index,
        )
    }

    pub fn run_monte_carlo(&self) -> Result<MonteCarloReport> {
        self.validate()?;
        aggregate_trials(&self.name, self.runs, |i| self.run_trial(i))
    }
}
