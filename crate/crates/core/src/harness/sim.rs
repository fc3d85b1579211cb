//! The closed simulation loop: controller → control channel → plant →
//! sensor → measurement channel → estimators.
//!
//! Per tick `k`:
//!
//! 1. the controller emits its command stamped `k`;
//! 2. the actuator takes the newest command delivered at `k` (zero when
//!    nothing new arrived) and the plant steps to `k + 1`;
//! 3. every estimator predicts with that applied input;
//! 4. the sensor measures the state at `k + 1` and sends it;
//! 5. measurements delivered at `k + 1` are fused.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::{AugmentedKf, NaiveEkf, Refilter};
use crate::channel::{Channel, ChannelConfig};
use crate::error::{Error, Result};
use crate::estimator::{FilterOptions, GaussianState, MeasurementPacket};
use crate::filter::Estimator;
use crate::harness::scenario::{ScenarioConfig, TrajectorySpec};
use crate::harness::{derive_seed, FilterKind};
use crate::linalg::{wrap_angle, Mat, Vector};
use crate::poekf::PoEkf;
use crate::robot::{
    full_state_measurement, input_noise_cov, step_kinematics, DiffDriveModel, PoseSensor, RobotParams, RobotPose,
    WheelSpeeds,
};
use crate::Tick;

/// Ground-truth system driven by the simulation loop.
pub trait Plant {
    fn initial_state(&self) -> Vector;
    fn input_dim(&self) -> usize;
    /// Command the controller issues at `tick`.
    fn command(&self, tick: Tick) -> Vector;
    fn step(&self, x: &Vector, u: &Vector, rng: &mut ChaCha8Rng) -> Vector;
    fn measure(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector;
    fn component_names(&self) -> Vec<String>;
    /// Components whose errors wrap around `(−π, π]`.
    fn angular(&self) -> Vec<bool>;
}

/// Differential-drive robot with wheel-speed and pose-sensor noise.
#[derive(Debug, Clone)]
pub struct RobotPlant {
    pub params: RobotParams,
    pub trajectory: TrajectorySpec,
    meas_chol: Mat,
    noisy: bool,
}

impl RobotPlant {
    pub fn new(params: RobotParams, trajectory: TrajectorySpec, meas_noise: &Mat, noisy: bool) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(meas_noise.clone())
            .ok_or_else(|| Error::Validation("measurement noise covariance is not positive definite".into()))?;
        Ok(Self {
            params,
            trajectory,
            meas_chol: chol.l(),
            noisy,
        })
    }
}

fn std_normal(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

impl Plant for RobotPlant {
    fn initial_state(&self) -> Vector {
        RobotPose::default().to_vector()
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn command(&self, tick: Tick) -> Vector {
        self.trajectory.command(tick, &self.params).to_vector()
    }

    fn step(&self, x: &Vector, u: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let u = WheelSpeeds::from_vector(u);
        let n = std_normal(rng, 2);
        let w = if self.noisy {
            let q = input_noise_cov(u, self.params.delta);
            WheelSpeeds::new(q[(0, 0)].sqrt() * n[0], q[(1, 1)].sqrt() * n[1])
        } else {
            WheelSpeeds::default()
        };
        step_kinematics(RobotPose::from_vector(x), u, &self.params, w).to_vector()
    }

    fn measure(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let n = std_normal(rng, 3);
        let v = if self.noisy { &self.meas_chol * n } else { Vector::zeros(3) };
        full_state_measurement(RobotPose::from_vector(x), &v)
    }

    fn component_names(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "theta".into()]
    }

    fn angular(&self) -> Vec<bool> {
        vec![false, false, true]
    }
}

/// One estimator's output over a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub name: String,
    /// Posteriori estimate at every tick, starting with the initial one.
    pub states: Vec<GaussianState>,
    pub flops: u64,
    pub wall_time: Duration,
    pub discarded: u64,
    pub psd_violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub ticks: Vec<Tick>,
    pub truth: Vec<Vector>,
    /// Input applied by the plant over each step `k → k + 1`.
    pub applied: Vec<Vector>,
    pub components: Vec<String>,
    pub angular: Vec<bool>,
    pub filters: Vec<FilterTrace>,
}

impl TrialResult {
    pub fn filter(&self, name: &str) -> Option<&FilterTrace> {
        self.filters.iter().find(|f| f.name == name)
    }

    /// Estimation error of `filter` at tick index `t`, angles wrapped.
    pub fn error(&self, filter: usize, t: usize) -> Vector {
        let est = &self.filters[filter].states[t].mean;
        let mut e = est - &self.truth[t];
        for (c, wrap) in self.angular.iter().enumerate() {
            if *wrap {
                e[c] = wrap_angle(e[c]);
            }
        }
        e
    }

    /// Equality of every simulated number, ignoring wall-clock timings.
    pub fn same_numbers(&self, other: &TrialResult) -> bool {
        let strip = |r: &TrialResult| {
            let mut r = r.clone();
            for f in &mut r.filters {
                f.wall_time = Duration::ZERO;
            }
            r
        };
        strip(self) == strip(other)
    }
}

/// Named estimator paired with its wall-clock accumulator.
struct Slot {
    est: Box<dyn Estimator>,
    name: String,
    states: Vec<GaussianState>,
    wall: Duration,
}

/// Seeds used by one trial.
#[derive(Debug, Clone, Copy)]
pub struct TrialSeeds {
    pub ctrl: u64,
    pub meas: u64,
    pub plant: u64,
    pub sensor: u64,
}

impl TrialSeeds {
    pub fn derive(master_seed: u64, trial_index: usize, ctrl_seed: u64, meas_seed: u64) -> Self {
        let trial = derive_seed(master_seed, trial_index as u64);
        Self {
            ctrl: derive_seed(trial ^ ctrl_seed, 1),
            meas: derive_seed(trial ^ meas_seed, 2),
            plant: derive_seed(trial, 3),
            sensor: derive_seed(trial, 4),
        }
    }
}

/// Runs the closed loop for `length` ticks.
pub fn simulate<P: Plant>(
    plant: &P,
    estimators: Vec<(String, Box<dyn Estimator>)>,
    ctrl: ChannelConfig,
    meas: ChannelConfig,
    length: u64,
    seeds: TrialSeeds,
    trial_index: usize,
) -> Result<TrialResult> {
    let mut ctrl_ch: Channel<Vector> = Channel::new(ChannelConfig { seed: seeds.ctrl, ..ctrl });
    let mut meas_ch: Channel<Vector> = Channel::new(ChannelConfig { seed: seeds.meas, ..meas });
    let mut plant_rng = ChaCha8Rng::seed_from_u64(seeds.plant);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(seeds.sensor);

    let mut slots: Vec<Slot> = estimators
        .into_iter()
        .map(|(name, est)| Slot {
            states: vec![est.state().clone()],
            est,
            name,
            wall: Duration::ZERO,
        })
        .collect();

    let mut x = plant.initial_state();
    let mut ticks = vec![0];
    let mut truth = vec![x.clone()];
    let mut applied_log = Vec::with_capacity(length as usize);
    let mut last_applied: Option<Tick> = None;

    for k in 0..length {
        ctrl_ch.send(plant.command(k), k)?;
        let applied = match ctrl_ch.poll(k)?.pop() {
            Some(p) if last_applied.is_none_or(|t| p.origin_tick > t) => {
                last_applied = Some(p.origin_tick);
                p.payload
            }
            _ => Vector::zeros(plant.input_dim()),
        };
        x = plant.step(&x, &applied, &mut plant_rng);
        let z = plant.measure(&x, &mut sensor_rng);
        meas_ch.send(z, k + 1)?;
        let packets: Vec<MeasurementPacket> = meas_ch
            .poll(k + 1)?
            .into_iter()
            .map(|p| MeasurementPacket::new(p.payload, p.origin_tick, k + 1))
            .collect();

        for slot in &mut slots {
            let started = Instant::now();
            slot.est.predict(&applied)?;
            slot.est.fuse(&packets)?;
            slot.wall += started.elapsed();
            slot.states.push(slot.est.state().clone());
        }
        ticks.push(k + 1);
        truth.push(x.clone());
        applied_log.push(applied);
    }

    Ok(TrialResult {
        trial_index,
        ticks,
        truth,
        applied: applied_log,
        components: plant.component_names(),
        angular: plant.angular(),
        filters: slots
            .into_iter()
            .map(|s| FilterTrace {
                flops: s.est.flops(),
                discarded: s.est.discarded(),
                psd_violations: s.est.psd_violations(),
                name: s.name,
                states: s.states,
                wall_time: s.wall,
            })
            .collect(),
    })
}

/// Builds the estimators a robot scenario asks for.
pub fn robot_estimators(cfg: &ScenarioConfig) -> Result<Vec<(String, Box<dyn Estimator>)>> {
    let process = DiffDriveModel::new(cfg.robot);
    let sensor = PoseSensor::new(cfg.meas_noise.clone());
    let initial = GaussianState::new(
        RobotPose::default().to_vector(),
        Mat::from_diagonal(&Vector::from_row_slice(&cfg.init_cov)),
        0,
    )?;
    let options = FilterOptions {
        history_depth: cfg.history_depth,
        ..FilterOptions::default()
    };
    cfg.filters
        .iter()
        .map(|kind| {
            let est: Box<dyn Estimator> = match kind {
                FilterKind::PoEkf => Box::new(PoEkf::new(process, sensor.clone(), initial.clone(), options)),
                FilterKind::Ekf => Box::new(NaiveEkf::new(process, sensor.clone(), initial.clone())),
                FilterKind::Refilter => Box::new(Refilter::new(process, sensor.clone(), initial.clone(), cfg.buffer_slots)?),
                FilterKind::Oracle => Box::new(AugmentedKf::new(
                    process,
                    sensor.clone(),
                    initial.clone(),
                    cfg.meas_channel.delay_max as usize,
                )),
            };
            Ok((kind.as_str().to_string(), est))
        })
        .collect()
}

/// Runs trial `trial_index` of a robot scenario. Deterministic in
/// `(cfg, trial_index)` apart from the recorded wall-clock times.
pub fn run_trial(cfg: &ScenarioConfig, trial_index: usize) -> Result<TrialResult> {
    cfg.validate()?;
    let plant = RobotPlant::new(cfg.robot, cfg.trajectory, &cfg.meas_noise, cfg.truth_noise)?;
    let seeds = TrialSeeds::derive(cfg.master_seed, trial_index, cfg.ctrl_channel.seed, cfg.meas_channel.seed);
    simulate(
        &plant,
        robot_estimators(cfg)?,
        cfg.ctrl_channel,
        cfg.meas_channel,
        cfg.length,
        seeds,
        trial_index,
    )
}
