//! Scenario configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! name = sim1
//! ts_seconds = 0.1
//! trajectory = arc
//! traj_speed = 0.2
//! ctrl.delay_min = 1
//! ctrl.delay_max = 8
//! ctrl.loss_prob = 0.01
//! meas_noise = 0.01, 0.01, 0.018
//! filters = poekf,ekf,refilter
//! ```
//!
//! Keys missing from a file keep the values of [`ScenarioConfig::default`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::DEFAULT_BUFFER_SLOTS;
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::estimator::DEFAULT_HISTORY_DEPTH;
use crate::harness::FilterKind;
use crate::linalg::{is_symmetric_psd, Mat, Vector};
use crate::robot::{RobotParams, WheelSpeeds, MEAS_NOISE_DIAG};
use crate::Tick;

/// Wheel-command profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectorySpec {
    /// Constant forward speed, no turning.
    Line { speed: f64 },
    /// Constant forward speed and turn rate.
    Arc { speed: f64, turn_rate: f64 },
    /// Heading follows `amplitude · sin(2π t / period)`.
    Sine { speed: f64, amplitude: f64, period: f64 },
}

impl TrajectorySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TrajectorySpec::Line { .. } => "line",
            TrajectorySpec::Arc { .. } => "arc",
            TrajectorySpec::Sine { .. } => "sine",
        }
    }

    pub fn speed(&self) -> f64 {
        match *self {
            TrajectorySpec::Line { speed } | TrajectorySpec::Arc { speed, .. } | TrajectorySpec::Sine { speed, .. } => {
                speed
            }
        }
    }

    /// Wheel command issued by the controller at `tick`.
    pub fn command(&self, tick: Tick, params: &RobotParams) -> WheelSpeeds {
        let t = tick as f64 * params.ts;
        let (speed, turn) = match *self {
            TrajectorySpec::Line { speed } => (speed, 0.0),
            TrajectorySpec::Arc { speed, turn_rate } => (speed, turn_rate),
            TrajectorySpec::Sine {
                speed,
                amplitude,
                period,
            } => {
                let w = 2.0 * PI / period;
                (speed, amplitude * w * (w * t).cos())
            }
        };
        WheelSpeeds::from_body_rates(speed, turn, params)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TrajectorySpec::Line { speed } => speed.is_finite(),
            TrajectorySpec::Arc { speed, turn_rate } => speed.is_finite() && turn_rate.is_finite(),
            TrajectorySpec::Sine {
                speed,
                amplitude,
                period,
            } => speed.is_finite() && amplitude.is_finite() && period.is_finite() && period > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid {} trajectory parameters", self.kind())))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    /// Wheel radius, wheel base, sampling period and input-noise coefficient.
    pub robot: RobotParams,
    pub trajectory: TrajectorySpec,
    pub ctrl_channel: ChannelConfig,
    pub meas_channel: ChannelConfig,
    /// Pose-sensor noise covariance (3×3).
    pub meas_noise: Mat,
    /// Diagonal of the initial estimate covariance.
    pub init_cov: [f64; 3],
    /// When false the plant and sensor are noiseless (the filters keep their
    /// nominal noise models).
    pub truth_noise: bool,
    pub runs: usize,
    pub master_seed: u64,
    /// Trajectory length in ticks.
    pub length: u64,
    pub filters: Vec<FilterKind>,
    /// Step-history depth of the delayed-measurement filter.
    pub history_depth: usize,
    /// Measurement-buffer slots of the re-filtering baseline.
    pub buffer_slots: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            robot: RobotParams::default(),
            trajectory: TrajectorySpec::Arc {
                speed: 0.2,
                turn_rate: 0.1,
            },
            ctrl_channel: ChannelConfig::ideal(1),
            meas_channel: ChannelConfig::ideal(2),
            meas_noise: Mat::from_diagonal(&Vector::from_row_slice(&MEAS_NOISE_DIAG)),
            init_cov: [0.01, 0.01, 0.01],
            truth_noise: true,
            runs: 100,
            master_seed: 1,
            length: 600,
            filters: vec![FilterKind::PoEkf, FilterKind::Ekf, FilterKind::Refilter],
            history_depth: DEFAULT_HISTORY_DEPTH,
            buffer_slots: DEFAULT_BUFFER_SLOTS,
        }
    }
}

fn net(delay_min: u64, delay_max: u64, loss_prob: f64, seed: u64) -> ChannelConfig {
    ChannelConfig {
        delay_min,
        delay_max,
        loss_prob,
        seed,
    }
}

impl ScenarioConfig {
    pub const BUILTIN_NAMES: [&'static str; 4] = ["sim1", "sim2", "local", "vpn"];

    /// Delays of 100–800 ms (1–8 ticks) and 1% loss on both links.
    pub fn sim1() -> Self {
        Self {
            name: "sim1".into(),
            ctrl_channel: net(1, 8, 0.01, 11),
            meas_channel: net(1, 8, 0.01, 12),
            ..Self::default()
        }
    }

    /// Delays of 800–1500 ms (8–15 ticks), 10% loss, sinusoidal path.
    pub fn sim2() -> Self {
        Self {
            name: "sim2".into(),
            trajectory: TrajectorySpec::Sine {
                speed: 0.2,
                amplitude: 0.5,
                period: 20.0,
            },
            ctrl_channel: net(8, 15, 0.1, 21),
            meas_channel: net(8, 15, 0.1, 22),
            ..Self::default()
        }
    }

    /// Local-network link: 3–5 ticks, 1.5% loss.
    pub fn local() -> Self {
        Self {
            name: "local".into(),
            ctrl_channel: net(3, 5, 0.015, 31),
            meas_channel: net(3, 5, 0.015, 32),
            ..Self::default()
        }
    }

    /// VPN link: 6–8 ticks, 2% loss.
    pub fn vpn() -> Self {
        Self {
            name: "vpn".into(),
            ctrl_channel: net(6, 8, 0.02, 41),
            meas_channel: net(6, 8, 0.02, 42),
            ..Self::default()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "sim1" => Some(Self::sim1()),
            "sim2" => Some(Self::sim2()),
            "local" => Some(Self::local()),
            "vpn" => Some(Self::vpn()),
            _ => None,
        }
    }

    /// A built-in scenario name, or else a path to a config file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(cfg) = Self::builtin(name_or_path) {
            return Ok(cfg);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::Validation(format!(
                "'{name_or_path}' is neither a built-in scenario ({}) nor an existing file",
                Self::BUILTIN_NAMES.join(", ")
            )));
        }
        Self::from_file(path)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::Validation("runs must be at least 1".into()));
        }
        if self.length < 1 {
            return Err(Error::Validation("length must be at least 1 tick".into()));
        }
        let p = &self.robot;
        for (name, v) in [("wheel_radius", p.wheel_radius), ("wheel_base", p.wheel_base), ("ts_seconds", p.ts)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if !(p.delta.is_finite() && p.delta >= 0.0) {
            return Err(Error::Validation(format!("delta must be non-negative, got {}", p.delta)));
        }
        if self.history_depth < 1 {
            return Err(Error::Validation("history_depth must be at least 1".into()));
        }
        if self.buffer_slots < 1 {
            return Err(Error::Validation("buffer_slots must be at least 1".into()));
        }
        let max_delay = self.history_depth as u64;
        self.ctrl_channel.validate(max_delay)?;
        self.meas_channel.validate(max_delay)?;
        self.trajectory.validate()?;
        if self.meas_noise.shape() != (3, 3) || !is_symmetric_psd(&self.meas_noise, 1e-12, 0.0) {
            return Err(Error::Validation("meas_noise must be a symmetric PSD 3x3 matrix".into()));
        }
        if nalgebra::Cholesky::new(self.meas_noise.clone()).is_none() {
            return Err(Error::Validation("meas_noise must be positive definite".into()));
        }
        if self.init_cov.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation("init_cov entries must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut kind: Option<String> = None;
        let (mut speed, mut turn_rate, mut amplitude, mut period) = (None, None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Validation(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected 'key = value', got '{line}'")))?;
            let num = |v: &str| -> Result<f64> { v.parse::<f64>().map_err(|_| bad(format!("{key}: '{v}' is not a number"))) };
            let int = |v: &str| -> Result<u64> {
                v.parse::<u64>()
                    .map_err(|_| bad(format!("{key}: '{v}' is not a non-negative integer")))
            };
            match key {
                "name" => cfg.name = value.to_string(),
                "ts_seconds" => cfg.robot.ts = num(value)?,
                "wheel_radius" => cfg.robot.wheel_radius = num(value)?,
                "wheel_base" => cfg.robot.wheel_base = num(value)?,
                "delta" => cfg.robot.delta = num(value)?,
                "meas_noise" => cfg.meas_noise = parse_cov(value).map_err(|e| bad(format!("meas_noise: {e}")))?,
                "init_cov" => {
                    let v = parse_list(value).map_err(|e| bad(format!("init_cov: {e}")))?;
                    cfg.init_cov = <[f64; 3]>::try_from(v.as_slice())
                        .map_err(|_| bad("init_cov needs exactly three values".into()))?;
                }
                "truth_noise" => {
                    cfg.truth_noise = value
                        .parse::<bool>()
                        .map_err(|_| bad(format!("truth_noise: '{value}' is not true/false")))?
                }
                "trajectory" => kind = Some(value.to_string()),
                "traj_speed" => speed = Some(num(value)?),
                "traj_turn_rate" => turn_rate = Some(num(value)?),
                "traj_amplitude" => amplitude = Some(num(value)?),
                "traj_period" => period = Some(num(value)?),
                "ctrl.delay_min" => cfg.ctrl_channel.delay_min = int(value)?,
                "ctrl.delay_max" => cfg.ctrl_channel.delay_max = int(value)?,
                "ctrl.loss_prob" => cfg.ctrl_channel.loss_prob = num(value)?,
                "ctrl.seed" => cfg.ctrl_channel.seed = int(value)?,
                "meas.delay_min" => cfg.meas_channel.delay_min = int(value)?,
                "meas.delay_max" => cfg.meas_channel.delay_max = int(value)?,
                "meas.loss_prob" => cfg.meas_channel.loss_prob = num(value)?,
                "meas.seed" => cfg.meas_channel.seed = int(value)?,
                "runs" => cfg.runs = int(value)? as usize,
                "master_seed" => cfg.master_seed = int(value)?,
                "length" => cfg.length = int(value)?,
                "filters" => cfg.filters = FilterKind::parse_list(value).map_err(|e| bad(e.to_string()))?,
                "history_depth" => cfg.history_depth = int(value)? as usize,
                "buffer_slots" => cfg.buffer_slots = int(value)? as usize,
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }

        let current = cfg.trajectory;
        let speed = speed.unwrap_or(current.speed());
        let kind = kind.unwrap_or_else(|| current.kind().to_string());
        cfg.trajectory = match kind.as_str() {
            "line" => TrajectorySpec::Line { speed },
            "arc" => TrajectorySpec::Arc {
                speed,
                turn_rate: turn_rate.unwrap_or(match current {
                    TrajectorySpec::Arc { turn_rate, .. } => turn_rate,
                    _ => 0.1,
                }),
            },
            "sine" => TrajectorySpec::Sine {
                speed,
                amplitude: amplitude.unwrap_or(0.5),
                period: period.unwrap_or(20.0),
            },
            other => {
                return Err(Error::Validation(format!(
                    "unknown trajectory '{other}' (expected line, arc or sine)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the file format accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.robot;
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "ts_seconds = {}", p.ts);
        let _ = writeln!(s, "wheel_radius = {}", p.wheel_radius);
        let _ = writeln!(s, "wheel_base = {}", p.wheel_base);
        let _ = writeln!(s, "delta = {}", p.delta);
        let _ = writeln!(
            s,
            "meas_noise = {}",
            self.meas_noise.transpose().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(
            s,
            "init_cov = {}",
            self.init_cov.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(s, "truth_noise = {}", self.truth_noise);
        let _ = writeln!(s, "trajectory = {}", self.trajectory.kind());
        let _ = writeln!(s, "traj_speed = {}", self.trajectory.speed());
        match self.trajectory {
            TrajectorySpec::Line { .. } => {}
            TrajectorySpec::Arc { turn_rate, .. } => {
                let _ = writeln!(s, "traj_turn_rate = {turn_rate}");
            }
            TrajectorySpec::Sine { amplitude, period, .. } => {
                let _ = writeln!(s, "traj_amplitude = {amplitude}");
                let _ = writeln!(s, "traj_period = {period}");
            }
        }
        for (prefix, ch) in [("ctrl", &self.ctrl_channel), ("meas", &self.meas_channel)] {
            let _ = writeln!(s, "{prefix}.delay_min = {}", ch.delay_min);
            let _ = writeln!(s, "{prefix}.delay_max = {}", ch.delay_max);
            let _ = writeln!(s, "{prefix}.loss_prob = {}", ch.loss_prob);
            let _ = writeln!(s, "{prefix}.seed = {}", ch.seed);
        }
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "length = {}", self.length);
        let _ = writeln!(
            s,
            "filters = {}",
            self.filters.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "history_depth = {}", self.history_depth);
        let _ = writeln!(s, "buffer_slots = {}", self.buffer_slots);
        s
    }
}

fn parse_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("'{}' is not a number", v.trim())))
        .collect()
}

/// Three values give a diagonal matrix, nine a full row-major matrix.
fn parse_cov(value: &str) -> std::result::Result<Mat, String> {
    let v = parse_list(value)?;
    match v.len() {
        3 => Ok(Mat::from_diagonal(&Vector::from_vec(v))),
        9 => Ok(Mat::from_row_slice(3, 3, &v)),
        n => Err(format!("expected 3 or 9 values, got {n}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_match_published_ranges() {
        let s1 = ScenarioConfig::sim1();
        assert_eq!((s1.meas_channel.delay_min, s1.meas_channel.delay_max), (1, 8));
        assert_eq!((s1.ctrl_channel.delay_min, s1.ctrl_channel.delay_max), (1, 8));
        assert_eq!(s1.meas_channel.loss_prob, 0.01);
        let s2 = ScenarioConfig::sim2();
        assert_eq!((s2.meas_channel.delay_min, s2.meas_channel.delay_max), (8, 15));
        assert_eq!(s2.ctrl_channel.loss_prob, 0.1);
        assert_eq!(s2.trajectory.kind(), "sine");
        assert_eq!(s2.buffer_slots, 50);
        let l = ScenarioConfig::local();
        assert_eq!((l.meas_channel.delay_min, l.meas_channel.delay_max, l.meas_channel.loss_prob), (3, 5, 0.015));
        let v = ScenarioConfig::vpn();
        assert_eq!((v.meas_channel.delay_min, v.meas_channel.delay_max, v.meas_channel.loss_prob), (6, 8, 0.02));
        for name in ScenarioConfig::BUILTIN_NAMES {
            let cfg = ScenarioConfig::builtin(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.robot.ts, 0.1);
            assert_ne!(cfg.ctrl_channel.seed, cfg.meas_channel.seed);
        }
    }

    #[test]
    fn text_round_trip() {
        for name in ScenarioConfig::BUILTIN_NAMES {
            let cfg = ScenarioConfig::builtin(name).unwrap();
            let back = ScenarioConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn parse_overrides_and_errors() {
        let cfg = ScenarioConfig::parse(
            "# test\nname = t\ntrajectory = line\ntraj_speed = 0.3\nruns = 3\nmeas.delay_max = 4\nfilters = ekf\n",
        )
        .unwrap();
        assert_eq!(cfg.name, "t");
        assert_eq!(cfg.trajectory, TrajectorySpec::Line { speed: 0.3 });
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.meas_channel.delay_max, 4);
        assert_eq!(cfg.filters, vec![FilterKind::Ekf]);

        assert!(ScenarioConfig::parse("bogus = 1").is_err());
        assert!(ScenarioConfig::parse("runs = 0").is_err());
        assert!(ScenarioConfig::parse("runs = many").is_err());
        assert!(ScenarioConfig::parse("meas.delay_min = 9\nmeas.delay_max = 3").is_err());
        assert!(ScenarioConfig::parse("ctrl.loss_prob = 1.5").is_err());
        assert!(ScenarioConfig::parse("meas.delay_max = 51").is_err());
        assert!(ScenarioConfig::parse("just a line").is_err());
        assert!(ScenarioConfig::parse("trajectory = spiral").is_err());
    }

    #[test]
    fn arc_command_turns() {
        let params = RobotParams::default();
        let u = TrajectorySpec::Arc {
            speed: 0.2,
            turn_rate: 0.1,
        }
        .command(5, &params);
        assert!((crate::robot::center_speed(u, &params) - 0.2).abs() < 1e-12);
        assert!(u.omega_l > u.omega_r);
    }
}
