//! Two-wheeled differential-drive robot.
//!
//! Kinematics over one sampling period `ts`:
//!
//! ```text
//! x' = x + (R/2)·ts·(ωL + ωR)·cos θ
//! y' = y + (R/2)·ts·(ωL + ωR)·sin θ
//! θ' = θ + (R/L)·ts·(ωL − ωR)
//! ```
//!
//! Process noise perturbs the wheel speeds; the noise vector is ordered
//! `(wL, wR)` like [`WheelSpeeds`]. The sensor observes the full pose with
//! additive Gaussian noise.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{wrap_angle, Mat, Vector};
use crate::poekf::{MeasurementModel, ProcessModel};

pub const DEFAULT_WHEEL_RADIUS: f64 = 0.05;
pub const DEFAULT_WHEEL_BASE: f64 = 0.30;
pub const DEFAULT_TS: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.01;

/// Diagonal of the pose-sensor noise covariance `(x, y, θ)`.
pub const MEAS_NOISE_DIAG: [f64; 3] = [0.01, 0.01, 0.018];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn to_vector(self) -> Vector {
        Vector::from_vec(vec![self.x, self.y, self.theta])
    }

    pub fn from_vector(v: &Vector) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotParams {
    pub wheel_radius: f64,
    pub wheel_base: f64,
    pub ts: f64,
    pub delta: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            wheel_radius: DEFAULT_WHEEL_RADIUS,
            wheel_base: DEFAULT_WHEEL_BASE,
            ts: DEFAULT_TS,
            delta: DEFAULT_DELTA,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("wheel_radius", self.wheel_radius),
            ("wheel_base", self.wheel_base),
            ("ts", self.ts),
            ("delta", self.delta),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelSpeeds {
    pub omega_l: f64,
    pub omega_r: f64,
}

impl WheelSpeeds {
    pub fn new(omega_l: f64, omega_r: f64) -> Self {
        Self { omega_l, omega_r }
    }

    pub fn to_vector(self) -> Vector {
        Vector::from_vec(vec![self.omega_l, self.omega_r])
    }

    pub fn from_vector(v: &Vector) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.omega_l.is_finite() && self.omega_r.is_finite()
    }

    /// Wheel speeds producing forward speed `v` (m/s) and turn rate
    /// `theta_dot` (rad/s) under this model's sign convention.
    pub fn from_body_rates(v: f64, theta_dot: f64, params: &RobotParams) -> Self {
        let base = v / params.wheel_radius;
        let diff = theta_dot * params.wheel_base / (2.0 * params.wheel_radius);
        Self::new(base + diff, base - diff)
    }
}

/// Translational speed of the robot center, `(R/2)(ωL + ωR)`.
pub fn center_speed(u: WheelSpeeds, params: &RobotParams) -> f64 {
    0.5 * params.wheel_radius * (u.omega_l + u.omega_r)
}

/// One kinematic step with the wheel speeds perturbed by `w = (wL, wR)`.
pub fn step_kinematics(
    pose: RobotPose,
    u: WheelSpeeds,
    params: &RobotParams,
    w: WheelSpeeds,
) -> RobotPose {
    let wl = u.omega_l + w.omega_l;
    let wr = u.omega_r + w.omega_r;
    let r = params.wheel_radius;
    let ts = params.ts;
    let ds = 0.5 * r * ts * (wl + wr);
    RobotPose {
        x: pose.x + ds * pose.theta.cos(),
        y: pose.y + ds * pose.theta.sin(),
        theta: wrap_angle(pose.theta + r / params.wheel_base * ts * (wl - wr)),
    }
}

/// `∂f/∂x` at the estimate.
pub fn process_jacobian_state(pose_est: RobotPose, u: WheelSpeeds, params: &RobotParams) -> Mat {
    let tv = params.ts * center_speed(u, params);
    let (s, c) = pose_est.theta.sin_cos();
    #[rustfmt::skip]
    let a = Mat::from_row_slice(3, 3, &[
        1.0, 0.0, -tv * s,
        0.0, 1.0,  tv * c,
        0.0, 0.0,  1.0,
    ]);
    a
}

/// `∂f/∂w` at the estimate; columns are `(wL, wR)`.
pub fn process_jacobian_noise(pose_est: RobotPose, params: &RobotParams) -> Mat {
    let k = params.ts * params.wheel_radius;
    let (s, c) = pose_est.theta.sin_cos();
    let turn = k / params.wheel_base;
    #[rustfmt::skip]
    let w = Mat::from_row_slice(3, 2, &[
        0.5 * k * c, 0.5 * k * c,
        0.5 * k * s, 0.5 * k * s,
        turn,        -turn,
    ]);
    w
}

/// Wheel-speed noise covariance `diag(δ·ωR², δ·ωL²)`.
pub fn input_noise_cov(u: WheelSpeeds, delta: f64) -> Mat {
    Mat::from_diagonal(&Vector::from_vec(vec![
        delta * u.omega_r * u.omega_r,
        delta * u.omega_l * u.omega_l,
    ]))
}

/// `pose + v`.
pub fn full_state_measurement(pose_true: RobotPose, v: &Vector) -> Vector {
    Vector::from_vec(vec![pose_true.x + v[0], pose_true.y + v[1], pose_true.theta + v[2]])
}

pub fn meas_noise_cov() -> Mat {
    Mat::from_diagonal(&Vector::from_row_slice(&MEAS_NOISE_DIAG))
}

/// Measurement and measurement-noise Jacobians (`H = V = I`).
pub fn meas_jacobian() -> Mat {
    Mat::identity(3, 3)
}

/// Process model adapter for the filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffDriveModel {
    pub params: RobotParams,
}

impl DiffDriveModel {
    pub fn new(params: RobotParams) -> Self {
        Self { params }
    }
}

impl ProcessModel for DiffDriveModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn transition(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        step_kinematics(
            RobotPose::from_vector(x),
            WheelSpeeds::from_vector(u),
            &self.params,
            WheelSpeeds::from_vector(w),
        )
        .to_vector()
    }

    fn state_jacobian(&self, x: &Vector, u: &Vector) -> Mat {
        process_jacobian_state(RobotPose::from_vector(x), WheelSpeeds::from_vector(u), &self.params)
    }

    fn noise_jacobian(&self, x: &Vector, _u: &Vector) -> Mat {
        process_jacobian_noise(RobotPose::from_vector(x), &self.params)
    }

    fn noise_cov(&self, u: &Vector) -> Mat {
        input_noise_cov(WheelSpeeds::from_vector(u), self.params.delta)
    }

    fn normalize(&self, x: &mut Vector) {
        x[2] = wrap_angle(x[2]);
    }
}

/// Full-pose sensor with heading residuals wrapped to `(−π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSensor {
    pub r: Mat,
}

impl PoseSensor {
    pub fn new(r: Mat) -> Self {
        Self { r }
    }
}

impl Default for PoseSensor {
    fn default() -> Self {
        Self::new(meas_noise_cov())
    }
}

impl MeasurementModel for PoseSensor {
    fn meas_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        3
    }

    fn observe(&self, x: &Vector, v: &Vector) -> Vector {
        full_state_measurement(RobotPose::from_vector(x), v)
    }

    fn jacobian(&self, _x: &Vector) -> Mat {
        meas_jacobian()
    }

    fn noise_jacobian(&self, _x: &Vector) -> Mat {
        meas_jacobian()
    }

    fn noise_cov(&self) -> Mat {
        self.r.clone()
    }

    fn residual(&self, z: &Vector, predicted: &Vector) -> Vector {
        let mut r = z - predicted;
        r[2] = wrap_angle(r[2]);
        r
    }
}

/// Heading range check used by tests and the harness: `(−π, π]`.
pub fn heading_in_range(theta: f64) -> bool {
    theta > -PI && theta <= PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn p(r: f64, l: f64) -> RobotParams {
        RobotParams {
            wheel_radius: r,
            wheel_base: l,
            ts: 0.1,
            delta: 0.01,
        }
    }

    #[test]
    fn straight_step() {
        let out = step_kinematics(RobotPose::default(), WheelSpeeds::new(1.0, 1.0), &p(0.1, 0.5), WheelSpeeds::default());
        assert!((out.x - 0.01).abs() < 1e-15);
        assert_eq!(out.y, 0.0);
        assert_eq!(out.theta, 0.0);
    }

    #[test]
    fn zero_speed_is_stationary() {
        let pose = RobotPose::new(1.0, -2.0, 0.3);
        let out = step_kinematics(pose, WheelSpeeds::default(), &p(0.1, 0.5), WheelSpeeds::default());
        assert_eq!(out, pose);
    }

    #[test]
    fn pure_rotation_uses_left_minus_right() {
        let out = step_kinematics(RobotPose::default(), WheelSpeeds::new(1.0, -1.0), &p(0.1, 0.5), WheelSpeeds::default());
        assert_eq!(out.x, 0.0);
        assert_eq!(out.y, 0.0);
        assert!((out.theta - 0.04).abs() < 1e-15);
    }

    #[test]
    fn state_jacobian_entries() {
        // v_c = 1 with R = 0.1 needs ωL + ωR = 20.
        let a = process_jacobian_state(RobotPose::default(), WheelSpeeds::new(10.0, 10.0), &p(0.1, 0.5));
        assert!((a[(1, 2)] - 0.1).abs() < 1e-15);
        assert_eq!(a[(0, 2)], 0.0);
        let a = process_jacobian_state(RobotPose::new(0.0, 0.0, 1.0), WheelSpeeds::new(3.0, -3.0), &p(0.1, 0.5));
        assert_eq!(a, Mat::identity(3, 3));
    }

    #[test]
    fn noise_jacobian_entries() {
        let w = process_jacobian_noise(RobotPose::default(), &p(0.1, 0.5));
        assert!((w[(0, 0)] - 0.005).abs() < 1e-15);
        assert!((w[(0, 1)] - 0.005).abs() < 1e-15);
        assert!((w[(2, 0)] - 0.02).abs() < 1e-15);
        assert!((w[(2, 1)] + 0.02).abs() < 1e-15);
        let w = process_jacobian_noise(RobotPose::new(0.0, 0.0, FRAC_PI_2), &p(0.1, 0.5));
        assert!(w[(0, 0)].abs() < 1e-12 && w[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn input_noise_cov_cases() {
        let q = input_noise_cov(WheelSpeeds::new(1.0, 1.0), 0.01);
        assert_eq!(q, Mat::from_diagonal(&Vector::from_vec(vec![0.01, 0.01])));
        assert_eq!(input_noise_cov(WheelSpeeds::default(), 0.01), Mat::zeros(2, 2));
        let q = input_noise_cov(WheelSpeeds::new(1.0, 2.0), 0.01);
        assert!((q[(0, 0)] - 0.04).abs() < 1e-15);
        assert!((q[(1, 1)] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn measurement_and_noise() {
        let pose = RobotPose::new(0.5, -1.0, 2.0);
        assert_eq!(full_state_measurement(pose, &Vector::zeros(3)), pose.to_vector());
        assert_eq!(meas_noise_cov(), Mat::from_diagonal(&Vector::from_vec(vec![0.01, 0.01, 0.018])));
    }

    #[test]
    fn body_rates_round_trip() {
        let params = RobotParams::default();
        let u = WheelSpeeds::from_body_rates(0.2, 0.1, &params);
        assert!((center_speed(u, &params) - 0.2).abs() < 1e-12);
        let out = step_kinematics(RobotPose::default(), u, &params, WheelSpeeds::default());
        assert!((out.theta - 0.1 * params.ts).abs() < 1e-12);
    }

    #[test]
    fn heading_wraps() {
        let params = p(0.1, 0.5);
        let out = step_kinematics(RobotPose::new(0.0, 0.0, 3.13), WheelSpeeds::new(1.0, -1.0), &params, WheelSpeeds::default());
        assert!(heading_in_range(out.theta));
        assert!(out.theta < 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(p(0.0, 0.5).validate().is_err());
        assert!(p(0.1, -1.0).validate().is_err());
        assert!(RobotParams::default().validate().is_ok());
    }
}
