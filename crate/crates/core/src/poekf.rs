//! Extended form of the delayed-measurement filter for nonlinear models.
//!
//! The process is linearized around the previous posteriori estimate and the
//! measurement around the stored priori estimate at the measurement's origin
//! tick; the linear delayed update is then applied to the linearized pair.
//! The transition Jacobian evaluated during each prediction is what enters
//! later relevance-factor products.

use crate::error::{Error, Result};
use crate::estimator::{
    fuse_at_origin, origin_priori, DelayedUpdate, FilterOptions, GaussianState, LinearSystem,
    MeasurementPacket, OriginTerms, StepHistory, StepRecord,
};
use crate::filter::{in_origin_order, Estimator};
use crate::linalg::{symmetrize, FlopCounter, Mat, Vector};

/// `x' = f(x, u, w)` with its Jacobians and noise covariance.
pub trait ProcessModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn transition(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector;
    /// `∂f/∂x` at `(x, u, 0)`.
    fn state_jacobian(&self, x: &Vector, u: &Vector) -> Mat;
    /// `∂f/∂w` at `(x, u, 0)`.
    fn noise_jacobian(&self, x: &Vector, u: &Vector) -> Mat;
    fn noise_cov(&self, u: &Vector) -> Mat;

    /// Brings a state back to its canonical range (e.g. angle wrapping).
    fn normalize(&self, _x: &mut Vector) {}
}

/// `z = h(x, v)` with its Jacobians and noise covariance.
pub trait MeasurementModel: Send + Sync {
    fn meas_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn observe(&self, x: &Vector, v: &Vector) -> Vector;
    /// `∂h/∂x` at `(x, 0)`.
    fn jacobian(&self, x: &Vector) -> Mat;
    /// `∂h/∂v` at `(x, 0)`.
    fn noise_jacobian(&self, x: &Vector) -> Mat;
    fn noise_cov(&self) -> Mat;

    /// `z − ẑ`, with any component wrapping the model needs.
    fn residual(&self, z: &Vector, predicted: &Vector) -> Vector {
        z - predicted
    }
}

impl ProcessModel for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn noise_dim(&self) -> usize {
        self.a.nrows()
    }

    fn transition(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        let ax = &self.a * x;
        let x1 = if u.is_empty() { ax } else { ax + &self.b * u };
        x1 + w
    }

    fn state_jacobian(&self, _x: &Vector, _u: &Vector) -> Mat {
        self.a.clone()
    }

    fn noise_jacobian(&self, _x: &Vector, _u: &Vector) -> Mat {
        Mat::identity(self.a.nrows(), self.a.nrows())
    }

    fn noise_cov(&self, _u: &Vector) -> Mat {
        self.q.clone()
    }
}

impl MeasurementModel for LinearSystem {
    fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    fn noise_dim(&self) -> usize {
        self.h.nrows()
    }

    fn observe(&self, x: &Vector, v: &Vector) -> Vector {
        &self.h * x + v
    }

    fn jacobian(&self, _x: &Vector) -> Mat {
        self.h.clone()
    }

    fn noise_jacobian(&self, _x: &Vector) -> Mat {
        Mat::identity(self.h.nrows(), self.h.nrows())
    }

    fn noise_cov(&self) -> Mat {
        self.r.clone()
    }
}

/// Prediction `x⁻ = f(x⁺, u, 0)`, `P⁻ = A·P⁺·Aᵀ + W·Q·Wᵀ`. Returns the
/// predicted state together with the transition Jacobian `A` used.
pub fn poekf_predict<P: ProcessModel + ?Sized>(
    prev: &GaussianState,
    u_eff: &Vector,
    model: &P,
    flops: &mut FlopCounter,
) -> Result<(GaussianState, Mat)> {
    let s = model.state_dim();
    if prev.dim() != s {
        return Err(Error::Config(format!(
            "state has dimension {}, process model expects {s}",
            prev.dim()
        )));
    }
    let zero_w = Vector::zeros(model.noise_dim());
    let mut mean = model.transition(&prev.mean, u_eff, &zero_w);
    model.normalize(&mut mean);
    let a = model.state_jacobian(&prev.mean, u_eff);
    let w = model.noise_jacobian(&prev.mean, u_eff);
    let q = model.noise_cov(u_eff);
    if a.shape() != (s, s) || w.shape() != (s, zero_w.len()) || q.shape() != (zero_w.len(), zero_w.len()) {
        return Err(Error::Config(format!(
            "process model Jacobians have inconsistent shapes at tick {}",
            prev.tick
        )));
    }
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical(prev.tick + 1, "process model produced a non-finite state"));
    }
    let ap = flops.mul(&a, &prev.cov);
    let apa = flops.mul_t(&ap, &a);
    let wq = flops.mul(&w, &q);
    let wqw = flops.mul_t(&wq, &w);
    let mut cov = flops.add(&apa, &wqw);
    symmetrize(&mut cov);
    Ok((
        GaussianState {
            mean,
            cov,
            tick: prev.tick + 1,
        },
        a,
    ))
}

/// Correction with a measurement that may be delayed or lost. `H`, `V` and
/// the predicted measurement are all evaluated at the stored priori estimate
/// of the packet's origin tick.
pub fn poekf_update<M: MeasurementModel + ?Sized>(
    priori_k: &GaussianState,
    pkt: &MeasurementPacket,
    history: &StepHistory,
    model: &M,
    options: &FilterOptions,
    flops: &mut FlopCounter,
) -> Result<DelayedUpdate> {
    let s = priori_k.dim();
    let z = model.meas_dim();
    if pkt.value.len() != z {
        return Err(Error::Config(format!(
            "measurement has length {}, model expects {z}",
            pkt.value.len()
        )));
    }
    let priori_i = origin_priori(priori_k, pkt, history)?;
    if !pkt.arrived {
        return Ok(DelayedUpdate {
            posteriori: priori_k.clone(),
            gain: Mat::zeros(s, z),
            h_mat: Mat::identity(z, s),
            indefinite: false,
        });
    }
    let m = pkt.delay()?;
    let x_i = &priori_i.mean;
    let h_i = model.jacobian(x_i);
    let v_i = model.noise_jacobian(x_i);
    let vr = flops.mul(&v_i, &model.noise_cov());
    let r_eff = flops.mul_t(&vr, &v_i);
    let predicted = model.observe(x_i, &Vector::zeros(model.noise_dim()));
    let residual = model.residual(&pkt.value, &predicted);
    let terms = OriginTerms {
        priori_i,
        h_i,
        r_i: r_eff,
        residual,
    };
    fuse_at_origin(priori_k, pkt.arrival_tick, m, terms, history, options, flops)
}

#[derive(Debug, Clone)]
struct Pending {
    priori: GaussianState,
    gain: Mat,
    h_mat: Mat,
}

/// Past-observation-based extended Kalman filter.
#[derive(Debug, Clone)]
pub struct PoEkf<P, M> {
    process: P,
    sensor: M,
    state: GaussianState,
    pending: Pending,
    history: StepHistory,
    options: FilterOptions,
    flops: FlopCounter,
    discarded: u64,
    psd_violations: u64,
}

impl<P: ProcessModel, M: MeasurementModel> PoEkf<P, M> {
    pub fn new(process: P, sensor: M, initial: GaussianState, options: FilterOptions) -> Self {
        let s = initial.dim();
        let z = sensor.meas_dim();
        Self {
            pending: Pending {
                priori: initial.clone(),
                gain: Mat::zeros(s, z),
                h_mat: Mat::identity(z, s),
            },
            history: StepHistory::new(options.history_depth),
            process,
            sensor,
            state: initial,
            options,
            flops: FlopCounter::new(),
            discarded: 0,
            psd_violations: 0,
        }
    }

    pub fn history(&self) -> &StepHistory {
        &self.history
    }
}

impl<P: ProcessModel, M: MeasurementModel> Estimator for PoEkf<P, M> {
    fn name(&self) -> &str {
        "poekf"
    }

    fn predict(&mut self, u_applied: &Vector) -> Result<()> {
        let (next, a) = poekf_predict(&self.state, u_applied, &self.process, &mut self.flops)?;
        let s = next.dim();
        let z = self.sensor.meas_dim();
        let done = std::mem::replace(
            &mut self.pending,
            Pending {
                priori: next.clone(),
                gain: Mat::zeros(s, z),
                h_mat: Mat::identity(z, s),
            },
        );
        self.history.push(StepRecord {
            tick: done.priori.tick,
            a_mat: a,
            gain: done.gain,
            h_mat: done.h_mat,
            priori: done.priori,
        })?;
        self.state = next;
        Ok(())
    }

    fn fuse(&mut self, packets: &[MeasurementPacket]) -> Result<()> {
        for pkt in in_origin_order(packets) {
            match poekf_update(
                &self.state,
                pkt,
                &self.history,
                &self.sensor,
                &self.options,
                &mut self.flops,
            ) {
                Ok(upd) => {
                    self.psd_violations += upd.indefinite as u64;
                    if pkt.arrived {
                        self.pending.gain = upd.gain;
                        self.pending.h_mat = upd.h_mat;
                    }
                    self.state = upd.posteriori;
                    self.process.normalize(&mut self.state.mean);
                }
                Err(Error::StaleMeasurement { .. }) => self.discarded += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn state(&self) -> &GaussianState {
        &self.state
    }

    fn flops(&self) -> u64 {
        self.flops.total()
    }

    fn discarded(&self) -> u64 {
        self.discarded
    }

    fn psd_violations(&self) -> u64 {
        self.psd_violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{predict_linear, update_delayed, LinearPoFilter};

    fn scalar_system() -> LinearSystem {
        let s = |v| Mat::from_element(1, 1, v);
        LinearSystem::new(s(0.9), s(1.0), s(0.2), s(1.0), s(0.5)).unwrap()
    }

    fn sstate(mean: f64, cov: f64, tick: u64) -> GaussianState {
        GaussianState::new(Vector::from_element(1, mean), Mat::from_element(1, 1, cov), tick).unwrap()
    }

    #[test]
    fn linear_predict_matches_core() {
        let sys = scalar_system();
        let prev = sstate(1.25, 0.4, 3);
        let u = Vector::from_element(1, -0.3);
        let (a, _) = poekf_predict(&prev, &u, &sys, &mut FlopCounter::new()).unwrap();
        let b = predict_linear(&prev, &sys.a, &sys.b, &u, &sys.q, &mut FlopCounter::new()).unwrap();
        assert!((a.mean[0] - b.mean[0]).abs() < 1e-12);
        assert!((a.cov[(0, 0)] - b.cov[(0, 0)]).abs() < 1e-12);
        assert_eq!(a.tick, b.tick);
    }

    #[test]
    fn lost_packet_leaves_priori() {
        let sys = scalar_system();
        let mut hist = StepHistory::new(50);
        hist.push(StepRecord {
            tick: 0,
            a_mat: sys.a.clone(),
            gain: Mat::zeros(1, 1),
            h_mat: Mat::identity(1, 1),
            priori: sstate(0.0, 1.0, 0),
        })
        .unwrap();
        let priori = sstate(0.3, 0.8, 1);
        let pkt = MeasurementPacket::lost(1, 0, 1);
        let out = poekf_update(&priori, &pkt, &hist, &sys, &FilterOptions::default(), &mut FlopCounter::new()).unwrap();
        assert_eq!(out.posteriori, priori);
    }

    #[test]
    fn scalar_delayed_update_matches_core() {
        let sys = scalar_system();
        let mut po = PoEkf::new(sys.clone(), sys.clone(), sstate(0.0, 1.0, 0), FilterOptions::default());
        let mut lin = LinearPoFilter::new(sys.clone(), sstate(0.0, 1.0, 0), FilterOptions::default());
        let u = Vector::from_element(1, 0.5);
        for f in [&mut po as &mut dyn Estimator, &mut lin] {
            f.predict(&u).unwrap();
            f.fuse(&[MeasurementPacket::new(Vector::from_element(1, 0.7), 1, 1)]).unwrap();
            f.predict(&u).unwrap();
            f.predict(&u).unwrap();
            f.fuse(&[MeasurementPacket::new(Vector::from_element(1, 1.1), 2, 3)]).unwrap();
        }
        assert!((po.state().mean[0] - lin.state().mean[0]).abs() < 1e-12);
        assert!((po.state().cov[(0, 0)] - lin.state().cov[(0, 0)]).abs() < 1e-12);

        // Single update against the free function as well.
        let pkt = MeasurementPacket::new(Vector::from_element(1, 0.2), 2, 3);
        let a = update_delayed(lin.state(), &pkt, lin.history(), &sys.h, &sys.r, &FilterOptions::default(), &mut FlopCounter::new()).unwrap();
        let b = poekf_update(lin.state(), &pkt, lin.history(), &sys, &FilterOptions::default(), &mut FlopCounter::new()).unwrap();
        assert!((a.posteriori.mean[0] - b.posteriori.mean[0]).abs() < 1e-12);
    }
}
