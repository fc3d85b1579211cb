//! Optimal linear filtering with delayed, possibly lost measurements.
//!
//! A measurement taken at origin tick `i` that reaches the estimator at tick
//! `k = i + m` is fused into the present estimate with the gain
//!
//! ```text
//! K = F · Pᵢ⁻ · Hᵢᵀ · (Hᵢ · Pᵢ⁻ · Hᵢᵀ + Rᵢ)⁻¹,   F = ∏ⱼ₌₁ᵐ Aₖ₋ⱼ (I − Kₖ₋ⱼ Hₖ₋ⱼ)
//! ```
//!
//! where the residual is formed against the priori estimate stored for tick
//! `i`. The relevance factor `F` carries the stale innovation forward through
//! every transition and correction applied since the measurement was taken.
//! With `m = 0` the update is the ordinary Kalman data update.
//!
//! The per-tick quantities the product needs (`A`, `K`, `H`, and the priori
//! estimate) live in a bounded [`StepHistory`].

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::filter::Estimator;
use crate::linalg::{is_symmetric_psd, project_psd, symmetrize, FlopCounter, Mat, Vector, DEFAULT_COND_BOUND};
use crate::Tick;

/// Default number of past steps kept for relevance-factor products.
pub const DEFAULT_HISTORY_DEPTH: usize = 50;

/// Minimum eigenvalue tolerated after a covariance update.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Estimate mean and covariance at a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Vector,
    pub cov: Mat,
    pub tick: Tick,
}

impl GaussianState {
    pub fn new(mean: Vector, cov: Mat, tick: Tick) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Config(format!(
                "covariance is {}x{} but mean has length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !is_symmetric_psd(&cov, 1e-9, PSD_TOLERANCE) {
            return Err(Error::Validation(
                "initial covariance is not symmetric positive semidefinite".into(),
            ));
        }
        Ok(Self { mean, cov, tick })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// History entry for one tick: the transition out of it, the gain applied at
/// it, the measurement matrix used, and the priori estimate it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub tick: Tick,
    pub a_mat: Mat,
    /// Zero when nothing was fused at this tick.
    pub gain: Mat,
    /// Identity placeholder when nothing was fused at this tick.
    pub h_mat: Mat,
    pub priori: GaussianState,
}

impl StepRecord {
    fn fused(&self) -> bool {
        self.gain.iter().any(|v| *v != 0.0)
    }
}

/// A measurement as seen by the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPacket {
    pub value: Vector,
    pub origin_tick: Tick,
    pub arrival_tick: Tick,
    pub arrived: bool,
}

impl MeasurementPacket {
    pub fn new(value: Vector, origin_tick: Tick, arrival_tick: Tick) -> Self {
        Self {
            value,
            origin_tick,
            arrival_tick,
            arrived: true,
        }
    }

    /// A placeholder for a packet that never arrived.
    pub fn lost(dim: usize, origin_tick: Tick, arrival_tick: Tick) -> Self {
        Self {
            value: Vector::zeros(dim),
            origin_tick,
            arrival_tick,
            arrived: false,
        }
    }

    pub fn delay(&self) -> Result<u64> {
        self.arrival_tick.checked_sub(self.origin_tick).ok_or_else(|| {
            Error::Contract(format!(
                "packet arrives at tick {} before its origin tick {}",
                self.arrival_tick, self.origin_tick
            ))
        })
    }
}

/// A control input on its way to the actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPacket {
    pub value: Vector,
    pub origin_tick: Tick,
    /// `origin_tick + n + 1`: the tick whose state the input first affects.
    pub applied_tick: Tick,
    pub arrived: bool,
}

impl InputPacket {
    pub fn new(value: Vector, origin_tick: Tick, delay: u64, arrived: bool) -> Self {
        Self {
            value,
            origin_tick,
            applied_tick: origin_tick + delay + 1,
            arrived,
        }
    }

    /// `λ·u`: the input as actually applied by the plant.
    pub fn effective(&self) -> Vector {
        if self.arrived {
            self.value.clone()
        } else {
            Vector::zeros(self.value.len())
        }
    }
}

/// Bounded, gap-free record of past steps.
#[derive(Debug, Clone)]
pub struct StepHistory {
    records: VecDeque<StepRecord>,
    capacity: usize,
    evicted: u64,
}

impl StepHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            records: VecDeque::with_capacity(capacity + 1),
            capacity,
            evicted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn last_tick(&self) -> Option<Tick> {
        self.records.back().map(|r| r.tick)
    }

    pub fn get(&self, tick: Tick) -> Option<&StepRecord> {
        let first = self.records.front()?.tick;
        let idx = tick.checked_sub(first)? as usize;
        self.records.get(idx)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &StepRecord> {
        self.records.iter()
    }

    /// Appends `rec`, evicting the oldest record once depth exceeds capacity.
    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.last_tick() {
            if rec.tick != last + 1 {
                return Err(Error::Contract(format!(
                    "step record for tick {} does not follow tick {last}",
                    rec.tick
                )));
            }
        }
        self.records.push_back(rec);
        while self.records.len() > self.capacity {
            self.records.pop_front();
            self.evicted += 1;
        }
        Ok(())
    }

    /// Relevance factor for a measurement that arrives at `arrival_tick`
    /// after `m` ticks of delay. `None` stands for the identity (`m = 0`).
    pub(crate) fn relevance(
        &self,
        arrival_tick: Tick,
        m: u64,
        flops: &mut FlopCounter,
    ) -> Result<Option<Mat>> {
        if m == 0 {
            return Ok(None);
        }
        let depth = self.capacity.min(self.records.len());
        if m as usize > depth || m > arrival_tick {
            return Err(Error::StaleMeasurement {
                origin: arrival_tick.saturating_sub(m),
                delay: m,
                depth,
            });
        }
        if self.last_tick() != Some(arrival_tick - 1) {
            return Err(Error::Contract(format!(
                "history ends at tick {:?}, expected {}",
                self.last_tick(),
                arrival_tick - 1
            )));
        }
        let mut f: Option<Mat> = None;
        // j = 1..m walks backwards from the most recent record.
        for rec in self.records.iter().rev().take(m as usize) {
            let factor = if rec.fused() {
                let kh = flops.mul(&rec.gain, &rec.h_mat);
                let n = kh.nrows();
                let i_kh = flops.sub(&Mat::identity(n, n), &kh);
                flops.mul(&rec.a_mat, &i_kh)
            } else {
                rec.a_mat.clone()
            };
            f = Some(match f {
                None => factor,
                Some(acc) => flops.mul(&acc, &factor),
            });
        }
        Ok(f)
    }
}

/// Appends `rec` to `history`. See [`StepHistory::push`].
pub fn record_step(history: &mut StepHistory, rec: StepRecord) -> Result<()> {
    history.push(rec)
}

/// What to do when a delayed update leaves the covariance indefinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndefinitePolicy {
    /// Return a numerical error.
    Fail,
    /// Leave the estimate at its priori and record no gain for the tick.
    Reject,
    /// Keep the mean update and replace the covariance by its nearest PSD
    /// matrix.
    Project,
}

/// Tunables shared by the delayed-measurement filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub history_depth: usize,
    pub cond_bound: f64,
    pub on_indefinite: IndefinitePolicy,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            history_depth: DEFAULT_HISTORY_DEPTH,
            cond_bound: DEFAULT_COND_BOUND,
            on_indefinite: IndefinitePolicy::Reject,
        }
    }
}

/// Time update `x⁻ = A·x⁺ + B·u`, `P⁻ = A·P⁺·Aᵀ + Q`.
pub fn predict_linear(
    prev: &GaussianState,
    a_mat: &Mat,
    b_mat: &Mat,
    u_eff: &Vector,
    q_mat: &Mat,
    flops: &mut FlopCounter,
) -> Result<GaussianState> {
    let s = prev.dim();
    check_shape("A", a_mat, s, s)?;
    check_shape("Q", q_mat, s, s)?;
    check_shape("B", b_mat, s, u_eff.len())?;
    if !is_symmetric_psd(q_mat, 1e-9, PSD_TOLERANCE) {
        return Err(Error::Validation(
            "process noise covariance is not symmetric positive semidefinite".into(),
        ));
    }
    let ax = flops.mul_vec(a_mat, &prev.mean);
    let mean = if u_eff.is_empty() {
        ax
    } else {
        let bu = flops.mul_vec(b_mat, u_eff);
        flops.add_vec(&ax, &bu)
    };
    let ap = flops.mul(a_mat, &prev.cov);
    let apa = flops.mul_t(&ap, a_mat);
    let mut cov = flops.add(&apa, q_mat);
    symmetrize(&mut cov);
    Ok(GaussianState {
        mean,
        cov,
        tick: prev.tick + 1,
    })
}

/// Relevance factor `F = ∏ⱼ₌₁ᵐ Aₖ₋ⱼ (I − Kₖ₋ⱼ Hₖ₋ⱼ)` for a measurement of
/// delay `m` arriving at `arrival_tick`. Ticks without a fused measurement
/// contribute their transition alone.
pub fn relevance_factor(
    history: &StepHistory,
    arrival_tick: Tick,
    m: u64,
    flops: &mut FlopCounter,
) -> Result<Mat> {
    let f = history.relevance(arrival_tick, m, flops)?;
    Ok(match f {
        Some(f) => f,
        None => {
            let s = history
                .iter()
                .next_back()
                .map(|r| r.a_mat.nrows())
                .unwrap_or(0);
            Mat::identity(s, s)
        }
    })
}

/// Standard Kalman gain at the origin tick, `Pᵢ⁻·Hᵢᵀ·Sᵢ⁻¹`.
pub fn standard_gain(
    priori_i: &GaussianState,
    h_i: &Mat,
    r_i: &Mat,
    cond_bound: f64,
    flops: &mut FlopCounter,
) -> Result<Mat> {
    let s = priori_i.dim();
    check_shape("H", h_i, h_i.nrows(), s)?;
    check_shape("R", r_i, h_i.nrows(), h_i.nrows())?;
    let hp = flops.mul(h_i, &priori_i.cov);
    let (_, gain) = gain_from_hp(&hp, h_i, r_i, None, cond_bound, priori_i.tick, flops)?;
    Ok(gain)
}

/// Delayed-measurement gain `K = F·Pᵢ⁻·Hᵢᵀ·(Hᵢ·Pᵢ⁻·Hᵢᵀ + Rᵢ)⁻¹`.
pub fn delayed_gain(
    f_mat: &Mat,
    priori_i: &GaussianState,
    h_i: &Mat,
    r_i: &Mat,
    cond_bound: f64,
    flops: &mut FlopCounter,
) -> Result<Mat> {
    let s = priori_i.dim();
    check_shape("F", f_mat, s, s)?;
    check_shape("H", h_i, h_i.nrows(), s)?;
    check_shape("R", r_i, h_i.nrows(), h_i.nrows())?;
    let hp = flops.mul(h_i, &priori_i.cov);
    let (_, gain) = gain_from_hp(&hp, h_i, r_i, Some(f_mat), cond_bound, priori_i.tick, flops)?;
    Ok(gain)
}

/// Returns `(K*, K)` where `K* = (H·P)ᵀ·S⁻¹` and `K = F·K*`.
fn gain_from_hp(
    hp: &Mat,
    h: &Mat,
    r: &Mat,
    f: Option<&Mat>,
    cond_bound: f64,
    tick: Tick,
    flops: &mut FlopCounter,
) -> Result<(Mat, Mat)> {
    let hph = flops.mul_t(hp, h);
    let s = flops.add(&hph, r);
    let s_inv = flops.spd_inverse(&s, cond_bound, tick)?;
    // P is symmetric, so P·Hᵀ = (H·P)ᵀ.
    let k_std = flops.mul(&hp.transpose(), &s_inv);
    let k = match f {
        Some(f) => flops.mul(f, &k_std),
        None => k_std.clone(),
    };
    Ok((k_std, k))
}

/// Result of fusing one packet.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedUpdate {
    pub posteriori: GaussianState,
    /// Gain applied; zero when the packet carried no information.
    pub gain: Mat,
    /// Measurement matrix used at the origin tick.
    pub h_mat: Mat,
    /// The literal update would have left the covariance indefinite; see
    /// [`IndefinitePolicy`] for what was done instead.
    pub indefinite: bool,
}

/// Linearized quantities of a measurement at its origin tick.
pub(crate) struct OriginTerms<'a> {
    pub priori_i: &'a GaussianState,
    pub h_i: Mat,
    pub r_i: Mat,
    pub residual: Vector,
}

/// Locates the priori estimate at the packet's origin tick: the stored
/// record for `m > 0`, the present estimate for `m = 0`.
pub(crate) fn origin_priori<'a>(
    priori_k: &'a GaussianState,
    pkt: &MeasurementPacket,
    history: &'a StepHistory,
) -> Result<&'a GaussianState> {
    if pkt.arrival_tick != priori_k.tick {
        return Err(Error::Contract(format!(
            "packet arrival tick {} does not match estimate tick {}",
            pkt.arrival_tick, priori_k.tick
        )));
    }
    let m = pkt.delay()?;
    if m == 0 {
        return Ok(priori_k);
    }
    let depth = history.capacity().min(history.len());
    history
        .get(pkt.origin_tick)
        .filter(|_| m as usize <= depth)
        .map(|r| &r.priori)
        .ok_or(Error::StaleMeasurement {
            origin: pkt.origin_tick,
            delay: m,
            depth,
        })
}

/// Shared correction step for the linear filter and its linearized form.
pub(crate) fn fuse_at_origin(
    priori_k: &GaussianState,
    arrival_tick: Tick,
    m: u64,
    terms: OriginTerms<'_>,
    history: &StepHistory,
    options: &FilterOptions,
    flops: &mut FlopCounter,
) -> Result<DelayedUpdate> {
    let cond_bound = options.cond_bound;
    let f = history.relevance(arrival_tick, m, flops)?;
    let OriginTerms {
        priori_i,
        h_i,
        r_i,
        residual,
    } = terms;
    let hp = flops.mul(&h_i, &priori_i.cov);
    let (_, gain) = gain_from_hp(&hp, &h_i, &r_i, f.as_ref(), cond_bound, arrival_tick, flops)?;

    let correction = flops.mul_vec(&gain, &residual);
    let mean = flops.add_vec(&priori_k.mean, &correction);
    let khp = flops.mul(&gain, &hp);
    let reduction = match &f {
        Some(f) => flops.mul_t(&khp, f),
        None => khp,
    };
    let mut cov = flops.sub(&priori_k.cov, &reduction);
    symmetrize(&mut cov);
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical(arrival_tick, "posteriori covariance is not finite"));
    }
    let min_eig = crate::linalg::min_eigenvalue(&cov);
    let indefinite = min_eig <= -PSD_TOLERANCE;
    if indefinite {
        match options.on_indefinite {
            IndefinitePolicy::Fail => {
                return Err(Error::numerical(
                    arrival_tick,
                    format!("posteriori covariance lost positive semidefiniteness (min eigenvalue {min_eig:.3e})"),
                ));
            }
            IndefinitePolicy::Reject => {
                let (s, z) = gain.shape();
                return Ok(DelayedUpdate {
                    posteriori: priori_k.clone(),
                    gain: Mat::zeros(s, z),
                    h_mat: Mat::identity(z, s),
                    indefinite,
                });
            }
            IndefinitePolicy::Project => {
                // Eigendecomposition plus reconstruction.
                let n = cov.nrows() as u64;
                flops.charge(11 * n * n * n);
                cov = project_psd(&cov);
            }
        }
    }
    Ok(DelayedUpdate {
        posteriori: GaussianState {
            mean,
            cov,
            tick: priori_k.tick,
        },
        gain,
        h_mat: h_i,
        indefinite,
    })
}

/// Data update for a (possibly delayed, possibly lost) measurement of a
/// linear system. The residual is taken against the stored priori at the
/// origin tick; a lost packet leaves the estimate untouched.
pub fn update_delayed(
    priori_k: &GaussianState,
    pkt: &MeasurementPacket,
    history: &StepHistory,
    h_i: &Mat,
    r_i: &Mat,
    options: &FilterOptions,
    flops: &mut FlopCounter,
) -> Result<DelayedUpdate> {
    let s = priori_k.dim();
    let z = pkt.value.len();
    check_shape("H", h_i, z, s)?;
    check_shape("R", r_i, z, z)?;
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
    let predicted = flops.mul_vec(h_i, &priori_i.mean);
    let residual = flops.sub_vec(&pkt.value, &predicted);
    let terms = OriginTerms {
        priori_i,
        h_i: h_i.clone(),
        r_i: r_i.clone(),
        residual,
    };
    fuse_at_origin(priori_k, pkt.arrival_tick, m, terms, history, options, flops)
}

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Config(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Time-invariant linear system `x' = A x + B u + w`, `z = H x + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub h: Mat,
    pub r: Mat,
}

impl LinearSystem {
    pub fn new(a: Mat, b: Mat, q: Mat, h: Mat, r: Mat) -> Result<Self> {
        let s = a.nrows();
        check_shape("A", &a, s, s)?;
        check_shape("B", &b, s, b.ncols())?;
        check_shape("Q", &q, s, s)?;
        check_shape("H", &h, h.nrows(), s)?;
        check_shape("R", &r, h.nrows(), h.nrows())?;
        if !is_symmetric_psd(&q, 1e-9, PSD_TOLERANCE) || !is_symmetric_psd(&r, 1e-9, PSD_TOLERANCE) {
            return Err(Error::Validation("noise covariances must be symmetric PSD".into()));
        }
        Ok(Self { a, b, q, h, r })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone)]
struct Pending {
    priori: GaussianState,
    gain: Mat,
    h_mat: Mat,
}

impl Pending {
    fn fresh(priori: GaussianState, z: usize) -> Self {
        let s = priori.dim();
        Self {
            priori,
            gain: Mat::zeros(s, z),
            h_mat: Mat::identity(z, s),
        }
    }
}

/// Delayed-measurement filter for a [`LinearSystem`].
#[derive(Debug, Clone)]
pub struct LinearPoFilter {
    system: LinearSystem,
    state: GaussianState,
    pending: Pending,
    history: StepHistory,
    options: FilterOptions,
    flops: FlopCounter,
    discarded: u64,
    psd_violations: u64,
}

impl LinearPoFilter {
    pub fn new(system: LinearSystem, initial: GaussianState, options: FilterOptions) -> Self {
        let z = system.meas_dim();
        Self {
            pending: Pending::fresh(initial.clone(), z),
            history: StepHistory::new(options.history_depth),
            system,
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

impl Estimator for LinearPoFilter {
    fn name(&self) -> &str {
        "linear-po"
    }

    fn predict(&mut self, u_applied: &Vector) -> Result<()> {
        let next = predict_linear(
            &self.state,
            &self.system.a,
            &self.system.b,
            u_applied,
            &self.system.q,
            &mut self.flops,
        )?;
        let z = self.system.meas_dim();
        let done = std::mem::replace(&mut self.pending, Pending::fresh(next.clone(), z));
        self.history.push(StepRecord {
            tick: done.priori.tick,
            a_mat: self.system.a.clone(),
            gain: done.gain,
            h_mat: done.h_mat,
            priori: done.priori,
        })?;
        self.state = next;
        Ok(())
    }

    fn fuse(&mut self, packets: &[MeasurementPacket]) -> Result<()> {
        for pkt in crate::filter::in_origin_order(packets) {
            match update_delayed(
                &self.state,
                pkt,
                &self.history,
                &self.system.h,
                &self.system.r,
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

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn sstate(mean: f64, cov: f64, tick: Tick) -> GaussianState {
        GaussianState::new(Vector::from_element(1, mean), scalar(cov), tick).unwrap()
    }

    fn rec(tick: Tick, a: f64, k: f64, h: f64) -> StepRecord {
        StepRecord {
            tick,
            a_mat: scalar(a),
            gain: scalar(k),
            h_mat: scalar(h),
            priori: sstate(0.0, 1.0, tick),
        }
    }

    #[test]
    fn predict_scalar_random_walk() {
        let mut f = FlopCounter::new();
        let out = predict_linear(
            &sstate(0.0, 1.0, 0),
            &scalar(1.0),
            &scalar(1.0),
            &Vector::from_element(1, 0.0),
            &scalar(1.0),
            &mut f,
        )
        .unwrap();
        assert_eq!(out.mean[0], 0.0);
        assert_eq!(out.cov[(0, 0)], 2.0);
        assert_eq!(out.tick, 1);
    }

    #[test]
    fn predict_identity_keeps_state() {
        let prev = GaussianState::new(
            Vector::from_vec(vec![1.0, -2.0]),
            Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            7,
        )
        .unwrap();
        let out = predict_linear(
            &prev,
            &Mat::identity(2, 2),
            &Mat::zeros(2, 1),
            &Vector::from_element(1, 3.0),
            &Mat::zeros(2, 2),
            &mut FlopCounter::new(),
        )
        .unwrap();
        assert_eq!(out.mean, prev.mean);
        assert_eq!(out.cov, prev.cov);
        assert_eq!(out.tick, 8);
    }

    #[test]
    fn lost_input_propagates_zero() {
        let pkt = InputPacket::new(Vector::from_element(1, 5.0), 0, 2, false);
        assert_eq!(pkt.applied_tick, 3);
        let out = predict_linear(
            &sstate(3.0, 1.0, 0),
            &scalar(2.0),
            &scalar(1.0),
            &pkt.effective(),
            &scalar(0.0),
            &mut FlopCounter::new(),
        )
        .unwrap();
        assert_eq!(out.mean[0], 6.0);
    }

    #[test]
    fn predict_rejects_bad_inputs() {
        let mut f = FlopCounter::new();
        let prev = sstate(0.0, 1.0, 0);
        let err = predict_linear(&prev, &Mat::identity(2, 2), &scalar(1.0), &Vector::zeros(1), &scalar(1.0), &mut f);
        assert!(matches!(err, Err(Error::Config(_))));
        let err = predict_linear(&prev, &scalar(1.0), &scalar(1.0), &Vector::zeros(1), &scalar(-1.0), &mut f);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn relevance_factor_cases() {
        let mut f = FlopCounter::new();
        let mut h = StepHistory::new(50);
        assert_eq!(relevance_factor(&h, 0, 0, &mut f).unwrap().nrows(), 0);

        h.push(rec(0, 2.0, 0.5, 1.0)).unwrap();
        // 2·(1 − 0.5·1) = 1
        assert_eq!(relevance_factor(&h, 1, 1, &mut f).unwrap()[(0, 0)], 1.0);
        assert_eq!(relevance_factor(&h, 1, 0, &mut f).unwrap()[(0, 0)], 1.0);

        let mut h = StepHistory::new(50);
        h.push(rec(0, 1.0, 0.0, 1.0)).unwrap();
        h.push(rec(1, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(relevance_factor(&h, 2, 2, &mut f).unwrap()[(0, 0)], 1.0);
        assert!(matches!(
            relevance_factor(&h, 2, 3, &mut f),
            Err(Error::StaleMeasurement { delay: 3, .. })
        ));
    }

    #[test]
    fn relevance_factor_product_order() {
        // Non-commuting 2x2 factors: F = A₁ · A₂ with A₁ the most recent.
        let a_old = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let a_new = Mat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let mut h = StepHistory::new(5);
        for (t, a) in [(0, &a_old), (1, &a_new)] {
            h.push(StepRecord {
                tick: t,
                a_mat: a.clone(),
                gain: Mat::zeros(2, 1),
                h_mat: Mat::identity(1, 2),
                priori: GaussianState::new(Vector::zeros(2), Mat::identity(2, 2), t).unwrap(),
            })
            .unwrap();
        }
        let f = relevance_factor(&h, 2, 2, &mut FlopCounter::new()).unwrap();
        assert_eq!(f, &a_new * &a_old);
    }

    #[test]
    fn delayed_gain_cases() {
        let mut f = FlopCounter::new();
        let p = sstate(0.0, 2.0, 0);
        let k = delayed_gain(&scalar(1.0), &p, &scalar(1.0), &scalar(1.0), DEFAULT_COND_BOUND, &mut f).unwrap();
        assert!((k[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let k = delayed_gain(&scalar(0.0), &p, &scalar(1.0), &scalar(1.0), DEFAULT_COND_BOUND, &mut f).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        let err = delayed_gain(&scalar(1.0), &sstate(0.0, 0.0, 3), &scalar(1.0), &scalar(0.0), DEFAULT_COND_BOUND, &mut f);
        assert!(matches!(err, Err(Error::Numerical { tick: 3, .. })));
    }

    #[test]
    fn lost_packet_is_inert() {
        let mut h = StepHistory::new(50);
        h.push(rec(0, 1.0, 0.0, 1.0)).unwrap();
        let priori = sstate(1.5, 0.7, 1);
        let pkt = MeasurementPacket::lost(1, 0, 1);
        let out = update_delayed(&priori, &pkt, &h, &scalar(1.0), &scalar(1.0), &FilterOptions::default(), &mut FlopCounter::new()).unwrap();
        assert_eq!(out.posteriori, priori);
        assert_eq!(out.gain[(0, 0)], 0.0);
    }

    #[test]
    fn update_contract_errors() {
        let h = StepHistory::new(50);
        let priori = sstate(0.0, 1.0, 5);
        let mut f = FlopCounter::new();
        let pkt = MeasurementPacket::new(Vector::from_element(1, 0.0), 4, 6);
        assert!(matches!(
            update_delayed(&priori, &pkt, &h, &scalar(1.0), &scalar(1.0), &FilterOptions::default(), &mut f),
            Err(Error::Contract(_))
        ));
        let pkt = MeasurementPacket::new(Vector::from_element(1, 0.0), 2, 5);
        assert!(matches!(
            update_delayed(&priori, &pkt, &h, &scalar(1.0), &scalar(1.0), &FilterOptions::default(), &mut f),
            Err(Error::StaleMeasurement { delay: 3, .. })
        ));
    }

    #[test]
    fn history_depth_and_eviction() {
        let mut h = StepHistory::new(50);
        h.push(rec(0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(h.len(), 1);
        for t in 1..50 {
            record_step(&mut h, rec(t, 1.0, 0.0, 1.0)).unwrap();
        }
        assert_eq!(h.len(), 50);
        assert_eq!(h.evicted(), 0);
        h.push(rec(50, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(h.len(), 50);
        assert_eq!(h.evicted(), 1);
        assert_eq!(h.iter().next().unwrap().tick, 1);
        assert!(matches!(h.push(rec(52, 1.0, 0.0, 1.0)), Err(Error::Contract(_))));
    }
}
