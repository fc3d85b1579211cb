//! Comparison estimators.
//!
//! * [`NaiveEkf`] fuses every arriving measurement as if it had just been
//!   taken.
//! * [`Refilter`] keeps a bounded buffer of timestamped measurements and,
//!   whenever one arrives out of sequence, re-runs a standard EKF from the
//!   start of its window with every buffered measurement placed at its true
//!   origin tick.
//! * [`AugmentedKf`] stacks the present state with the `D` previous ones so a
//!   measurement delayed by `m ≤ D` ticks becomes an ordinary measurement of
//!   block `m`. On linear systems this is the exact optimal estimator.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::estimator::{GaussianState, MeasurementPacket};
use crate::filter::{in_origin_order, Estimator};
use crate::linalg::{symmetrize, FlopCounter, Mat, Vector, DEFAULT_COND_BOUND};
use crate::poekf::{MeasurementModel, ProcessModel};
use crate::Tick;

/// Default measurement-buffer size of the re-filtering estimator.
pub const DEFAULT_BUFFER_SLOTS: usize = 50;

/// Standard EKF prediction.
pub fn ekf_predict<P: ProcessModel + ?Sized>(
    state: &GaussianState,
    u: &Vector,
    process: &P,
    flops: &mut FlopCounter,
) -> Result<GaussianState> {
    let w0 = Vector::zeros(process.noise_dim());
    let mut mean = process.transition(&state.mean, u, &w0);
    process.normalize(&mut mean);
    let a = process.state_jacobian(&state.mean, u);
    let w = process.noise_jacobian(&state.mean, u);
    let q = process.noise_cov(u);
    let ap = flops.mul(&a, &state.cov);
    let apa = flops.mul_t(&ap, &a);
    let wq = flops.mul(&w, &q);
    let wqw = flops.mul_t(&wq, &w);
    let mut cov = flops.add(&apa, &wqw);
    symmetrize(&mut cov);
    Ok(GaussianState {
        mean,
        cov,
        tick: state.tick + 1,
    })
}

/// Standard EKF correction with measurement `z` taken at `state.tick`.
pub fn ekf_update<P: ProcessModel + ?Sized, M: MeasurementModel + ?Sized>(
    state: &GaussianState,
    z: &Vector,
    process: &P,
    sensor: &M,
    cond_bound: f64,
    flops: &mut FlopCounter,
) -> Result<GaussianState> {
    let h = sensor.jacobian(&state.mean);
    let v = sensor.noise_jacobian(&state.mean);
    let predicted = sensor.observe(&state.mean, &Vector::zeros(sensor.noise_dim()));
    let residual = sensor.residual(z, &predicted);
    let vr = flops.mul(&v, &sensor.noise_cov());
    let r = flops.mul_t(&vr, &v);
    let hp = flops.mul(&h, &state.cov);
    let hph = flops.mul_t(&hp, &h);
    let s = flops.add(&hph, &r);
    let s_inv = flops.spd_inverse(&s, cond_bound, state.tick)?;
    let k = flops.mul(&hp.transpose(), &s_inv);
    let dx = flops.mul_vec(&k, &residual);
    let mut mean = flops.add_vec(&state.mean, &dx);
    process.normalize(&mut mean);
    let khp = flops.mul(&k, &hp);
    let mut cov = flops.sub(&state.cov, &khp);
    symmetrize(&mut cov);
    Ok(GaussianState {
        mean,
        cov,
        tick: state.tick,
    })
}

/// One delay-ignoring EKF cycle: predict with `u_eff`, then fuse `pkt` (if
/// any) as though it were taken at the present tick.
pub fn naive_ekf_step<P: ProcessModel + ?Sized, M: MeasurementModel + ?Sized>(
    state: &GaussianState,
    u_eff: &Vector,
    pkt: Option<&MeasurementPacket>,
    process: &P,
    sensor: &M,
    flops: &mut FlopCounter,
) -> Result<GaussianState> {
    let priori = ekf_predict(state, u_eff, process, flops)?;
    match pkt {
        Some(p) if p.arrived => ekf_update(&priori, &p.value, process, sensor, DEFAULT_COND_BOUND, flops),
        _ => Ok(priori),
    }
}

#[derive(Debug, Clone)]
pub struct NaiveEkf<P, M> {
    process: P,
    sensor: M,
    state: GaussianState,
    cond_bound: f64,
    flops: FlopCounter,
}

impl<P: ProcessModel, M: MeasurementModel> NaiveEkf<P, M> {
    pub fn new(process: P, sensor: M, initial: GaussianState) -> Self {
        Self {
            process,
            sensor,
            state: initial,
            cond_bound: DEFAULT_COND_BOUND,
            flops: FlopCounter::new(),
        }
    }
}

impl<P: ProcessModel, M: MeasurementModel> Estimator for NaiveEkf<P, M> {
    fn name(&self) -> &str {
        "ekf"
    }

    fn predict(&mut self, u_applied: &Vector) -> Result<()> {
        self.state = ekf_predict(&self.state, u_applied, &self.process, &mut self.flops)?;
        Ok(())
    }

    fn fuse(&mut self, packets: &[MeasurementPacket]) -> Result<()> {
        for pkt in in_origin_order(packets) {
            if pkt.arrived {
                self.state = ekf_update(
                    &self.state,
                    &pkt.value,
                    &self.process,
                    &self.sensor,
                    self.cond_bound,
                    &mut self.flops,
                )?;
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
        0
    }
}

/// Timestamped measurements ordered by origin tick.
#[derive(Debug, Clone)]
pub struct MeasurementBuffer {
    capacity: usize,
    entries: VecDeque<(Tick, Vector)>,
}

impl MeasurementBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("measurement buffer needs at least one slot".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts after any entries with the same origin.
    pub fn insert(&mut self, origin: Tick, z: Vector) {
        let pos = self.entries.partition_point(|(t, _)| *t <= origin);
        self.entries.insert(pos, (origin, z));
    }

    pub fn oldest(&self) -> Option<Tick> {
        self.entries.front().map(|(t, _)| *t)
    }

    pub fn over_capacity(&self) -> bool {
        self.entries.len() > self.capacity
    }

    fn pop_through(&mut self, tick: Tick) -> Vec<Vector> {
        let mut out = Vec::new();
        while matches!(self.entries.front(), Some((t, _)) if *t <= tick) {
            out.push(self.entries.pop_front().unwrap().1);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Tick, Vector)> {
        self.entries.iter()
    }
}

/// Buffered re-filtering estimator.
///
/// The window spans `anchor.tick..=current.tick` with at most `capacity + 1`
/// ticks. `anchor` is final: every accepted measurement with origin at or
/// before it has been folded in, so measurements older than the anchor are
/// discarded.
#[derive(Debug, Clone)]
pub struct Refilter<P, M> {
    process: P,
    sensor: M,
    cond_bound: f64,
    anchor: GaussianState,
    inputs: VecDeque<Vector>,
    buffer: MeasurementBuffer,
    current: GaussianState,
    flops: FlopCounter,
    discarded: u64,
}

impl<P: ProcessModel, M: MeasurementModel> Refilter<P, M> {
    pub fn new(process: P, sensor: M, initial: GaussianState, capacity: usize) -> Result<Self> {
        Ok(Self {
            process,
            sensor,
            cond_bound: DEFAULT_COND_BOUND,
            anchor: initial.clone(),
            inputs: VecDeque::new(),
            buffer: MeasurementBuffer::new(capacity)?,
            current: initial,
            flops: FlopCounter::new(),
            discarded: 0,
        })
    }

    pub fn buffer(&self) -> &MeasurementBuffer {
        &self.buffer
    }

    pub fn anchor_tick(&self) -> Tick {
        self.anchor.tick
    }

    fn window(&self) -> u64 {
        self.current.tick - self.anchor.tick
    }

    fn advance_anchor(&mut self) -> Result<()> {
        let u = self
            .inputs
            .pop_front()
            .ok_or_else(|| Error::Contract("re-filter anchor caught up with the present".into()))?;
        let mut next = ekf_predict(&self.anchor, &u, &self.process, &mut self.flops)?;
        for z in self.buffer.pop_through(next.tick) {
            next = ekf_update(&next, &z, &self.process, &self.sensor, self.cond_bound, &mut self.flops)?;
        }
        self.anchor = next;
        Ok(())
    }

    fn rerun(&mut self) -> Result<()> {
        let mut state = self.anchor.clone();
        let mut pending = self.buffer.iter().peekable();
        for u in &self.inputs {
            state = ekf_predict(&state, u, &self.process, &mut self.flops)?;
            while let Some((_, z)) = pending.next_if(|(t, _)| *t == state.tick) {
                state = ekf_update(&state, z, &self.process, &self.sensor, self.cond_bound, &mut self.flops)?;
            }
        }
        self.current = state;
        Ok(())
    }
}

impl<P: ProcessModel, M: MeasurementModel> Estimator for Refilter<P, M> {
    fn name(&self) -> &str {
        "refilter"
    }

    fn predict(&mut self, u_applied: &Vector) -> Result<()> {
        self.current = ekf_predict(&self.current, u_applied, &self.process, &mut self.flops)?;
        self.inputs.push_back(u_applied.clone());
        while self.window() > self.buffer.capacity() as u64 + 1 {
            self.advance_anchor()?;
        }
        Ok(())
    }

    fn fuse(&mut self, packets: &[MeasurementPacket]) -> Result<()> {
        let mut rerun = false;
        for pkt in in_origin_order(packets) {
            if !pkt.arrived {
                continue;
            }
            if pkt.arrival_tick != self.current.tick {
                return Err(Error::Contract(format!(
                    "packet arrival tick {} does not match estimate tick {}",
                    pkt.arrival_tick, self.current.tick
                )));
            }
            let delay = pkt.delay()?;
            if delay > self.buffer.capacity() as u64 || pkt.origin_tick <= self.anchor.tick {
                self.discarded += 1;
                continue;
            }
            self.buffer.insert(pkt.origin_tick, pkt.value.clone());
            if delay == 0 && !rerun {
                self.current = ekf_update(
                    &self.current,
                    &pkt.value,
                    &self.process,
                    &self.sensor,
                    self.cond_bound,
                    &mut self.flops,
                )?;
            } else {
                rerun = true;
            }
            while self.buffer.over_capacity() {
                let oldest = self.buffer.oldest().expect("buffer over capacity is non-empty");
                while self.anchor.tick < oldest {
                    self.advance_anchor()?;
                }
            }
        }
        if rerun {
            self.rerun()?;
        }
        Ok(())
    }

    fn state(&self) -> &GaussianState {
        &self.current
    }

    fn flops(&self) -> u64 {
        self.flops.total()
    }

    fn discarded(&self) -> u64 {
        self.discarded
    }
}

/// Augmented-state filter over `[xₖ, xₖ₋₁, …, xₖ₋D]`.
#[derive(Debug, Clone)]
pub struct AugmentedKf<P, M> {
    process: P,
    sensor: M,
    depth: usize,
    dim: usize,
    aug: GaussianState,
    present: GaussianState,
    cond_bound: f64,
    flops: FlopCounter,
}

impl<P: ProcessModel, M: MeasurementModel> AugmentedKf<P, M> {
    /// Every past block starts as a copy of `initial` (fully correlated).
    pub fn new(process: P, sensor: M, initial: GaussianState, max_delay: usize) -> Self {
        let s = initial.dim();
        let blocks = max_delay + 1;
        let n = s * blocks;
        let mut mean = Vector::zeros(n);
        let mut cov = Mat::zeros(n, n);
        for i in 0..blocks {
            mean.rows_mut(i * s, s).copy_from(&initial.mean);
            for j in 0..blocks {
                cov.view_mut((i * s, j * s), (s, s)).copy_from(&initial.cov);
            }
        }
        Self {
            process,
            sensor,
            depth: max_delay,
            dim: s,
            aug: GaussianState {
                mean,
                cov,
                tick: initial.tick,
            },
            present: initial,
            cond_bound: DEFAULT_COND_BOUND,
            flops: FlopCounter::new(),
        }
    }

    pub fn augmented(&self) -> &GaussianState {
        &self.aug
    }

    fn refresh_present(&mut self) {
        let s = self.dim;
        self.present = GaussianState {
            mean: self.aug.mean.rows(0, s).into_owned(),
            cov: self.aug.cov.view((0, 0), (s, s)).into_owned(),
            tick: self.aug.tick,
        };
    }

    fn normalize_blocks(&self, mean: &mut Vector) {
        let s = self.dim;
        for b in 0..=self.depth {
            let mut block = mean.rows(b * s, s).into_owned();
            self.process.normalize(&mut block);
            mean.rows_mut(b * s, s).copy_from(&block);
        }
    }

    fn update(&mut self, pkt: &MeasurementPacket) -> Result<()> {
        let m = pkt.delay()? as usize;
        if m > self.depth {
            return Err(Error::Contract(format!(
                "delay {m} exceeds augmented depth {}",
                self.depth
            )));
        }
        let s = self.dim;
        let n = self.aug.mean.len();
        let x_m = self.aug.mean.rows(m * s, s).into_owned();
        let h = self.sensor.jacobian(&x_m);
        let v = self.sensor.noise_jacobian(&x_m);
        let predicted = self.sensor.observe(&x_m, &Vector::zeros(self.sensor.noise_dim()));
        let residual = self.sensor.residual(&pkt.value, &predicted);
        let vr = self.flops.mul(&v, &self.sensor.noise_cov());
        let r = self.flops.mul_t(&vr, &v);
        // H_aug·P only touches block-row m of P.
        let p_rows = self.aug.cov.view((m * s, 0), (s, n)).into_owned();
        let hp = self.flops.mul(&h, &p_rows);
        let hp_m = hp.columns(m * s, s).into_owned();
        let hph = self.flops.mul_t(&hp_m, &h);
        let s_mat = self.flops.add(&hph, &r);
        let s_inv = self.flops.spd_inverse(&s_mat, self.cond_bound, pkt.arrival_tick)?;
        let k = self.flops.mul(&hp.transpose(), &s_inv);
        let dx = self.flops.mul_vec(&k, &residual);
        let mut mean = self.flops.add_vec(&self.aug.mean, &dx);
        self.normalize_blocks(&mut mean);
        let khp = self.flops.mul(&k, &hp);
        let mut cov = self.flops.sub(&self.aug.cov, &khp);
        symmetrize(&mut cov);
        self.aug = GaussianState {
            mean,
            cov,
            tick: self.aug.tick,
        };
        Ok(())
    }
}

impl<P: ProcessModel, M: MeasurementModel> Estimator for AugmentedKf<P, M> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&mut self, u_applied: &Vector) -> Result<()> {
        let s = self.dim;
        let n = self.aug.mean.len();
        let x0 = self.aug.mean.rows(0, s).into_owned();
        let w0 = Vector::zeros(self.process.noise_dim());
        let mut head = self.process.transition(&x0, u_applied, &w0);
        self.process.normalize(&mut head);
        let a = self.process.state_jacobian(&x0, u_applied);
        let w = self.process.noise_jacobian(&x0, u_applied);
        let q = self.process.noise_cov(u_applied);

        let mut mean = Vector::zeros(n);
        mean.rows_mut(0, s).copy_from(&head);
        if n > s {
            mean.rows_mut(s, n - s).copy_from(&self.aug.mean.rows(0, n - s));
        }

        // M = F_aug · P: block-row 0 is A·P₀,:, the rest shift down.
        let p = &self.aug.cov;
        let mut fp = Mat::zeros(n, n);
        let top = self.flops.mul(&a, &p.view((0, 0), (s, n)).into_owned());
        fp.view_mut((0, 0), (s, n)).copy_from(&top);
        if n > s {
            fp.view_mut((s, 0), (n - s, n)).copy_from(&p.view((0, 0), (n - s, n)));
        }
        // P' = M · F_augᵀ: block-column 0 is M:,₀·Aᵀ, the rest shift right.
        let mut cov = Mat::zeros(n, n);
        let left = self.flops.mul_t(&fp.view((0, 0), (n, s)).into_owned(), &a);
        cov.view_mut((0, 0), (n, s)).copy_from(&left);
        if n > s {
            cov.view_mut((0, s), (n, n - s)).copy_from(&fp.view((0, 0), (n, n - s)));
        }
        let wq = self.flops.mul(&w, &q);
        let wqw = self.flops.mul_t(&wq, &w);
        let head_cov = self.flops.add(&cov.view((0, 0), (s, s)).into_owned(), &wqw);
        cov.view_mut((0, 0), (s, s)).copy_from(&head_cov);
        symmetrize(&mut cov);

        self.aug = GaussianState {
            mean,
            cov,
            tick: self.aug.tick + 1,
        };
        self.refresh_present();
        Ok(())
    }

    fn fuse(&mut self, packets: &[MeasurementPacket]) -> Result<()> {
        for pkt in in_origin_order(packets) {
            if pkt.arrived {
                self.update(pkt)?;
            }
        }
        self.refresh_present();
        Ok(())
    }

    fn state(&self) -> &GaussianState {
        &self.present
    }

    fn flops(&self) -> u64 {
        self.flops.total()
    }

    fn discarded(&self) -> u64 {
        0
    }
}
