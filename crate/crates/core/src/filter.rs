//! Common driving interface for every estimator in the crate.

use crate::error::Result;
use crate::estimator::{GaussianState, MeasurementPacket};
use crate::linalg::Vector;

/// A recursive estimator advanced one tick at a time.
///
/// Each tick the driver calls [`predict`](Estimator::predict) with the input
/// the plant actually applied over the step just taken, then
/// [`fuse`](Estimator::fuse) with every packet that arrived at the new tick.
pub trait Estimator: Send {
    fn name(&self) -> &str;

    fn predict(&mut self, u_applied: &Vector) -> Result<()>;

    /// Packets may arrive in any order; implementations process them in
    /// increasing origin-tick order.
    fn fuse(&mut self, packets: &[MeasurementPacket]) -> Result<()>;

    fn state(&self) -> &GaussianState;

    /// Floating-point operations charged so far.
    fn flops(&self) -> u64;

    /// Packets rejected as too old to fuse.
    fn discarded(&self) -> u64;

    /// Delayed updates whose literal covariance came out indefinite.
    fn psd_violations(&self) -> u64 {
        0
    }
}

/// Stable sort of `packets` by origin tick.
pub(crate) fn in_origin_order(packets: &[MeasurementPacket]) -> Vec<&MeasurementPacket> {
    let mut out: Vec<&MeasurementPacket> = packets.iter().collect();
    out.sort_by_key(|p| p.origin_tick);
    out
}
