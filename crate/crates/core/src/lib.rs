//! State estimation for systems whose control inputs and measurements travel
//! over a network with random, measurable delay and Bernoulli packet loss.
//!
//! The crate provides
//!
//! * [`estimator`]: the linear delayed-measurement filter built on a
//!   relevance factor that carries stale innovations to the present,
//! * [`poekf`]: its extended (linearized) form for nonlinear models,
//! * [`robot`]: a differential-drive plant with Jacobians and noise models,
//! * [`channel`]: a seeded lossy, delaying packet channel,
//! * [`baselines`]: a delay-ignoring EKF, a buffered re-filtering estimator,
//!   and an augmented-state oracle,
//! * [`harness`]: scenarios, the closed simulation loop, Monte Carlo RMSE and
//!   cost summaries, and CSV output.

pub mod baselines;
pub mod channel;
pub mod checks;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod poekf;
pub mod robot;

/// Discrete time index.
pub type Tick = u64;

pub use error::{Error, Result};
pub use estimator::{GaussianState, MeasurementPacket, StepHistory, StepRecord};
pub use filter::Estimator;
pub use linalg::{FlopCounter, Mat, Vector};
