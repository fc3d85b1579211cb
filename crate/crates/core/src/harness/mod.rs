//! Closed-loop simulation, Monte Carlo aggregation and CSV output.

pub mod linear;
pub mod monte_carlo;
pub mod output;
pub mod scenario;
pub mod sim;

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub use monte_carlo::{run_monte_carlo, MonteCarloReport};
pub use output::emit_csv;
pub use scenario::{ScenarioConfig, TrajectorySpec};
pub use sim::{run_trial, TrialResult};

/// Estimators selectable in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    PoEkf,
    Ekf,
    Refilter,
    Oracle,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::PoEkf, FilterKind::Ekf, FilterKind::Refilter, FilterKind::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::PoEkf => "poekf",
            FilterKind::Ekf => "ekf",
            FilterKind::Refilter => "refilter",
            FilterKind::Oracle => "oracle",
        }
    }

    /// Parses a comma-separated list such as `poekf,ekf,refilter`.
    pub fn parse_list(s: &str) -> Result<Vec<FilterKind>, Error> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind: FilterKind = part.parse()?;
            if out.contains(&kind) {
                return Err(Error::Validation(format!("filter '{part}' listed twice")));
            }
            out.push(kind);
        }
        Ok(out)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown filter '{s}' (expected poekf, ekf, refilter or oracle)")))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a parent seed and a stream id.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
