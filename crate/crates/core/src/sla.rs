//! SLA objectives as reward functions and violation predicates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::ChainObservation;

/// The optimization regime of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlaObjective {
    /// Maximize total throughput while total energy per interval stays under a cap (J).
    MaxThroughput { energy_cap: f64 },
    /// Minimize total energy while total throughput stays at or above a floor (Gb/s).
    MinEnergy { throughput_floor: f64 },
    /// Maximize throughput per unit energy.
    EnergyEfficiency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaSpec {
    pub objective: SlaObjective,
    /// Energy normalizer of the MinEnergy reward: the most energy the server
    /// can draw in one interval.
    pub energy_ref: f64,
}

impl SlaSpec {
    pub fn new(objective: SlaObjective, energy_ref: f64) -> Result<Self> {
        match objective {
            SlaObjective::MaxThroughput { energy_cap } if !(energy_cap > 0.0) => {
                return Err(Error::domain("energy_cap must be positive"))
            }
            SlaObjective::MinEnergy { throughput_floor } if !(throughput_floor > 0.0) => {
                return Err(Error::domain("throughput_floor must be positive"))
            }
            _ => {}
        }
        if !(energy_ref > 0.0 && energy_ref.is_finite()) {
            return Err(Error::domain("energy_ref must be positive"));
        }
        Ok(Self { objective, energy_ref })
    }

    /// Reward of one completed control interval.
    pub fn reward(&self, obs: &[ChainObservation]) -> f64 {
        let (t, e) = totals(obs);
        match self.objective {
            SlaObjective::MaxThroughput { energy_cap } => {
                if e <= energy_cap {
                    t
                } else {
                    0.0
                }
            }
            SlaObjective::MinEnergy { throughput_floor } => {
                if t >= throughput_floor {
                    ((self.energy_ref - e) / self.energy_ref).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
            SlaObjective::EnergyEfficiency => efficiency(t, e),
        }
    }

    /// True iff the hard constraint of the SLA is breached.
    pub fn is_violation(&self, obs: &[ChainObservation]) -> bool {
        let (t, e) = totals(obs);
        match self.objective {
            SlaObjective::MaxThroughput { energy_cap } => e > energy_cap,
            SlaObjective::MinEnergy { throughput_floor } => t < throughput_floor,
            SlaObjective::EnergyEfficiency => false,
        }
    }
}

/// Total throughput (Gb/s) and energy (J) over all chains.
pub fn totals(obs: &[ChainObservation]) -> (f64, f64) {
    obs.iter().fold((0.0, 0.0), |(t, e), o| (t + o.throughput_gbps, e + o.energy_j))
}

/// Energy efficiency in Gb/s per kJ; an interval without energy scores zero.
pub fn efficiency(throughput_gbps: f64, energy_j: f64) -> f64 {
    if energy_j > 0.0 {
        throughput_gbps / (energy_j / 1000.0)
    } else {
        0.0
    }
}

/// Relative energy saving `(E_nf + E_t - E_b) / (E_nf + E_t)`.
///
/// Evaluated literally, so it is negative when the baseline `e_baseline`
/// consumed more than the scheduler plus its training cost.
pub fn energy_saving(e_nf: f64, e_train: f64, e_baseline: f64) -> Result<f64> {
    let denom = e_nf + e_train;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::domain("E_nf + E_train must be nonzero"));
    }
    Ok((denom - e_baseline) / denom)
}
