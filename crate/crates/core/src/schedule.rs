//! Allocation schedules and envelope-consistent mechanisms.
//!
//! Only nondecreasing schedules are implementable, and transfers are pinned
//! by the envelope identity up to the utility `u0` of the lowest type. The
//! externality draw never appears here: implementable mechanisms cannot
//! condition on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Scenario, MONO_TOL};

/// Slack for pairwise incentive-compatibility checks.
pub const IC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule has {got} values but the type grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("schedule decreases at index {0}")]
    NonMonotone(usize),
    #[error("schedule value at index {0} is outside [0, cap]")]
    OutOfRange(usize),
}

/// A nondecreasing quantity per grid type, each in `[0, cap]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationSchedule {
    values: Vec<f64>,
}

impl AllocationSchedule {
    pub(crate) fn from_values_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Validates `values` against the scenario's grid and cap.
pub fn make_schedule(
    values: Vec<f64>,
    scenario: &Scenario,
) -> Result<AllocationSchedule, ScheduleError> {
    check_values(&values, scenario.types.len(), scenario.cap)?;
    Ok(AllocationSchedule { values })
}

pub(crate) fn check_values(values: &[f64], n: usize, cap: f64) -> Result<(), ScheduleError> {
    if values.len() != n {
        return Err(ScheduleError::LengthMismatch {
            expected: n,
            got: values.len(),
        });
    }
    for (i, &q) in values.iter().enumerate() {
        if !q.is_finite() || q < -MONO_TOL || q > cap + MONO_TOL {
            return Err(ScheduleError::OutOfRange(i));
        }
        if i > 0 && q < values[i - 1] - MONO_TOL {
            return Err(ScheduleError::NonMonotone(i));
        }
    }
    Ok(())
}

/// Schedule plus transfers, with the induced utility of every type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub schedule: AllocationSchedule,
    pub transfers: Vec<f64>,
    /// `U(θ_i) = u(q_i, θ_i) - t_i`.
    pub utilities: Vec<f64>,
    pub u0: f64,
}

impl Mechanism {
    /// Pairs a schedule with arbitrary transfers. The envelope identity is
    /// not enforced; see [`Mechanism::envelope_residual`].
    pub fn from_parts(
        schedule: AllocationSchedule,
        transfers: Vec<f64>,
        scenario: &Scenario,
    ) -> Self {
        let utilities: Vec<f64> = scenario
            .types
            .grid()
            .iter()
            .zip(schedule.values())
            .zip(&transfers)
            .map(|((&th, &q), &t)| scenario.utility.u(q, th) - t)
            .collect();
        let u0 = utilities.first().copied().unwrap_or(0.0);
        Self {
            schedule,
            transfers,
            utilities,
            u0,
        }
    }

    /// Largest deviation of the induced utilities from the left-Riemann
    /// envelope integral anchored at `U(θ_1)`.
    pub fn envelope_residual(&self, scenario: &Scenario) -> f64 {
        let expected = envelope_utilities(&self.schedule, scenario, self.u0);
        expected
            .iter()
            .zip(&self.utilities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn envelope_utilities(schedule: &AllocationSchedule, scenario: &Scenario, u0: f64) -> Vec<f64> {
    let grid = scenario.types.grid();
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = u0;
    for (i, &q) in schedule.values().iter().enumerate() {
        out.push(acc);
        if i + 1 < grid.len() {
            acc += scenario.utility.u_theta(q, grid[i]) * (grid[i + 1] - grid[i]);
        }
    }
    out
}

/// Envelope transfers: `U(θ_i) = u0 + Σ_{j<i} u_θ(q_j, θ_j)(θ_{j+1} - θ_j)`
/// and `t_i = u(q_i, θ_i) - U(θ_i)`.
pub fn transfers_from_allocation(
    schedule: &AllocationSchedule,
    scenario: &Scenario,
    u0: f64,
) -> Mechanism {
    let utilities = envelope_utilities(schedule, scenario, u0);
    let transfers = scenario
        .types
        .grid()
        .iter()
        .zip(schedule.values())
        .zip(&utilities)
        .map(|((&th, &q), &big_u)| scenario.utility.u(q, th) - big_u)
        .collect();
    Mechanism {
        schedule: schedule.clone(),
        transfers,
        utilities,
        u0,
    }
}

/// Every ordered pair `(truth, report)` where misreporting pays by more
/// than [`IC_TOL`].
pub fn verify_ic(mechanism: &Mechanism, scenario: &Scenario) -> Vec<(usize, usize)> {
    let grid = scenario.types.grid();
    let q = mechanism.schedule.values();
    let t = &mechanism.transfers;
    let mut bad = Vec::new();
    for (i, &th) in grid.iter().enumerate() {
        let truthful = scenario.utility.u(q[i], th) - t[i];
        for j in 0..grid.len() {
            if j != i && scenario.utility.u(q[j], th) - t[j] > truthful + IC_TOL {
                bad.push((i, j));
            }
        }
    }
    bad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Min and max over positive-weight grid points, and the `F`-mean.
pub fn schedule_stats(schedule: &AllocationSchedule, scenario: &Scenario) -> ScheduleStats {
    let weights = scenario.types.weights();
    let support = schedule
        .values()
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&q, _)| q);
    let (min, max) = support.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
        (lo.min(q), hi.max(q))
    });
    ScheduleStats {
        min,
        max,
        mean: scenario.types.mean_of(schedule.values()),
    }
}
