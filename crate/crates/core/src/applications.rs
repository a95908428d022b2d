//! Applications: vaccine mandates under unit demand, quantity requirements
//! for industry abatement under regulatory uncertainty, and lotteries in
//! costly screening.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bisect::bisect_nondecreasing;
use crate::model::{laissez_faire, Benchmark, Scenario, Sign, TypeDistribution, UtilityModel};
use crate::schedule::AllocationSchedule;
use crate::solvers::{Diagnostics, Policy, PolicyKind, BOUND_TOL};
use crate::worstcase::{worst_case_welfare, ConditionalMean, WorstCaseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplicationError {
    #[error("vaccine policy requires unit demand, got `{0}`")]
    WrongUtility(&'static str),
    #[error("vaccine policy covers positive externalities only")]
    WrongSign,
    #[error("invalid screening mechanism: {0}")]
    InvalidMechanism(String),
    #[error(transparent)]
    WorstCase(#[from] WorstCaseError),
}

// ---------------------------------------------------------------------------
// Vaccines

/// `E_F[(c - θ)₊]`: the average allocative loss of a mandate.
pub fn mandate_threshold(cost: f64, types: &TypeDistribution) -> f64 {
    types.expect(|t| (cost - t).max(0.0))
}

/// Mandate, no intervention, or a subsidy of `μ`, by benchmark.
///
/// At `μ` equal to the threshold every floor is optimal; the mandate is
/// returned with an indifference note.
pub fn robust_vaccine_policy(scenario: &Scenario) -> Result<Policy, ApplicationError> {
    if scenario.utility != UtilityModel::LinearUnitDemand {
        return Err(ApplicationError::WrongUtility(scenario.utility.name()));
    }
    if scenario.sign != Sign::Positive {
        return Err(ApplicationError::WrongSign);
    }
    let grid = scenario.types.grid();
    let (kind, values, note) = match scenario.benchmark {
        Benchmark::Unknown | Benchmark::NegativeCorr => {
            let threshold = mandate_threshold(scenario.cost, &scenario.types);
            if scenario.mu > threshold {
                (PolicyKind::Mandate, vec![1.0; grid.len()], None)
            } else if scenario.mu == threshold {
                (
                    PolicyKind::Mandate,
                    vec![1.0; grid.len()],
                    Some("indifferent between mandate and no intervention".to_string()),
                )
            } else {
                (
                    PolicyKind::LaissezFaire,
                    laissez_faire(scenario).into_values(),
                    None,
                )
            }
        }
        Benchmark::PositiveCorr => (
            PolicyKind::UniformSubsidy(scenario.mu),
            grid.iter()
                .map(|&t| scenario.demand(scenario.cost - scenario.mu, t))
                .collect(),
            None,
        ),
    };
    let schedule = AllocationSchedule::from_values_unchecked(values);
    let guarantee = worst_case_welfare(&schedule, scenario)?;
    Ok(Policy {
        kind,
        schedule,
        guarantee,
        diagnostics: Diagnostics::default(),
        note,
    })
}

/// Whether an expected-surplus maximizer who knows `m` mandates: every
/// prefix `Σ_{i≤k} f_i (θ_i - c + m_i)` is nonnegative.
pub fn bayesian_mandate_condition(scenario: &Scenario, m: &ConditionalMean) -> bool {
    let mut acc = 0.0;
    for ((&t, &f), &mi) in scenario
        .types
        .grid()
        .iter()
        .zip(scenario.types.weights())
        .zip(m.values())
    {
        acc += f * (t - scenario.cost + mi);
        if acc < -1e-9 {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Regulatory uncertainty

/// Industry abatement cost `C(q, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostModel {
    /// `C(q, θ) = γ θ q² / 2`.
    QuadraticCost { gamma: f64 },
}

impl CostModel {
    pub fn cost(&self, q: f64, theta: f64) -> f64 {
        match *self {
            CostModel::QuadraticCost { gamma } => 0.5 * gamma * theta * q * q,
        }
    }

    pub fn marginal(&self, q: f64, theta: f64) -> f64 {
        match *self {
            CostModel::QuadraticCost { gamma } => gamma * theta * q,
        }
    }
}

/// What the industry pays below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// Reductions below the floor are not permitted at any price.
    Infeasible,
    Finite(f64),
}

/// Zero payment at or above the floor, `penalty` below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaymentSchedule {
    pub floor: f64,
    pub penalty: Penalty,
}

impl PaymentSchedule {
    pub fn requirement(floor: f64) -> Self {
        Self {
            floor,
            penalty: Penalty::Infeasible,
        }
    }

    /// `None` where the payment is infinite.
    pub fn payment(&self, q: f64) -> Option<f64> {
        if q >= self.floor {
            Some(0.0)
        } else {
            match self.penalty {
                Penalty::Infeasible => None,
                Penalty::Finite(p) => Some(p),
            }
        }
    }
}

/// Cost-minimizing reduction under `schedule`. Above the floor extra
/// abatement only adds cost; below it, the cheapest option is zero.
pub fn industry_response(schedule: &PaymentSchedule, theta: f64, cost: &CostModel) -> f64 {
    match schedule.penalty {
        Penalty::Infeasible => schedule.floor,
        Penalty::Finite(p) => {
            if cost.cost(schedule.floor, theta) <= cost.cost(0.0, theta) + p {
                schedule.floor
            } else {
                0.0
            }
        }
    }
}

/// Floor solving `E_F[C_q(q, θ)] = μ` on `[0, max_reduction]`.
///
/// `max_reduction` is eliminating the externality entirely; the floor sits
/// there when expected marginal cost stays below `μ` on the whole range.
pub fn solve_abatement_floor(
    cost: &CostModel,
    types: &TypeDistribution,
    mu: f64,
    max_reduction: f64,
) -> Policy {
    let lhs = |q: f64| types.expect(|t| cost.marginal(q, t));
    let (floor, kind, iterations, note) = if lhs(0.0) >= mu {
        (
            0.0,
            PolicyKind::LaissezFaire,
            0,
            Some("no intervention".to_string()),
        )
    } else if lhs(max_reduction) <= mu {
        (
            max_reduction,
            PolicyKind::Floor(max_reduction),
            0,
            Some("full ban".to_string()),
        )
    } else {
        let b = bisect_nondecreasing(|q| lhs(q) - mu, 0.0, max_reduction, BOUND_TOL);
        (b.lo, PolicyKind::Floor(b.lo), b.iterations, None)
    };
    let expected_cost = types.expect(|t| cost.cost(floor, t));
    Policy {
        kind,
        schedule: AllocationSchedule::from_values_unchecked(vec![floor; types.len()]),
        guarantee: mu * floor - expected_cost,
        diagnostics: Diagnostics {
            foc_residual: Some(lhs(floor) - mu),
            iterations,
        },
        note,
    }
}

/// Requirement implementing an abatement policy: the common reduction
/// level, with anything below it infeasible.
pub fn abatement_payment(policy: &Policy) -> PaymentSchedule {
    PaymentSchedule::requirement(policy.schedule.values().first().copied().unwrap_or(0.0))
}

// ---------------------------------------------------------------------------
// Costly screening

/// Allocation probabilities and wait times per type, under a capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningMechanism {
    q: Vec<f64>,
    t: Vec<f64>,
    capacity: f64,
}

impl ScreeningMechanism {
    /// Validates probabilities, wait times, capacity, monotonicity and the
    /// envelope identity `U(θ_i) = U(θ_1) + Σ_{j<i} q_j (θ_{j+1} - θ_j)`.
    pub fn new(
        q: Vec<f64>,
        t: Vec<f64>,
        capacity: f64,
        types: &TypeDistribution,
    ) -> Result<Self, ApplicationError> {
        let bad = |m: String| Err(ApplicationError::InvalidMechanism(m));
        if !(capacity > 0.0 && capacity < 1.0) {
            return bad(format!("capacity {capacity} outside (0, 1)"));
        }
        if q.len() != types.len() || t.len() != types.len() {
            return bad("length does not match the type grid".into());
        }
        if q.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return bad("allocation probability outside [0, 1]".into());
        }
        if q.windows(2).any(|w| w[1] < w[0]) {
            return bad("allocation not nondecreasing".into());
        }
        if t.iter().any(|&x| x < 0.0 || x.is_nan()) {
            return bad("negative wait time".into());
        }
        if types.mean_of(&q) > capacity + 1e-12 {
            return bad("capacity exceeded".into());
        }
        let mech = Self { q, t, capacity };
        let u = mech.utilities(types);
        let grid = types.grid();
        let mut acc = u[0];
        for i in 1..grid.len() {
            acc += mech.q[i - 1] * (grid[i] - grid[i - 1]);
            if (acc - u[i]).abs() > 1e-9 {
                return bad(format!("envelope identity fails at type {i}"));
            }
        }
        Ok(mech)
    }

    /// Builds the envelope-consistent mechanism with `U(θ_1) = u_low`,
    /// deriving wait times `t_i = θ_i q_i - U(θ_i)`.
    pub fn from_allocation(
        q: Vec<f64>,
        u_low: f64,
        capacity: f64,
        types: &TypeDistribution,
    ) -> Result<Self, ApplicationError> {
        let grid = types.grid();
        let mut t = Vec::with_capacity(q.len());
        let mut u = u_low;
        for i in 0..q.len().min(grid.len()) {
            if i > 0 {
                u += q[i - 1] * (grid[i] - grid[i - 1]);
            }
            // absorb rounding so t_1 = 0 stays exactly zero
            let ti = grid[i] * q[i] - u;
            t.push(if ti.abs() < 1e-12 { 0.0 } else { ti });
        }
        Self::new(q, t, capacity, types)
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// `U(θ_i) = θ_i q_i - t_i`.
    pub fn utilities(&self, types: &TypeDistribution) -> Vec<f64> {
        types
            .grid()
            .iter()
            .zip(&self.q)
            .zip(&self.t)
            .map(|((&th, &q), &t)| th * q - t)
            .collect()
    }
}

/// Random allocation with probability `Q` and no waiting.
pub fn lottery(
    capacity: f64,
    types: &TypeDistribution,
) -> Result<ScreeningMechanism, ApplicationError> {
    ScreeningMechanism::new(
        vec![capacity; types.len()],
        vec![0.0; types.len()],
        capacity,
        types,
    )
}

/// `μ · U(θ_1)`: Nature loads the whole waiting cost on the lowest type.
pub fn screening_worst_case(mech: &ScreeningMechanism, mu: f64, types: &TypeDistribution) -> f64 {
    mu * mech.utilities(types)[0]
}

/// Lottery packaged as a [`Policy`].
pub fn screening_policy(
    capacity: f64,
    mu: f64,
    types: &TypeDistribution,
) -> Result<Policy, ApplicationError> {
    let mech = lottery(capacity, types)?;
    Ok(Policy {
        kind: PolicyKind::Lottery(capacity),
        schedule: AllocationSchedule::from_values_unchecked(mech.q.clone()),
        guarantee: screening_worst_case(&mech, mu, types),
        diagnostics: Diagnostics::default(),
        note: None,
    })
}
