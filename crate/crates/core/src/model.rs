//! Market primitives: utility families, the discretized type distribution,
//! and the scenario bundle every solver consumes.
//!
//! Continuous type distributions are represented on a finite grid of atoms.
//! Essential infima and suprema therefore become minima and maxima over grid
//! points with positive weight.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the probability sum of a type distribution.
pub const PROB_TOL: f64 = 1e-12;
/// Slack allowed when checking monotonicity of schedules and grids.
pub const MONO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid type distribution: {0}")]
    InvalidTypes(String),
}

/// Agent utility over own consumption.
///
/// Both families are of the form `u(q, θ) = θq + g(q)`, so `u_θ = q` and
/// demand depends on `θ - p` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityModel {
    /// `u(q, θ) = θq - (β/2)q²`.
    Quadratic { beta: f64 },
    /// `u(q, θ) = θq` with `q ∈ [0, 1]`; the non-strictly-concave limit case.
    LinearUnitDemand,
}

impl UtilityModel {
    pub fn u(&self, q: f64, theta: f64) -> f64 {
        match *self {
            UtilityModel::Quadratic { beta } => theta * q - 0.5 * beta * q * q,
            UtilityModel::LinearUnitDemand => theta * q,
        }
    }

    /// Marginal utility of quantity.
    pub fn u_q(&self, q: f64, theta: f64) -> f64 {
        match *self {
            UtilityModel::Quadratic { beta } => theta - beta * q,
            UtilityModel::LinearUnitDemand => theta,
        }
    }

    /// Marginal utility of type.
    pub fn u_theta(&self, q: f64, _theta: f64) -> f64 {
        q
    }

    pub fn is_strictly_concave(&self) -> bool {
        matches!(self, UtilityModel::Quadratic { .. })
    }

    /// Utility-maximizing quantity in `[0, cap]` at per-unit price `p`.
    ///
    /// Unit demand resolves the tie `θ = p` to zero.
    pub fn demand(&self, p: f64, theta: f64, cap: f64) -> f64 {
        match *self {
            UtilityModel::Quadratic { beta } => ((theta - p) / beta).clamp(0.0, cap),
            UtilityModel::LinearUnitDemand => {
                if theta > p {
                    cap.min(1.0)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UtilityModel::Quadratic { .. } => "quadratic",
            UtilityModel::LinearUnitDemand => "unit",
        }
    }
}

/// Free-function form of [`UtilityModel::demand`].
pub fn demand(p: f64, theta: f64, model: &UtilityModel, cap: f64) -> f64 {
    model.demand(p, theta, cap)
}

/// Finite type grid `θ_1 < … < θ_n` with probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    grid: Vec<f64>,
    weights: Vec<f64>,
}

impl TypeDistribution {
    /// Builds a distribution, rejecting anything that fails [`Self::violations`].
    pub fn new(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self, ModelError> {
        let dist = Self::new_unchecked(grid, weights);
        match dist.violations().into_iter().next() {
            None => Ok(dist),
            Some(v) => Err(ModelError::InvalidTypes(v.to_string())),
        }
    }

    /// Builds a distribution without checking invariants; pair with
    /// [`Scenario::validate`] when ingesting untrusted input.
    pub fn new_unchecked(grid: Vec<f64>, weights: Vec<f64>) -> Self {
        Self { grid, weights }
    }

    /// `n` equally weighted, equally spaced atoms covering `[a, b]`
    /// (both endpoints included).
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self, ModelError> {
        Self::new(Self::uniform_grid(a, b, n), vec![1.0 / n as f64; n])
    }

    pub(crate) fn uniform_unchecked(a: f64, b: f64, n: usize) -> Self {
        Self::new_unchecked(Self::uniform_grid(a, b, n), vec![1.0 / n.max(1) as f64; n])
    }

    /// Equally weighted atoms at the given points.
    pub fn equally_weighted(grid: Vec<f64>) -> Result<Self, ModelError> {
        let n = grid.len();
        Self::new(grid, vec![1.0 / n.max(1) as f64; n])
    }

    fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn lowest(&self) -> f64 {
        self.grid[0]
    }

    pub fn highest(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// `F(θ_k)` for every k.
    pub fn cdf(&self) -> Vec<f64> {
        self.weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    }

    /// `Σ f_i g(θ_i)`.
    pub fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }

    /// `Σ f_i x_i` for values aligned with the grid.
    pub fn mean_of(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, x)| w * x).sum()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.grid.is_empty() {
            out.push(Violation::new("types.grid", "type grid is empty"));
            return out;
        }
        if self.grid.len() != self.weights.len() {
            out.push(Violation::new(
                "types.weights",
                format!(
                    "{} weights for {} grid points",
                    self.weights.len(),
                    self.grid.len()
                ),
            ));
            return out;
        }
        if let Some(i) = self.grid.iter().position(|t| !t.is_finite() || *t < 0.0) {
            out.push(Violation::new(
                "types.grid",
                format!("type {i} is negative or not finite"),
            ));
        }
        if let Some(i) = (1..self.grid.len()).find(|&i| self.grid[i] <= self.grid[i - 1]) {
            out.push(Violation::new(
                "types.grid",
                format!("grid not strictly increasing at index {i}"),
            ));
        }
        if let Some(i) = self
            .weights
            .iter()
            .position(|&w| w <= 0.0 || !w.is_finite())
        {
            out.push(Violation::new(
                "types.weights",
                format!("weight {i} is not strictly positive"),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            out.push(Violation::new(
                "types.weights",
                format!("weights not normalized (sum = {total})"),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

/// What the regulator knows about how the externality covaries with type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Unknown,
    PositiveCorr,
    NegativeCorr,
}

impl Sign {
    pub const ALL: [Sign; 2] = [Sign::Positive, Sign::Negative];
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [
        Benchmark::Unknown,
        Benchmark::PositiveCorr,
        Benchmark::NegativeCorr,
    ];
}

/// Market primitives for one regulation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub utility: UtilityModel,
    pub types: TypeDistribution,
    /// Constant marginal cost of supply.
    pub cost: f64,
    /// Mean externality per unit.
    pub mu: f64,
    /// Maximum individual quantity.
    pub cap: f64,
    pub sign: Sign,
    pub benchmark: Benchmark,
    /// Upper bound on the per-unit externality, when known.
    pub xi_bar: Option<f64>,
}

/// One broken scenario invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Scenario {
    /// Every broken invariant, in field order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        match self.utility {
            UtilityModel::Quadratic { beta } => {
                if !(beta.is_finite() && beta > 0.0) {
                    out.push(Violation::new("utility.beta", "curvature must be > 0"));
                }
            }
            UtilityModel::LinearUnitDemand => {
                if self.cap != 1.0 {
                    out.push(Violation::new("cap", "unit demand requires cap = 1"));
                }
            }
        }
        out.extend(self.types.violations());
        if !(self.cost.is_finite() && self.cost > 0.0) {
            out.push(Violation::new(
                "cost",
                "marginal cost must be finite and > 0",
            ));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            out.push(Violation::new(
                "mu",
                "mean externality must be finite and >= 0",
            ));
        }
        if !(self.cap.is_finite() && self.cap > 0.0) {
            out.push(Violation::new("cap", "quantity cap must be finite and > 0"));
        }
        if let Some(xb) = self.xi_bar {
            if !(xb.is_finite() && xb > 0.0) {
                out.push(Violation::new(
                    "xi_bar",
                    "support bound must be finite and > 0",
                ));
            } else if xb < self.mu {
                out.push(Violation::new("xi_bar", "xi_bar < mu"));
            }
            if (self.sign, self.benchmark) != (Sign::Positive, Benchmark::Unknown) {
                out.push(Violation::new(
                    "xi_bar",
                    "support bound only supported for positive sign with unknown correlation",
                ));
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub fn demand(&self, p: f64, theta: f64) -> f64 {
        self.utility.demand(p, theta, self.cap)
    }

    /// Per-type surplus `u(q, θ) - c q`, before externalities.
    pub fn private_surplus(&self, values: &[f64]) -> f64 {
        self.types
            .grid()
            .iter()
            .zip(self.types.weights())
            .zip(values)
            .map(|((&t, &w), &q)| w * (self.utility.u(q, t) - self.cost * q))
            .sum()
    }
}

/// Demand at marginal cost for every grid type.
pub fn laissez_faire(scenario: &Scenario) -> crate::schedule::AllocationSchedule {
    let values = scenario
        .types
        .grid()
        .iter()
        .map(|&t| scenario.demand(scenario.cost, t))
        .collect();
    crate::schedule::AllocationSchedule::from_values_unchecked(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quad_scenario() -> Scenario {
        Scenario {
            utility: UtilityModel::Quadratic { beta: 1.0 },
            types: TypeDistribution::uniform(0.0, 1.0, 11).unwrap(),
            cost: 0.5,
            mu: 0.3,
            cap: 1.0,
            sign: Sign::Positive,
            benchmark: Benchmark::Unknown,
            xi_bar: None,
        }
    }

    #[test]
    fn quadratic_demand_interior_and_clamped() {
        let m = UtilityModel::Quadratic { beta: 1.0 };
        assert!((demand(0.18, 0.5, &m, 1.0) - 0.32).abs() < 1e-15);
        assert_eq!(demand(0.5, 0.3, &m, 1.0), 0.0);
        assert_eq!(demand(-5.0, 0.3, &m, 1.0), 1.0);
    }

    #[test]
    fn unit_demand_indicator_ties_to_zero() {
        let m = UtilityModel::LinearUnitDemand;
        assert_eq!(demand(0.5, 0.7, &m, 1.0), 1.0);
        assert_eq!(demand(0.5, 0.5, &m, 1.0), 0.0);
        assert_eq!(demand(0.5, 0.2, &m, 1.0), 0.0);
    }

    #[test]
    fn laissez_faire_matches_closed_form() {
        let s = quad_scenario();
        let lf = laissez_faire(&s);
        for (&t, &q) in s.types.grid().iter().zip(lf.values()) {
            assert!((q - (t - 0.5f64).max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn laissez_faire_zero_when_cost_above_top_type() {
        let mut s = quad_scenario();
        s.cost = 1.0;
        assert!(laissez_faire(&s).values().iter().all(|&q| q == 0.0));
    }

    #[test]
    fn laissez_faire_unit_demand_is_step() {
        let mut s = quad_scenario();
        s.utility = UtilityModel::LinearUnitDemand;
        let lf = laissez_faire(&s);
        for (&t, &q) in s.types.grid().iter().zip(lf.values()) {
            assert_eq!(q, if t > 0.5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert!(quad_scenario().validate().is_empty());
    }

    #[test]
    fn validate_flags_xi_bar_below_mu() {
        let mut s = quad_scenario();
        s.xi_bar = Some(0.1);
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "xi_bar");
        assert!(v[0].message.contains("xi_bar < mu"));
    }

    #[test]
    fn validate_flags_unnormalized_weights() {
        let mut s = quad_scenario();
        s.types = TypeDistribution::new_unchecked(vec![0.1, 0.5, 0.9], vec![0.3, 0.3, 0.3]);
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("not normalized"));
    }

    #[test]
    fn validate_collects_several() {
        let mut s = quad_scenario();
        s.cost = 0.0;
        s.mu = -1.0;
        s.utility = UtilityModel::Quadratic { beta: 0.0 };
        let fields: Vec<_> = s.validate().into_iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["utility.beta", "cost", "mu"]);
    }

    #[test]
    fn cdf_strictly_increasing() {
        let d = TypeDistribution::new(vec![0.0, 0.5, 1.0], vec![0.25, 0.25, 0.5]).unwrap();
        assert_eq!(d.cdf(), vec![0.25, 0.5, 1.0]);
        assert!(TypeDistribution::new(vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(TypeDistribution::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn single_crossing_holds_on_grid() {
        for model in [
            UtilityModel::Quadratic { beta: 1.7 },
            UtilityModel::LinearUnitDemand,
        ] {
            let grid = [0.0, 0.2, 0.55, 0.9];
            let qs = [0.0, 0.1, 0.4, 0.8, 1.0];
            for (i, &ti) in grid.iter().enumerate() {
                for &tj in &grid[i + 1..] {
                    for (k, &q) in qs.iter().enumerate() {
                        for &qp in &qs[k + 1..] {
                            let gap = (model.u(qp, tj) - model.u(q, tj))
                                - (model.u(qp, ti) - model.u(q, ti));
                            assert!((gap - (tj - ti) * (qp - q)).abs() < 1e-12);
                            assert!(gap > 0.0);
                        }
                    }
                }
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn demand_monotone(beta in 0.1f64..5.0, t1 in 0.0f64..3.0, dt in 0.0f64..2.0,
                               p1 in -1.0f64..3.0, dp in 0.0f64..2.0, cap in 0.1f64..4.0) {
                for m in [UtilityModel::Quadratic { beta }, UtilityModel::LinearUnitDemand] {
                    let cap = if m.is_strictly_concave() { cap } else { 1.0 };
                    prop_assert!(m.demand(p1, t1 + dt, cap) >= m.demand(p1, t1, cap));
                    prop_assert!(m.demand(p1 + dp, t1, cap) <= m.demand(p1, t1, cap));
                }
            }

            #[test]
            fn quadratic_demand_is_argmax(beta in 0.1f64..5.0, t in 0.0f64..3.0,
                                          p in -1.0f64..3.0, cap in 0.1f64..4.0) {
                let m = UtilityModel::Quadratic { beta };
                let q = m.demand(p, t, cap);
                let best = m.u(q, t) - p * q;
                for k in 0..=200 {
                    let x = cap * k as f64 / 200.0;
                    prop_assert!(m.u(x, t) - p * x <= best + 1e-12);
                }
            }
        }
    }
}
