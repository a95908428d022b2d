//! Optimal robust policies for every sign and correlation benchmark.
//!
//! | sign     | unknown | positive corr.  | negative corr. |
//! |----------|---------|-----------------|----------------|
//! | positive | floor   | subsidy `μ`     | floor          |
//! | negative | ceiling | ceiling         | tax `μ`        |
//!
//! Floors and ceilings come from one-dimensional first-order conditions in
//! the bound, solved by bisection. The left-hand side of each condition is
//! monotone because `u_qq < 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bisect::bisect_nondecreasing;
use crate::isotonic::pava_nondecreasing;
use crate::model::{laissez_faire, Benchmark, Scenario, Sign};
use crate::schedule::AllocationSchedule;
use crate::worstcase::{worst_case_welfare, ConditionalMean, WorstCaseError};

/// Bisection tolerance on the floor or ceiling.
pub const BOUND_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("{solver} does not apply to sign {sign:?} with benchmark {benchmark:?}")]
    WrongRegime {
        solver: &'static str,
        sign: Sign,
        benchmark: Benchmark,
    },
    #[error("utility family `{0}` is not strictly concave; use the vaccine application")]
    Unsupported(&'static str),
    #[error(transparent)]
    WorstCase(#[from] WorstCaseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameter", rename_all = "snake_case")]
pub enum PolicyKind {
    Floor(f64),
    Ceiling(f64),
    UniformSubsidy(f64),
    UniformTax(f64),
    LaissezFaire,
    Mandate,
    Lottery(f64),
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Floor(_) => "Floor",
            PolicyKind::Ceiling(_) => "Ceiling",
            PolicyKind::UniformSubsidy(_) => "UniformSubsidy",
            PolicyKind::UniformTax(_) => "UniformTax",
            PolicyKind::LaissezFaire => "LaissezFaire",
            PolicyKind::Mandate => "Mandate",
            PolicyKind::Lottery(_) => "Lottery",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            PolicyKind::Floor(x)
            | PolicyKind::Ceiling(x)
            | PolicyKind::UniformSubsidy(x)
            | PolicyKind::UniformTax(x)
            | PolicyKind::Lottery(x) => Some(x),
            PolicyKind::LaissezFaire | PolicyKind::Mandate => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// First-order-condition residual at the returned bound.
    pub foc_residual: Option<f64>,
    pub iterations: usize,
}

/// A solved policy: the instrument, the schedule it induces, and its
/// worst-case welfare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub schedule: AllocationSchedule,
    pub guarantee: f64,
    pub diagnostics: Diagnostics,
    pub note: Option<String>,
}

fn wrong_regime(solver: &'static str, s: &Scenario) -> SolveError {
    SolveError::WrongRegime {
        solver,
        sign: s.sign,
        benchmark: s.benchmark,
    }
}

fn require_concave(s: &Scenario) -> Result<(), SolveError> {
    if s.utility.is_strictly_concave() {
        Ok(())
    } else {
        Err(SolveError::Unsupported(s.utility.name()))
    }
}

/// `E_F[(c - u_q(floor, θ)) 1{q_LF(θ) < floor}]`.
pub fn floor_foc_lhs(scenario: &Scenario, floor: f64) -> f64 {
    let lf = laissez_faire(scenario);
    scenario
        .types
        .grid()
        .iter()
        .zip(scenario.types.weights())
        .zip(lf.values())
        .filter(|(_, &q)| q < floor)
        .map(|((&t, &f), _)| f * (scenario.cost - scenario.utility.u_q(floor, t)))
        .sum()
}

/// `E_F[(u_q(ceiling, θ) - c) 1{q_LF(θ) > ceiling}]`.
pub fn ceiling_foc_lhs(scenario: &Scenario, ceiling: f64) -> f64 {
    let lf = laissez_faire(scenario);
    scenario
        .types
        .grid()
        .iter()
        .zip(scenario.types.weights())
        .zip(lf.values())
        .filter(|(_, &q)| q > ceiling)
        .map(|((&t, &f), _)| f * (scenario.utility.u_q(ceiling, t) - scenario.cost))
        .sum()
}

fn finish(
    scenario: &Scenario,
    kind: PolicyKind,
    values: Vec<f64>,
    diagnostics: Diagnostics,
    note: Option<String>,
) -> Result<Policy, SolveError> {
    let schedule = AllocationSchedule::from_values_unchecked(values);
    let guarantee = worst_case_welfare(&schedule, scenario)?;
    Ok(Policy {
        kind,
        schedule,
        guarantee,
        diagnostics,
        note,
    })
}

/// Quantity floor `max{q_LF, floor}` for positive externalities under
/// unknown or negative correlation.
pub fn solve_floor(scenario: &Scenario) -> Result<Policy, SolveError> {
    if scenario.sign != Sign::Positive || scenario.benchmark == Benchmark::PositiveCorr {
        return Err(wrong_regime("solve_floor", scenario));
    }
    require_concave(scenario)?;
    let lf = laissez_faire(scenario).into_values();
    let base = lf[0];
    let cap = scenario.cap;
    let mu = scenario.mu;

    let (floor, iterations, note) = if floor_foc_lhs(scenario, cap) <= mu {
        (cap, 0, Some("floor at the quantity cap".to_string()))
    } else {
        let b = bisect_nondecreasing(|x| floor_foc_lhs(scenario, x) - mu, base, cap, BOUND_TOL);
        (b.lo, b.iterations, None)
    };

    let diagnostics = Diagnostics {
        foc_residual: Some(floor_foc_lhs(scenario, floor) - mu),
        iterations,
    };
    if floor <= base + 2.0 * BOUND_TOL {
        return finish(
            scenario,
            PolicyKind::LaissezFaire,
            lf,
            diagnostics,
            Some("floor not binding".to_string()),
        );
    }
    let values = lf.iter().map(|&q| q.max(floor)).collect();
    finish(
        scenario,
        PolicyKind::Floor(floor),
        values,
        diagnostics,
        note,
    )
}

/// Quantity ceiling `min{q_LF, ceiling}` for negative externalities under
/// unknown or positive correlation. A zero ceiling is a ban.
pub fn solve_ceiling(scenario: &Scenario) -> Result<Policy, SolveError> {
    if scenario.sign != Sign::Negative || scenario.benchmark == Benchmark::NegativeCorr {
        return Err(wrong_regime("solve_ceiling", scenario));
    }
    require_concave(scenario)?;
    let lf = laissez_faire(scenario).into_values();
    let top = lf[lf.len() - 1];
    let mu = scenario.mu;

    let (ceiling, iterations, note) = if ceiling_foc_lhs(scenario, 0.0) <= mu {
        (0.0, 0, Some("ban".to_string()))
    } else {
        // μ - G(x) is nondecreasing; its sign change is the optimal ceiling
        let b = bisect_nondecreasing(|x| mu - ceiling_foc_lhs(scenario, x), 0.0, top, BOUND_TOL);
        (b.lo, b.iterations, None)
    };

    let diagnostics = Diagnostics {
        foc_residual: Some(ceiling_foc_lhs(scenario, ceiling) - mu),
        iterations,
    };
    if ceiling >= top - 2.0 * BOUND_TOL {
        return finish(
            scenario,
            PolicyKind::LaissezFaire,
            lf,
            diagnostics,
            Some("ceiling not binding".to_string()),
        );
    }
    let values = lf.iter().map(|&q| q.min(ceiling)).collect();
    finish(
        scenario,
        PolicyKind::Ceiling(ceiling),
        values,
        diagnostics,
        note,
    )
}

/// Uniform per-unit subsidy or tax equal to `μ`.
pub fn solve_price(scenario: &Scenario) -> Result<Policy, SolveError> {
    let (price, kind) = match (scenario.sign, scenario.benchmark) {
        (Sign::Positive, Benchmark::PositiveCorr) => (
            scenario.cost - scenario.mu,
            PolicyKind::UniformSubsidy(scenario.mu),
        ),
        (Sign::Negative, Benchmark::NegativeCorr) => (
            scenario.cost + scenario.mu,
            PolicyKind::UniformTax(scenario.mu),
        ),
        _ => return Err(wrong_regime("solve_price", scenario)),
    };
    let values = scenario
        .types
        .grid()
        .iter()
        .map(|&t| scenario.demand(price, t))
        .collect();
    finish(scenario, kind, values, Diagnostics::default(), None)
}

/// Dispatches to the optimal instrument for the scenario's cell.
pub fn solve(scenario: &Scenario) -> Result<Policy, SolveError> {
    require_concave(scenario)?;
    if scenario.xi_bar.is_some() {
        // no closed form under a support bound; report the floor's bounded guarantee
        let mut p = solve_floor(scenario)?;
        p.note = Some(match p.note {
            Some(n) => format!("{n}; guarantee under the support bound"),
            None => "guarantee under the support bound".to_string(),
        });
        return Ok(p);
    }
    match (scenario.sign, scenario.benchmark) {
        (Sign::Positive, Benchmark::Unknown | Benchmark::NegativeCorr) => solve_floor(scenario),
        (Sign::Negative, Benchmark::Unknown | Benchmark::PositiveCorr) => solve_ceiling(scenario),
        (Sign::Positive, Benchmark::PositiveCorr) | (Sign::Negative, Benchmark::NegativeCorr) => {
            solve_price(scenario)
        }
    }
}

/// Bayesian comparator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianSchedule {
    pub schedule: AllocationSchedule,
    /// `D(c ∓ m_i, θ_i)` before any pooling; may be non-monotone.
    pub pointwise: Vec<f64>,
    /// Whether pooling was needed to restore monotonicity.
    pub ironed: bool,
}

/// Pointwise Bayesian allocation `D(c ∓ m(θ), θ)` for a known conditional
/// mean, ironed when it is not monotone.
///
/// Ironing pools the effective willingness to pay `θ ± m(θ)` with weighted
/// pool-adjacent-violators and prices the pooled values at `c`. For the
/// quadratic family this is the exact monotone-constrained optimum.
pub fn bayesian_pointwise(scenario: &Scenario, m: &ConditionalMean) -> BayesianSchedule {
    let sign = match scenario.sign {
        Sign::Positive => 1.0,
        Sign::Negative => -1.0,
    };
    let effective: Vec<f64> = scenario
        .types
        .grid()
        .iter()
        .zip(m.values())
        .map(|(&t, &mi)| t + sign * mi)
        .collect();
    let price = |eff: &[f64]| -> Vec<f64> {
        eff.iter()
            .map(|&e| scenario.demand(scenario.cost, e))
            .collect()
    };
    let pointwise = price(&effective);
    if pointwise.windows(2).all(|w| w[1] >= w[0]) {
        return BayesianSchedule {
            schedule: AllocationSchedule::from_values_unchecked(pointwise.clone()),
            pointwise,
            ironed: false,
        };
    }
    let pooled = pava_nondecreasing(&effective, scenario.types.weights());
    BayesianSchedule {
        schedule: AllocationSchedule::from_values_unchecked(price(&pooled)),
        pointwise,
        ironed: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TypeDistribution, UtilityModel};
    use crate::worstcase::{nature_best_response, MonotoneClass};

    fn base(n: usize, mu: f64, sign: Sign, benchmark: Benchmark) -> Scenario {
        Scenario {
            utility: UtilityModel::Quadratic { beta: 1.0 },
            types: TypeDistribution::uniform(0.0, 1.0, n).unwrap(),
            cost: 0.5,
            mu,
            cap: 1.0,
            sign,
            benchmark,
            xi_bar: None,
        }
    }

    #[test]
    fn floor_matches_closed_form_foc() {
        let s = base(1001, 0.32, Sign::Positive, Benchmark::Unknown);
        let p = solve_floor(&s).unwrap();
        let PolicyKind::Floor(fl) = p.kind else {
            panic!("{:?}", p.kind)
        };
        assert!((fl - 0.3).abs() < 1e-3, "{fl}");
        assert!(p.diagnostics.foc_residual.unwrap().abs() <= 1e-8);
        assert!((p.guarantee - 0.052333).abs() < 2e-3);
    }

    #[test]
    fn floor_zero_mu_is_laissez_faire() {
        let s = base(101, 0.0, Sign::Positive, Benchmark::Unknown);
        let p = solve_floor(&s).unwrap();
        assert_eq!(p.kind, PolicyKind::LaissezFaire);
        assert_eq!(p.schedule, laissez_faire(&s));
    }

    #[test]
    fn floor_corner_at_cap() {
        let s = base(101, 50.0, Sign::Positive, Benchmark::Unknown);
        assert!(floor_foc_lhs(&s, 1.0) < 50.0);
        let p = solve_floor(&s).unwrap();
        assert_eq!(p.kind, PolicyKind::Floor(1.0));
        assert!(p.schedule.values().iter().all(|&q| q == 1.0));
    }

    #[test]
    fn floor_rejects_other_cells() {
        let s = base(11, 0.2, Sign::Positive, Benchmark::PositiveCorr);
        assert!(matches!(
            solve_floor(&s),
            Err(SolveError::WrongRegime { .. })
        ));
        let s = base(11, 0.2, Sign::Negative, Benchmark::Unknown);
        assert!(matches!(
            solve_floor(&s),
            Err(SolveError::WrongRegime { .. })
        ));
    }

    #[test]
    fn ceiling_zero_mu_is_laissez_faire() {
        let s = base(101, 0.0, Sign::Negative, Benchmark::Unknown);
        let p = solve_ceiling(&s).unwrap();
        assert_eq!(p.kind, PolicyKind::LaissezFaire);
        assert_eq!(p.schedule, laissez_faire(&s));
    }

    #[test]
    fn ceiling_large_mu_bans() {
        let s = base(101, 10.0, Sign::Negative, Benchmark::PositiveCorr);
        assert!(ceiling_foc_lhs(&s, 0.0) < 10.0);
        let p = solve_ceiling(&s).unwrap();
        assert_eq!(p.kind, PolicyKind::Ceiling(0.0));
        assert!(p.schedule.values().iter().all(|&q| q == 0.0));
        assert_eq!(p.guarantee, 0.0);
    }

    #[test]
    fn ceiling_interior_closed_form() {
        // G(x) = ∫_{c+x}^1 (θ - x - c) dθ = (1 - c - x)²/2 on uniform[0,1]
        let s = base(2001, 0.02, Sign::Negative, Benchmark::Unknown);
        let p = solve_ceiling(&s).unwrap();
        let PolicyKind::Ceiling(x) = p.kind else {
            panic!("{:?}", p.kind)
        };
        let expected = 0.5 - (2.0f64 * 0.02).sqrt();
        assert!((x - expected).abs() < 2e-3, "{x} vs {expected}");
        assert!(p.diagnostics.foc_residual.unwrap().abs() <= 1e-8);
    }

    #[test]
    fn price_examples() {
        let s = base(11, 0.32, Sign::Positive, Benchmark::PositiveCorr);
        let p = solve_price(&s).unwrap();
        assert_eq!(p.kind, PolicyKind::UniformSubsidy(0.32));
        for (&t, &q) in s.types.grid().iter().zip(p.schedule.values()) {
            assert!((q - (t - 0.18f64).clamp(0.0, 1.0)).abs() < 1e-12);
        }
        let s = base(11, 0.2, Sign::Negative, Benchmark::NegativeCorr);
        let p = solve_price(&s).unwrap();
        assert_eq!(p.kind, PolicyKind::UniformTax(0.2));
        for (&t, &q) in s.types.grid().iter().zip(p.schedule.values()) {
            assert!((q - (t - 0.7f64).clamp(0.0, 1.0)).abs() < 1e-12);
        }
        let s = base(11, 0.0, Sign::Positive, Benchmark::PositiveCorr);
        assert_eq!(solve_price(&s).unwrap().schedule, laissez_faire(&s));
    }

    #[test]
    fn dispatch_table() {
        use PolicyKind::*;
        let cases = [
            (Sign::Positive, Benchmark::Unknown, "Floor"),
            (Sign::Positive, Benchmark::NegativeCorr, "Floor"),
            (Sign::Positive, Benchmark::PositiveCorr, "UniformSubsidy"),
            (Sign::Negative, Benchmark::Unknown, "Ceiling"),
            (Sign::Negative, Benchmark::PositiveCorr, "Ceiling"),
            (Sign::Negative, Benchmark::NegativeCorr, "UniformTax"),
        ];
        for (sign, b, name) in cases {
            // floors bind only once μ exceeds E[(c - θ)₊] = 0.125
            let mu = if sign == Sign::Positive { 0.2 } else { 0.05 };
            let s = base(101, mu, sign, b);
            assert_eq!(solve(&s).unwrap().kind.name(), name, "{sign:?}/{b:?}");
        }
        let s = base(101, 0.05, Sign::Positive, Benchmark::PositiveCorr);
        assert_eq!(solve(&s).unwrap().kind, UniformSubsidy(0.05));
        let mut unit = s.clone();
        unit.utility = UtilityModel::LinearUnitDemand;
        assert_eq!(solve(&unit), Err(SolveError::Unsupported("unit")));
    }

    #[test]
    fn bayesian_constant_mean_is_price() {
        for (sign, b) in [
            (Sign::Positive, Benchmark::PositiveCorr),
            (Sign::Negative, Benchmark::NegativeCorr),
        ] {
            let s = base(21, 0.3, sign, b);
            let m = ConditionalMean::constant(&s.types, 0.3, MonotoneClass::Any);
            let bayes = bayesian_pointwise(&s, &m);
            assert!(!bayes.ironed);
            let price = solve_price(&s).unwrap().schedule;
            for (a, b) in bayes.schedule.values().iter().zip(price.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bayesian_vs_robust_floor() {
        let s = base(5, 0.3, Sign::Positive, Benchmark::Unknown);
        let floor = solve_floor(&s).unwrap();
        assert!(matches!(floor.kind, PolicyKind::Floor(x) if (x - 0.25).abs() < 1e-9));
        let m = nature_best_response(&floor.schedule, &s);
        assert!(m.values()[0] > 0.0 && m.values()[1..].iter().all(|&x| x == 0.0));
        let bayes = bayesian_pointwise(&s, &m);
        // the concentrated mean lifts only the bottom type
        assert_ne!(bayes.pointwise, floor.schedule.values());
        assert!((bayes.pointwise[0] - 1.0).abs() < 1e-12);
        assert_eq!(&bayes.pointwise[1..], &laissez_faire(&s).values()[1..]);
        // once ironed, the Bayesian reply to the worst case is the robust floor
        assert!(bayes.ironed);
        for (a, b) in bayes.schedule.values().iter().zip(floor.schedule.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bayesian_top_atom_wedge() {
        let s = base(5, 0.1, Sign::Positive, Benchmark::Unknown);
        let f = s.types.weights()[4];
        let mut vals = vec![0.0; 5];
        vals[4] = 0.1 / f;
        let m = ConditionalMean::new(vals, MonotoneClass::Any, &s.types, 0.1).unwrap();
        let bayes = bayesian_pointwise(&s, &m);
        assert!(!bayes.ironed);
        let lf = laissez_faire(&s);
        assert_eq!(&bayes.schedule.values()[..4], &lf.values()[..4]);
        assert!(bayes.schedule.values()[4] > lf.values()[4]);
    }

    #[test]
    fn bayesian_irons_bottom_heavy_mean() {
        let s = base(5, 0.2, Sign::Positive, Benchmark::Unknown);
        let mut vals = vec![0.0; 5];
        vals[0] = 0.2 / s.types.weights()[0];
        let m = ConditionalMean::new(vals, MonotoneClass::Any, &s.types, 0.2).unwrap();
        let bayes = bayesian_pointwise(&s, &m);
        assert!(bayes.ironed);
        let q = bayes.schedule.values();
        assert!(q.windows(2).all(|w| w[1] >= w[0]));
        // effective types [1, .25, .5, .75, 1] pool to [7/12, 7/12, 7/12, .75, 1]
        for &x in &q[..3] {
            assert!((x - 1.0 / 12.0).abs() < 1e-12);
        }
        assert!((q[3] - 0.25).abs() < 1e-12);
        assert!((q[4] - 0.5).abs() < 1e-12);
    }
}
