//! Nature's inner problem.
//!
//! For a nondecreasing schedule the worst-case externality collapses to one
//! statistic of the schedule: its minimum, mean or maximum depending on the
//! sign and the correlation benchmark. With a known support bound `ξ̄` the
//! minimum is replaced by a lower-tail expected shortfall at level `μ/ξ̄`.
//!
//! [`nature_best_response`] returns an explicit minimizer. The admissible
//! conditional means form a polytope whose extreme points are single atoms
//! (no monotonicity), scaled lower indicators `1{i ≤ k}` (nonincreasing) or
//! scaled upper indicators `1{i ≥ k}` (nondecreasing).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Benchmark, Scenario, Sign, TypeDistribution, MONO_TOL};
use crate::schedule::{schedule_stats, AllocationSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorstCaseError {
    #[error("scenario has no support bound xi_bar")]
    MissingBound,
    #[error("support bound requires positive sign and unknown correlation")]
    BoundUnsupported,
    #[error("invalid conditional mean: {0}")]
    InvalidConditionalMean(String),
}

/// Monotonicity restriction on Nature's conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneClass {
    Any,
    Nondecreasing,
    Nonincreasing,
}

impl MonotoneClass {
    pub fn for_benchmark(benchmark: Benchmark) -> Self {
        match benchmark {
            Benchmark::Unknown => MonotoneClass::Any,
            Benchmark::PositiveCorr => MonotoneClass::Nondecreasing,
            Benchmark::NegativeCorr => MonotoneClass::Nonincreasing,
        }
    }
}

/// Nature's strategy: expected externality per unit at each grid type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMean {
    values: Vec<f64>,
    class: MonotoneClass,
}

impl ConditionalMean {
    pub fn new(
        values: Vec<f64>,
        class: MonotoneClass,
        types: &TypeDistribution,
        mu: f64,
    ) -> Result<Self, WorstCaseError> {
        let bad = |msg: String| Err(WorstCaseError::InvalidConditionalMean(msg));
        if values.len() != types.len() {
            return bad(format!("{} values for {} types", values.len(), types.len()));
        }
        if let Some(i) = values.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return bad(format!("value {i} is negative or not finite"));
        }
        let mean = types.mean_of(&values);
        if (mean - mu).abs() > 1e-9 * mu.max(1.0) {
            return bad(format!("mean {mean} differs from mu {mu}"));
        }
        let ok = match class {
            MonotoneClass::Any => true,
            MonotoneClass::Nondecreasing => values.windows(2).all(|w| w[1] >= w[0] - MONO_TOL),
            MonotoneClass::Nonincreasing => values.windows(2).all(|w| w[1] <= w[0] + MONO_TOL),
        };
        if !ok {
            return bad(format!("values are not {class:?}"));
        }
        Ok(Self { values, class })
    }

    /// `m ≡ μ`, which belongs to every class.
    pub fn constant(types: &TypeDistribution, mu: f64, class: MonotoneClass) -> Self {
        Self {
            values: vec![mu; types.len()],
            class,
        }
    }

    pub(crate) fn from_parts_unchecked(values: Vec<f64>, class: MonotoneClass) -> Self {
        Self { values, class }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class(&self) -> MonotoneClass {
        self.class
    }

    /// `Σ f_i m_i q_i`.
    pub fn externality(&self, schedule: &AllocationSchedule, types: &TypeDistribution) -> f64 {
        types
            .weights()
            .iter()
            .zip(&self.values)
            .zip(schedule.values())
            .map(|((f, m), q)| f * m * q)
            .sum()
    }
}

/// Signed worst-case externality term: `+μ·min q`, `+μ·mean q`,
/// `-μ·max q` or `-μ·mean q` by cell.
pub fn worst_case_externality(schedule: &AllocationSchedule, scenario: &Scenario) -> f64 {
    let st = schedule_stats(schedule, scenario);
    let mu = scenario.mu;
    match (scenario.sign, scenario.benchmark) {
        (Sign::Positive, Benchmark::Unknown | Benchmark::NegativeCorr) => mu * st.min,
        (Sign::Positive, Benchmark::PositiveCorr) => mu * st.mean,
        (Sign::Negative, Benchmark::Unknown | Benchmark::PositiveCorr) => -mu * st.max,
        (Sign::Negative, Benchmark::NegativeCorr) => -mu * st.mean,
    }
}

/// Mass taken from each atom when filling the lowest `alpha` of `F`,
/// splitting the straddling atom proportionally.
fn lower_tail_masses(weights: &[f64], alpha: f64) -> Vec<f64> {
    let mut remaining = alpha;
    weights
        .iter()
        .map(|&f| {
            let take = f.min(remaining).max(0.0);
            remaining -= take;
            take
        })
        .collect()
}

fn bound_alpha(scenario: &Scenario) -> Result<(f64, f64), WorstCaseError> {
    let xi_bar = scenario.xi_bar.ok_or(WorstCaseError::MissingBound)?;
    if (scenario.sign, scenario.benchmark) != (Sign::Positive, Benchmark::Unknown) {
        return Err(WorstCaseError::BoundUnsupported);
    }
    Ok((xi_bar, (scenario.mu / xi_bar).min(1.0)))
}

/// `ξ̄ ∫₀^α q(F⁻¹(u)) du` with `α = μ/ξ̄`, exact on the grid's
/// piecewise-constant quantile function.
pub fn worst_case_bounded(
    schedule: &AllocationSchedule,
    scenario: &Scenario,
) -> Result<f64, WorstCaseError> {
    let (xi_bar, alpha) = bound_alpha(scenario)?;
    let masses = lower_tail_masses(scenario.types.weights(), alpha);
    Ok(xi_bar
        * masses
            .iter()
            .zip(schedule.values())
            .map(|(w, q)| w * q)
            .sum::<f64>())
}

/// An explicit conditional mean attaining the worst case for `schedule`.
///
/// Ties among extreme points resolve to the smallest index.
pub fn nature_best_response(schedule: &AllocationSchedule, scenario: &Scenario) -> ConditionalMean {
    let types = &scenario.types;
    let f = types.weights();
    let q = schedule.values();
    let mu = scenario.mu;
    let n = f.len();

    if let Ok((xi_bar, alpha)) = bound_alpha(scenario) {
        let values = lower_tail_masses(f, alpha)
            .iter()
            .zip(f)
            .map(|(take, fi)| xi_bar * take / fi)
            .collect();
        return ConditionalMean::from_parts_unchecked(values, MonotoneClass::Any);
    }

    let class = MonotoneClass::for_benchmark(scenario.benchmark);
    let better = |cand: f64, best: f64| match scenario.sign {
        Sign::Positive => cand < best,
        Sign::Negative => cand > best,
    };

    // (objective, index) of the chosen extreme point.
    let mut best: Option<(f64, usize)> = None;
    let mut consider = |value: f64, k: usize| match best {
        Some((b, _)) if !better(value, b) => {}
        _ => best = Some((value, k)),
    };

    match class {
        MonotoneClass::Any => {
            for (i, &qi) in q.iter().enumerate() {
                consider(qi, i);
            }
        }
        MonotoneClass::Nonincreasing => {
            let (mut mass, mut acc) = (0.0, 0.0);
            for i in 0..n {
                mass += f[i];
                acc += f[i] * q[i];
                consider(acc / mass, i);
            }
        }
        MonotoneClass::Nondecreasing => {
            // suffix averages, scanned so that ties keep the smallest k
            let mut suffix = vec![0.0; n];
            let (mut mass, mut acc) = (0.0, 0.0);
            for i in (0..n).rev() {
                mass += f[i];
                acc += f[i] * q[i];
                suffix[i] = acc / mass;
            }
            for (k, &avg) in suffix.iter().enumerate() {
                consider(avg, k);
            }
        }
    }

    let k = best.map(|(_, k)| k).unwrap_or(0);
    let values = match class {
        MonotoneClass::Any => (0..n)
            .map(|i| if i == k { mu / f[i] } else { 0.0 })
            .collect(),
        MonotoneClass::Nonincreasing => {
            let mass: f64 = f[..=k].iter().sum();
            (0..n)
                .map(|i| if i <= k { mu / mass } else { 0.0 })
                .collect()
        }
        MonotoneClass::Nondecreasing => {
            let mass: f64 = f[k..].iter().sum();
            (0..n)
                .map(|i| if i >= k { mu / mass } else { 0.0 })
                .collect()
        }
    };
    ConditionalMean::from_parts_unchecked(values, class)
}

/// Total surplus under Nature's worst response:
/// `Σ f_i [u(q_i, θ_i) - c q_i]` plus the signed externality term.
pub fn worst_case_welfare(
    schedule: &AllocationSchedule,
    scenario: &Scenario,
) -> Result<f64, WorstCaseError> {
    let surplus = scenario.private_surplus(schedule.values());
    let ext = if scenario.xi_bar.is_some() {
        worst_case_bounded(schedule, scenario)?
    } else {
        worst_case_externality(schedule, scenario)
    };
    Ok(surplus + ext)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{laissez_faire, UtilityModel};
    use crate::schedule::make_schedule;
    use proptest::prelude::*;

    fn scen(types: TypeDistribution, mu: f64, sign: Sign, benchmark: Benchmark) -> Scenario {
        Scenario {
            utility: UtilityModel::Quadratic { beta: 1.0 },
            types,
            cost: 0.5,
            mu,
            cap: 1.0,
            sign,
            benchmark,
            xi_bar: None,
        }
    }

    fn three_atoms(sign: Sign, benchmark: Benchmark) -> Scenario {
        scen(
            TypeDistribution::new(vec![0.0, 0.5, 1.0], vec![0.25, 0.25, 0.5]).unwrap(),
            1.0,
            sign,
            benchmark,
        )
    }

    #[test]
    fn constant_schedule_all_cells() {
        for sign in Sign::ALL {
            for b in Benchmark::ALL {
                let s = three_atoms(sign, b);
                let sched = make_schedule(vec![0.4; 3], &s).unwrap();
                let expected = if sign == Sign::Positive { 0.4 } else { -0.4 };
                assert!((worst_case_externality(&sched, &s) - expected).abs() < 1e-15);
                let m = nature_best_response(&sched, &s);
                assert!((m.externality(&sched, &s.types) - 0.4).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_schedule_positive_cells() {
        let s = three_atoms(Sign::Positive, Benchmark::Unknown);
        let sched = make_schedule(vec![0.0, 0.0, 1.0], &s).unwrap();
        assert_eq!(worst_case_externality(&sched, &s), 0.0);
        let s = three_atoms(Sign::Positive, Benchmark::PositiveCorr);
        assert!((worst_case_externality(&sched, &s) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn best_response_concentrates_at_bottom() {
        let s = scen(
            TypeDistribution::uniform(0.0, 1.0, 5).unwrap(),
            0.7,
            Sign::Positive,
            Benchmark::Unknown,
        );
        let sched = make_schedule(vec![0.1, 0.2, 0.3, 0.4, 0.5], &s).unwrap();
        let m = nature_best_response(&sched, &s);
        assert!((m.values()[0] - 0.7 * 5.0).abs() < 1e-12);
        assert!(m.values()[1..].iter().all(|&x| x == 0.0));
        assert!((m.externality(&sched, &s.types) - 0.07).abs() < 1e-12);
    }

    #[test]
    fn best_response_nondecreasing_two_atoms() {
        let s = scen(
            TypeDistribution::new(vec![0.2, 0.8], vec![0.5, 0.5]).unwrap(),
            1.0,
            Sign::Positive,
            Benchmark::PositiveCorr,
        );
        let sched = make_schedule(vec![0.0, 1.0], &s).unwrap();
        let m = nature_best_response(&sched, &s);
        assert_eq!(m.values(), &[1.0, 1.0]);
        assert!((m.externality(&sched, &s.types) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn best_response_for_constant_schedule_is_optimal() {
        let s = three_atoms(Sign::Positive, Benchmark::Unknown);
        let sched = make_schedule(vec![0.6; 3], &s).unwrap();
        let m = nature_best_response(&sched, &s);
        let flat = ConditionalMean::constant(&s.types, 1.0, MonotoneClass::Any);
        assert!(
            (flat.externality(&sched, &s.types) - m.externality(&sched, &s.types)).abs() < 1e-12
        );
    }

    #[test]
    fn conditional_mean_validation() {
        let t = TypeDistribution::new(vec![0.2, 0.8], vec![0.5, 0.5]).unwrap();
        assert!(
            ConditionalMean::new(vec![1.0, 1.0], MonotoneClass::Nondecreasing, &t, 1.0).is_ok()
        );
        assert!(
            ConditionalMean::new(vec![1.5, 0.5], MonotoneClass::Nondecreasing, &t, 1.0).is_err()
        );
        assert!(
            ConditionalMean::new(vec![1.5, 0.5], MonotoneClass::Nonincreasing, &t, 1.0).is_ok()
        );
        assert!(ConditionalMean::new(vec![1.5, 0.6], MonotoneClass::Any, &t, 1.0).is_err());
        assert!(ConditionalMean::new(vec![2.5, -0.5], MonotoneClass::Any, &t, 1.0).is_err());
    }

    #[test]
    fn bounded_requires_xi_bar() {
        let s = three_atoms(Sign::Positive, Benchmark::Unknown);
        let sched = make_schedule(vec![0.0, 0.5, 1.0], &s).unwrap();
        assert_eq!(
            worst_case_bounded(&sched, &s),
            Err(WorstCaseError::MissingBound)
        );
        let mut neg = s.clone();
        neg.sign = Sign::Negative;
        neg.xi_bar = Some(2.0);
        assert_eq!(
            worst_case_bounded(&sched, &neg),
            Err(WorstCaseError::BoundUnsupported)
        );
    }

    #[test]
    fn bounded_identity_schedule_fine_grid() {
        let mut s = scen(
            TypeDistribution::uniform(0.0, 1.0, 1001).unwrap(),
            0.5,
            Sign::Positive,
            Benchmark::Unknown,
        );
        s.xi_bar = Some(1.0);
        let sched = make_schedule(s.types.grid().to_vec(), &s).unwrap();
        let v = worst_case_bounded(&sched, &s).unwrap();
        assert!((v - 0.125).abs() < 1e-3, "{v}");
    }

    #[test]
    fn bounded_full_support_is_mean_and_splits_atoms() {
        let mut s = three_atoms(Sign::Positive, Benchmark::Unknown);
        let sched = make_schedule(vec![0.2, 0.6, 1.0], &s).unwrap();
        s.xi_bar = Some(1.0);
        let mean = s.types.mean_of(sched.values());
        assert!((worst_case_bounded(&sched, &s).unwrap() - mean).abs() < 1e-15);
        // alpha = 0.4: whole first atom (0.25) plus 0.15 of the second
        s.xi_bar = Some(2.5);
        let v = worst_case_bounded(&sched, &s).unwrap();
        assert!((v - 2.5 * (0.25 * 0.2 + 0.15 * 0.6)).abs() < 1e-15);
        let m = nature_best_response(&sched, &s);
        assert!((m.externality(&sched, &s.types) - v).abs() < 1e-12);
        assert!(m.values().iter().all(|&x| x <= 2.5 + 1e-12));
    }

    #[test]
    fn bounded_large_xi_bar_tends_to_min() {
        let mut s = three_atoms(Sign::Positive, Benchmark::Unknown);
        let sched = make_schedule(vec![0.2, 0.6, 1.0], &s).unwrap();
        s.xi_bar = Some(1e9);
        let v = worst_case_bounded(&sched, &s).unwrap();
        assert!((v - 0.2).abs() < 1e-9);
    }

    #[test]
    fn welfare_zero_schedule() {
        for sign in Sign::ALL {
            for b in Benchmark::ALL {
                let s = three_atoms(sign, b);
                let sched = make_schedule(vec![0.0; 3], &s).unwrap();
                assert_eq!(worst_case_welfare(&sched, &s).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn welfare_laissez_faire_fine_grid() {
        let s = scen(
            TypeDistribution::uniform(0.0, 1.0, 1001).unwrap(),
            0.32,
            Sign::Positive,
            Benchmark::Unknown,
        );
        let lf = laissez_faire(&s);
        let w = worst_case_welfare(&lf, &s).unwrap();
        assert!((w - 1.0 / 48.0).abs() < 1e-3, "{w}");
    }

    #[test]
    fn welfare_floor_schedule_fine_grid() {
        let s = scen(
            TypeDistribution::uniform(0.0, 1.0, 1001).unwrap(),
            0.32,
            Sign::Positive,
            Benchmark::Unknown,
        );
        let values = s
            .types
            .grid()
            .iter()
            .map(|t| (t - 0.5f64).max(0.3))
            .collect();
        let sched = make_schedule(values, &s).unwrap();
        let w = worst_case_welfare(&sched, &s).unwrap();
        assert!((w - (-0.06 + 0.098 / 6.0 + 0.096)).abs() < 1e-3, "{w}");
    }

    fn monotone(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|mut v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        })
    }

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn best_response_attains_closed_form(
            n in 1usize..10, q in monotone(10), w in weights(10), mu in 0.0f64..3.0,
            neg in any::<bool>(), b in 0usize..3,
        ) {
            let w: Vec<f64> = { let s: f64 = w[..n].iter().sum(); w[..n].iter().map(|x| x / s).collect() };
            let grid = (0..n).map(|i| i as f64 * 0.1).collect();
            let types = TypeDistribution::new_unchecked(grid, w);
            let sign = if neg { Sign::Negative } else { Sign::Positive };
            let s = scen(types, mu, sign, Benchmark::ALL[b]);
            let sched = make_schedule(q[..n].to_vec(), &s).unwrap();
            let m = nature_best_response(&sched, &s);
            let attained = m.externality(&sched, &s.types);
            let signed = if neg { -attained } else { attained };
            prop_assert!((signed - worst_case_externality(&sched, &s)).abs() < 1e-9);
            prop_assert!(ConditionalMean::new(m.values().to_vec(), m.class(), &s.types, mu).is_ok());
        }

        #[test]
        fn unknown_dominated_by_sign_restricted(
            q in monotone(8), mu in 0.0f64..2.0,
        ) {
            let types = TypeDistribution::uniform(0.0, 1.0, 8).unwrap();
            let val = |b| {
                let s = scen(types.clone(), mu, Sign::Positive, b);
                worst_case_externality(&make_schedule(q.clone(), &s).unwrap(), &s)
            };
            let unknown = val(Benchmark::Unknown);
            prop_assert!(unknown <= val(Benchmark::PositiveCorr) + 1e-15);
            prop_assert!(unknown <= val(Benchmark::NegativeCorr) + 1e-15);
        }

        #[test]
        fn bounded_sandwich_and_monotone(
            q in monotone(9), w in weights(9), mu in 0.01f64..1.0,
            r1 in 1.0f64..50.0, r2 in 1.0f64..50.0,
        ) {
            let types = TypeDistribution::new_unchecked((0..9).map(|i| i as f64).collect(), w);
            let mut s = scen(types, mu, Sign::Positive, Benchmark::Unknown);
            let sched = make_schedule(q.clone(), &s).unwrap();
            let st = schedule_stats(&sched, &s);
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            s.xi_bar = Some(mu * lo);
            let v_lo = worst_case_bounded(&sched, &s).unwrap();
            s.xi_bar = Some(mu * hi);
            let v_hi = worst_case_bounded(&sched, &s).unwrap();
            prop_assert!(mu * st.min <= v_hi + 1e-12);
            prop_assert!(v_hi <= v_lo + 1e-12);
            prop_assert!(v_lo <= mu * st.mean + 1e-12);
        }
    }
}
