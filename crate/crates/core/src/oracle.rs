//! Brute-force minimax oracle.
//!
//! Enumerates every nondecreasing schedule on a small quantity lattice,
//! solves Nature's inner problem by scanning the extreme points of the
//! admissible conditional-mean polytope, and keeps the best schedule. Nothing
//! here calls the closed forms in [`crate::worstcase`] or [`crate::solvers`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Scenario, Sign, TypeDistribution};
use crate::schedule::AllocationSchedule;
use crate::worstcase::{ConditionalMean, MonotoneClass};

pub const MAX_TYPES: usize = 7;
pub const MAX_LEVELS: usize = 9;
pub const MAX_SCHEDULES: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration of {n_types} types x {n_levels} levels is too large")]
    TooLarge { n_types: usize, n_levels: usize },
    #[error("invalid quantization: {0}")]
    Invalid(String),
    #[error("scenario has {got} types but the quantization expects {expected}")]
    GridMismatch { expected: usize, got: usize },
}

/// Size of the brute-force lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantization {
    pub n_types: usize,
    pub n_levels: usize,
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (1..=k).fold(1u64, |acc, i| acc * (n - k + i) / i)
}

impl Quantization {
    pub fn new(n_types: usize, n_levels: usize) -> Result<Self, OracleError> {
        if n_types == 0 || n_levels < 2 {
            return Err(OracleError::Invalid(
                "need at least one type and two quantity levels".into(),
            ));
        }
        if n_types > MAX_TYPES || n_levels > MAX_LEVELS {
            return Err(OracleError::TooLarge { n_types, n_levels });
        }
        let q = Self { n_types, n_levels };
        if q.schedule_count() >= MAX_SCHEDULES {
            return Err(OracleError::TooLarge { n_types, n_levels });
        }
        Ok(q)
    }

    /// Number of nondecreasing maps: `C(n_types + n_levels - 1, n_types)`.
    pub fn schedule_count(&self) -> u64 {
        binomial(
            (self.n_types + self.n_levels - 1) as u64,
            self.n_types as u64,
        )
    }

    /// Quantity levels, uniform on `[0, cap]`.
    pub fn levels(&self, cap: f64) -> Vec<f64> {
        (0..self.n_levels)
            .map(|j| cap * j as f64 / (self.n_levels - 1) as f64)
            .collect()
    }

    pub fn spacing(&self, cap: f64) -> f64 {
        cap / (self.n_levels - 1) as f64
    }
}

/// Nondecreasing index sequences of a fixed length over `min..levels`, in
/// lexicographic order.
#[derive(Debug, Clone)]
struct MonotoneIndices {
    current: Option<Vec<usize>>,
    levels: usize,
}

impl MonotoneIndices {
    fn new(len: usize, levels: usize, min: usize) -> Self {
        Self {
            current: (min < levels).then(|| vec![min; len]),
            levels,
        }
    }
}

impl Iterator for MonotoneIndices {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let mut nxt = out.clone();
        if let Some(i) = (0..nxt.len()).rev().find(|&i| nxt[i] + 1 < self.levels) {
            let v = nxt[i] + 1;
            for x in &mut nxt[i..] {
                *x = v;
            }
            self.current = Some(nxt);
        }
        Some(out)
    }
}

fn check_grid(q: &Quantization, scenario: &Scenario) -> Result<(), OracleError> {
    if scenario.types.len() != q.n_types {
        return Err(OracleError::GridMismatch {
            expected: q.n_types,
            got: scenario.types.len(),
        });
    }
    Ok(())
}

/// Every nondecreasing map from the type grid into the quantity levels,
/// each exactly once, in lexicographic order.
pub fn enumerate_schedules(
    quantization: &Quantization,
    scenario: &Scenario,
) -> Result<impl Iterator<Item = AllocationSchedule>, OracleError> {
    check_grid(quantization, scenario)?;
    let levels = quantization.levels(scenario.cap);
    Ok(
        MonotoneIndices::new(quantization.n_types, quantization.n_levels, 0).map(move |idx| {
            AllocationSchedule::from_values_unchecked(idx.iter().map(|&j| levels[j]).collect())
        }),
    )
}

/// Extreme points of `{m ≥ 0 : Σ f m = μ}` restricted to `class`.
fn extreme_points(types: &TypeDistribution, mu: f64, class: MonotoneClass) -> Vec<Vec<f64>> {
    let f = types.weights();
    let n = f.len();
    match class {
        MonotoneClass::Any => (0..n)
            .map(|k| {
                let mut m = vec![0.0; n];
                m[k] = mu / f[k];
                m
            })
            .collect(),
        MonotoneClass::Nonincreasing => (0..n)
            .map(|k| {
                let mass: f64 = f[..=k].iter().sum();
                (0..n)
                    .map(|i| if i <= k { mu / mass } else { 0.0 })
                    .collect()
            })
            .collect(),
        MonotoneClass::Nondecreasing => (0..n)
            .map(|k| {
                let mass: f64 = f[k..].iter().sum();
                (0..n)
                    .map(|i| if i >= k { mu / mass } else { 0.0 })
                    .collect()
            })
            .collect(),
    }
}

/// Extreme points of `{0 ≤ m ≤ ξ̄ : Σ f m = μ}`: every coordinate but one
/// sits at a bound and the free one absorbs the remaining mass.
fn box_extreme_points(types: &TypeDistribution, mu: f64, xi_bar: f64) -> Vec<Vec<f64>> {
    let f = types.weights();
    let n = f.len();
    let mut out = Vec::new();
    for free in 0..n {
        for mask in 0u32..(1 << (n - 1)) {
            let mut m = vec![0.0; n];
            let mut used = 0.0;
            for (bit, i) in (0..n).filter(|&i| i != free).enumerate() {
                if mask >> bit & 1 == 1 {
                    m[i] = xi_bar;
                    used += f[i] * xi_bar;
                }
            }
            let rest = (mu - used) / f[free];
            if (-1e-12..=xi_bar + 1e-12).contains(&rest) {
                m[free] = rest.clamp(0.0, xi_bar);
                out.push(m);
            }
        }
    }
    out
}

fn dot(types: &TypeDistribution, m: &[f64], q: &[f64]) -> f64 {
    types
        .weights()
        .iter()
        .zip(m)
        .zip(q)
        .map(|((f, m), q)| f * m * q)
        .sum()
}

/// Nature's optimum over the discretized strategy polytope, signed so that
/// adding it to private surplus gives total surplus.
pub fn inner_min(schedule: &AllocationSchedule, scenario: &Scenario) -> f64 {
    let points = match scenario.xi_bar {
        Some(xb) => box_extreme_points(&scenario.types, scenario.mu, xb),
        None => extreme_points(
            &scenario.types,
            scenario.mu,
            MonotoneClass::for_benchmark(scenario.benchmark),
        ),
    };
    let values = points
        .iter()
        .map(|m| dot(&scenario.types, m, schedule.values()));
    match scenario.sign {
        Sign::Positive => values.fold(f64::INFINITY, f64::min),
        Sign::Negative => -values.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Best enumerated schedule and its max-min value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    pub value: f64,
    pub schedule: AllocationSchedule,
    pub schedules_evaluated: u64,
}

fn objective(scenario: &Scenario, values: &[f64]) -> f64 {
    let surplus: f64 = scenario
        .types
        .grid()
        .iter()
        .zip(scenario.types.weights())
        .zip(values)
        .map(|((&t, &f), &q)| f * (scenario.utility.u(q, t) - scenario.cost * q))
        .sum();
    surplus
        + inner_min(
            &AllocationSchedule::from_values_unchecked(values.to_vec()),
            scenario,
        )
}

/// `(value, indices)` ordering: higher value wins, then the
/// lexicographically smaller schedule.
fn prefer(a: (f64, Vec<usize>), b: (f64, Vec<usize>)) -> (f64, Vec<usize>) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Exhaustive max-min over the quantized schedules. Partitions by the first
/// coordinate run in parallel; the merge is order-independent.
pub fn minimax_bruteforce(
    scenario: &Scenario,
    quantization: &Quantization,
) -> Result<MinimaxResult, OracleError> {
    check_grid(quantization, scenario)?;
    let levels = quantization.levels(scenario.cap);
    let n = quantization.n_types;
    let k = quantization.n_levels;

    let (value, idx) = (0..k)
        .into_par_iter()
        .map(|first| {
            MonotoneIndices::new(n - 1, k, first)
                .map(|tail| {
                    let mut idx = Vec::with_capacity(n);
                    idx.push(first);
                    idx.extend(tail);
                    let q: Vec<f64> = idx.iter().map(|&j| levels[j]).collect();
                    (objective(scenario, &q), idx)
                })
                .reduce(prefer)
                .expect("partition is nonempty")
        })
        .reduce_with(prefer)
        .expect("at least two levels");

    Ok(MinimaxResult {
        value,
        schedule: AllocationSchedule::from_values_unchecked(
            idx.iter().map(|&j| levels[j]).collect(),
        ),
        schedules_evaluated: quantization.schedule_count(),
    })
}

/// Worst loss from restricting schedules to the lattice.
///
/// Rounding any monotone schedule to the nearest level keeps it monotone and
/// moves each quantity by at most half the spacing. Private surplus per type
/// has slope `u_q - c`, largest in magnitude at `q = 0` or `q = cap`, and
/// Nature's term is `μ`-Lipschitz in the sup norm, so the bound is
/// `spacing/2 · (max |u_q - c| + μ)`.
pub fn gap_bound(scenario: &Scenario, quantization: &Quantization) -> f64 {
    let spacing = quantization.spacing(scenario.cap);
    let slope = scenario
        .types
        .grid()
        .iter()
        .flat_map(|&t| {
            [0.0, scenario.cap].map(|q| (scenario.utility.u_q(q, t) - scenario.cost).abs())
        })
        .fold(0.0, f64::max);
    0.5 * spacing * (slope + scenario.mu)
}

/// Slack for the lattice value exceeding the solver's claimed optimum.
pub const DOMINANCE_TOL: f64 = 1e-9;

/// Outcome of comparing a solver's guarantee with the brute-force value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub quantization: Quantization,
    pub best_value: f64,
    pub best_schedule: AllocationSchedule,
    pub solver_value: f64,
    pub gap_bound: f64,
    pub pass: bool,
}

pub fn certify(
    scenario: &Scenario,
    quantization: &Quantization,
    solver_value: f64,
) -> Result<OracleVerdict, OracleError> {
    let best = minimax_bruteforce(scenario, quantization)?;
    let gap = gap_bound(scenario, quantization);
    Ok(OracleVerdict {
        quantization: *quantization,
        best_value: best.value,
        best_schedule: best.schedule,
        solver_value,
        gap_bound: gap,
        // the lattice is a subset of all schedules, so it can never beat an optimum
        pass: best.value <= solver_value + DOMINANCE_TOL && solver_value - best.value <= gap,
    })
}

/// Feasible members of Nature's concentrating sequence: `m_n = nμ` on the
/// lowest `1/n` of `F` (highest, for harms), zero elsewhere. Returns `None`
/// when `1/n` is not a cumulative weight of the grid.
pub fn nature_sequence(
    types: &TypeDistribution,
    mu: f64,
    n: usize,
    sign: Sign,
) -> Option<ConditionalMean> {
    let share = 1.0 / n as f64;
    let cdf = types.cdf();
    let tol = 1e-12;
    let values: Vec<f64> = match sign {
        Sign::Positive => {
            cdf.iter().position(|&c| (c - share).abs() <= tol)?;
            cdf.iter()
                .map(|&c| if c <= share + tol { n as f64 * mu } else { 0.0 })
                .collect()
        }
        Sign::Negative => {
            // mass strictly above F = 1 - 1/n
            let cut = 1.0 - share;
            let below: Vec<f64> = std::iter::once(0.0)
                .chain(cdf.iter().copied())
                .take(cdf.len())
                .collect();
            below.iter().position(|&c| (c - cut).abs() <= tol)?;
            below
                .iter()
                .map(|&c| if c >= cut - tol { n as f64 * mu } else { 0.0 })
                .collect()
        }
    };
    let class = match sign {
        Sign::Positive => MonotoneClass::Nonincreasing,
        Sign::Negative => MonotoneClass::Nondecreasing,
    };
    ConditionalMean::new(values, class, types, mu).ok()
}

/// Every `n` for which [`nature_sequence`] is feasible, ascending.
pub fn feasible_sequence_indices(types: &TypeDistribution) -> Vec<usize> {
    let mut out: Vec<usize> = types
        .cdf()
        .iter()
        .filter_map(|&c| {
            let n = (1.0 / c).round();
            ((1.0 / n - c).abs() <= 1e-12).then_some(n as usize)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}
