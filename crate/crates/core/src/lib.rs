//! Worst-case-optimal regulation of externalities when the regulator knows
//! only the mean externality.
//!
//! A regulator chooses a monotone allocation schedule; Nature then picks
//! the conditional mean externality `m(θ)` that minimizes welfare subject
//! to `E[m] = μ` and an optional correlation restriction. The crate solves
//! the resulting max-min problem in closed form ([`solvers`]), evaluates
//! worst cases ([`worstcase`]), and checks both against brute-force
//! enumeration on small grids ([`oracle`]).

pub mod applications;
pub mod bisect;
pub mod config;
pub mod io;
pub mod isotonic;
pub mod model;
pub mod oracle;
pub mod schedule;
pub mod solvers;
pub mod worstcase;

pub use model::{
    demand, laissez_faire, Benchmark, Scenario, Sign, TypeDistribution, UtilityModel, Violation,
};
pub use schedule::{
    make_schedule, transfers_from_allocation, verify_ic, AllocationSchedule, Mechanism,
};
pub use solvers::{solve, Policy, PolicyKind};
pub use worstcase::{nature_best_response, worst_case_welfare, ConditionalMean, MonotoneClass};
