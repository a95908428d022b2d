//! Bracketing bisection for monotone, possibly discontinuous, functions.

/// Result of a bisection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    /// Largest point known to satisfy `g ≤ 0`.
    pub lo: f64,
    /// Smallest point known to satisfy `g > 0`.
    pub hi: f64,
    pub iterations: usize,
}

impl Bracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Shrinks `[lo, hi]` around the crossing of a nondecreasing `g`, given
/// `g(lo) ≤ 0 < g(hi)`, until the bracket is narrower than `tol`.
///
/// Only the sign of `g` is used, so jumps in `g` are harmless: the bracket
/// converges to the jump location.
pub fn bisect_nondecreasing(
    mut g: impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Bracket {
    debug_assert!(lo <= hi);
    let mut iterations = 0;
    while hi - lo > tol && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Bracket { lo, hi, iterations }
}
