//! Concentration bounds and entropy.
//!
//! The Chernoff equations are solved in the variable `s` defined by
//! `bound = base·(1+s)`, which turns each of the four defining equations
//! into one of
//!
//! ```text
//! X·h(s) = c,   h(s) = s − ln(1+s)          (observed → expected)
//! Y·g(s) = c,   g(s) = (1+s)·ln(1+s) − s    (expected → real)
//! c = ln(2/ε)
//! ```
//!
//! with `s > 0` for upper bounds and `s ∈ (−1, 0)` for lower bounds. Both
//! `h` and `g` are monotone on each half-line, so bisection always brackets.
//! `ε = 2` gives `c = 0` and the bounds collapse onto their argument.

use thiserror::Error;

use crate::numeric::bisect_increasing;

const SOLVER_MAX_ITERATIONS: u32 = 200;
const SOLVER_REL_TOL: f64 = 1e-15;
const SERIES_RADIUS: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{name} must lie in {range}, got {value}")]
    Domain { name: &'static str, range: &'static str, value: f64 },
    #[error("Chernoff solver did not converge for {which}({argument}) at epsilon {epsilon}")]
    NoConvergence { which: &'static str, argument: f64, epsilon: f64 },
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain { name: "entropy argument", range: "[0, 1]", value: x });
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2)
}

/// `s − ln(1+s)`, accurate near zero.
fn h(s: f64) -> f64 {
    if s.abs() < SERIES_RADIUS {
        // Σ_{k≥2} (−1)^k s^k / k
        let mut sum = 0.0;
        let mut p = s * s;
        for k in 2..14 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * p / k as f64;
            p *= s;
        }
        sum
    } else {
        s - s.ln_1p()
    }
}

/// `(1+s)·ln(1+s) − s`, accurate near zero; `g(−1) = 1`.
fn g(s: f64) -> f64 {
    if s.abs() < SERIES_RADIUS {
        // Σ_{k≥2} (−1)^k s^k / (k(k−1))
        let mut sum = 0.0;
        let mut p = s * s;
        for k in 2..14 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * p / (k * (k - 1)) as f64;
            p *= s;
        }
        sum
    } else if s <= -1.0 {
        1.0
    } else {
        (1.0 + s) * s.ln_1p() - s
    }
}

fn confidence(epsilon: f64) -> Result<f64, StatsError> {
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(StatsError::Domain { name: "epsilon", range: "(0, 2]", value: epsilon });
    }
    Ok((2.0 / epsilon).ln().max(0.0))
}

fn check_count(name: &'static str, x: f64) -> Result<(), StatsError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(StatsError::Domain { name, range: "[0, ∞)", value: x })
    }
}

/// Root `s > 0` of `scale·f(s) = c` for `f` increasing and unbounded on the positive axis.
fn solve_positive(f: fn(f64) -> f64, scale: f64, c: f64) -> Option<f64> {
    // f(s) ≥ s/4 for s ≥ 4 (both h and g), so this upper end brackets the root.
    let mut hi = (4.0 * c / scale).max(4.0);
    if !hi.is_finite() {
        hi = f64::MAX;
    }
    let lo = f64::MIN_POSITIVE;
    bisect_increasing(|s| scale * f(s) - c, lo, hi, true, SOLVER_REL_TOL, SOLVER_MAX_ITERATIONS)
        .map(|r| r.x)
}

/// `h` and `g` as functions of `w = 1 + s`, for `w ≤ 1/2` where `w − 1` would lose `w`.
fn h_w(w: f64) -> f64 {
    (w - 1.0) - w.ln()
}

fn g_w(w: f64) -> f64 {
    if w == 0.0 {
        1.0
    } else {
        w * w.ln() + (1.0 - w)
    }
}

/// Root `s ∈ (−1, 0)` of `scale·f(s) = c` for `f` decreasing on that interval
/// (`f_w` is the same function of `1 + s`).
///
/// Returns `(−s, 1+s)`, each computed directly so neither loses precision
/// when the other is close to 0. A root below the smallest normal `w`
/// is reported as `w = 0`.
fn solve_negative(f: fn(f64) -> f64, f_w: fn(f64) -> f64, scale: f64, c: f64) -> Option<(f64, f64)> {
    if scale * f(-0.5) >= c {
        // root in t = −s ∈ (0, 0.5]
        bisect_increasing(|t| scale * f(-t) - c, f64::MIN_POSITIVE, 0.5, true, SOLVER_REL_TOL, SOLVER_MAX_ITERATIONS)
            .map(|r| (r.x, 1.0 - r.x))
    } else {
        // root in w ∈ (0, 0.5); scale·f_w decreasing in w
        let w_lo = f64::MIN_POSITIVE;
        if scale * f_w(w_lo) < c {
            return Some((1.0, 0.0));
        }
        bisect_increasing(|w| c - scale * f_w(w), w_lo, 0.5, true, SOLVER_REL_TOL, SOLVER_MAX_ITERATIONS)
            .map(|r| (1.0 - r.x, r.x))
    }
}

/// A bound together with the `δ` of its defining equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub value: f64,
    pub delta: f64,
}

fn no_convergence(which: &'static str, argument: f64, epsilon: f64) -> StatsError {
    StatsError::NoConvergence { which, argument, epsilon }
}

/// `φᴸ(X) = X/(1+δ₁)`: lower bound on an expected value given the observed count `x`.
pub fn phi_lower(x: f64, epsilon: f64) -> Result<Bound, StatsError> {
    check_count("observed count", x)?;
    let c = confidence(epsilon)?;
    if x == 0.0 || c == 0.0 {
        return Ok(Bound { value: x, delta: 0.0 });
    }
    let (t, w) = solve_negative(h, h_w, x, c).ok_or_else(|| no_convergence("phi_L", x, epsilon))?;
    Ok(Bound { value: x * w, delta: t / w })
}

/// `φᵁ(X) = X/(1−δ₂)`: upper bound on an expected value given the observed count `x`.
///
/// `φᵁ(0) = ln(2/ε)`, the limit of the defining equation as `δ₂ → 1`.
pub fn phi_upper(x: f64, epsilon: f64) -> Result<Bound, StatsError> {
    check_count("observed count", x)?;
    let c = confidence(epsilon)?;
    if c == 0.0 {
        return Ok(Bound { value: x, delta: 0.0 });
    }
    if x == 0.0 {
        return Ok(Bound { value: c, delta: 1.0 });
    }
    let s = solve_positive(h, x, c).ok_or_else(|| no_convergence("phi_U", x, epsilon))?;
    Ok(Bound { value: x + x * s, delta: s / (1.0 + s) })
}

/// `φ̂ᴸ(Y) = (1−δ′₂)Y`: lower bound on a realized count given its expectation `y`.
///
/// When `y ≤ ln(2/ε)` no `δ′₂ < 1` solves the equation; `δ′₂` is capped at 1.
pub fn varphi_lower(y: f64, epsilon: f64) -> Result<Bound, StatsError> {
    check_count("expected value", y)?;
    let c = confidence(epsilon)?;
    if y == 0.0 || c == 0.0 {
        return Ok(Bound { value: y, delta: 0.0 });
    }
    if y <= c {
        return Ok(Bound { value: 0.0, delta: 1.0 });
    }
    let (t, w) = solve_negative(g, g_w, y, c).ok_or_else(|| no_convergence("varphi_L", y, epsilon))?;
    Ok(Bound { value: y * w, delta: t })
}

/// `φ̂ᵁ(Y) = (1+δ′₁)Y`: upper bound on a realized count given its expectation `y`.
pub fn varphi_upper(y: f64, epsilon: f64) -> Result<Bound, StatsError> {
    check_count("expected value", y)?;
    let c = confidence(epsilon)?;
    if y == 0.0 || c == 0.0 {
        return Ok(Bound { value: y, delta: 0.0 });
    }
    let s = solve_positive(g, y, c).ok_or_else(|| no_convergence("varphi_U", y, epsilon))?;
    Ok(Bound { value: y + y * s, delta: s })
}

/// `φᴸ(X) = X/(1+δ₁)` and `φᵁ(X) = X/(1−δ₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedBounds {
    pub lower: f64,
    pub upper: f64,
    pub delta_1: f64,
    pub delta_2: f64,
}

pub fn chernoff_expected_bounds(x: f64, epsilon: f64) -> Result<ExpectedBounds, StatsError> {
    let lower = phi_lower(x, epsilon)?;
    let upper = phi_upper(x, epsilon)?;
    Ok(ExpectedBounds { lower: lower.value, upper: upper.value, delta_1: lower.delta, delta_2: upper.delta })
}

/// `φ̂ᵁ(Y) = (1+δ′₁)Y` and `φ̂ᴸ(Y) = (1−δ′₂)Y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealBounds {
    pub lower: f64,
    pub upper: f64,
    pub delta_1: f64,
    pub delta_2: f64,
    /// `δ′₂` reached its cap of 1.
    pub lower_clamped: bool,
    /// `Y = 0`: the equations carry no information and both bounds are 0.
    pub degenerate: bool,
}

pub fn chernoff_real_bounds(y: f64, epsilon: f64) -> Result<RealBounds, StatsError> {
    let lower = varphi_lower(y, epsilon)?;
    let upper = varphi_upper(y, epsilon)?;
    Ok(RealBounds {
        lower: lower.value,
        upper: upper.value,
        delta_1: upper.delta,
        delta_2: lower.delta,
        lower_clamped: lower.delta == 1.0,
        degenerate: y == 0.0,
    })
}

/// Failure probability spent by the bounds of one pipeline run.
///
/// Every call spends `epsilon`; the total reported is `invocations·epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBudget {
    pub epsilon: f64,
    pub invocations: u32,
}

impl BoundBudget {
    pub fn new(epsilon: f64) -> Result<Self, StatsError> {
        confidence(epsilon)?;
        Ok(Self { epsilon, invocations: 0 })
    }

    pub fn spent(&self) -> f64 {
        self.invocations as f64 * self.epsilon
    }

    pub fn phi_lower(&mut self, x: f64) -> Result<f64, StatsError> {
        self.invocations += 1;
        phi_lower(x, self.epsilon).map(|b| b.value)
    }

    pub fn phi_upper(&mut self, x: f64) -> Result<f64, StatsError> {
        self.invocations += 1;
        phi_upper(x, self.epsilon).map(|b| b.value)
    }

    pub fn varphi_lower(&mut self, y: f64) -> Result<f64, StatsError> {
        self.invocations += 1;
        varphi_lower(y, self.epsilon).map(|b| b.value)
    }

    pub fn varphi_upper(&mut self, y: f64) -> Result<f64, StatsError> {
        self.invocations += 1;
        varphi_upper(y, self.epsilon).map(|b| b.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution};

    /// ln of the left-hand sides, written as the textbook equations.
    fn ln_lhs_phi_l(x: f64, d1: f64) -> f64 {
        x / (1.0 + d1) * (d1 - (1.0 + d1) * d1.ln_1p())
    }
    fn ln_lhs_phi_u(x: f64, d2: f64) -> f64 {
        x / (1.0 - d2) * (-d2 - (1.0 - d2) * (-d2).ln_1p())
    }
    fn ln_lhs_real_u(y: f64, d1: f64) -> f64 {
        y * (d1 - (1.0 + d1) * d1.ln_1p())
    }
    fn ln_lhs_real_l(y: f64, d2: f64) -> f64 {
        y * (-d2 - (1.0 - d2) * (-d2).ln_1p())
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // 50-digit evaluation of −0.03·log₂0.03 − 0.97·log₂0.97
        let want = 0.194_391_857_831_576_16;
        assert!((binary_entropy(0.03).unwrap() - want).abs() < 1e-15);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn zero_count_limits() {
        let eps: f64 = 1e-10;
        let b = chernoff_expected_bounds(0.0, eps).unwrap();
        assert_eq!(b.lower, 0.0);
        assert_eq!(b.upper, (2.0 / eps).ln());
        // the X → 0 limit is approached continuously
        let tiny = phi_upper(1e-6, eps).unwrap().value;
        assert!((tiny - (2.0 / eps).ln()).abs() / tiny < 1e-4, "{tiny}");
        let r = chernoff_real_bounds(0.0, eps).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.lower, r.upper), (0.0, 0.0));
    }

    #[test]
    fn no_confidence_limit_is_identity() {
        for x in [0.0, 1.0, 1e6, 3.7e12] {
            let e = chernoff_expected_bounds(x, 2.0).unwrap();
            assert_eq!((e.lower, e.upper), (x, x));
            let r = chernoff_real_bounds(x, 2.0).unwrap();
            assert_eq!((r.lower, r.upper), (x, x));
        }
        // and continuously so
        let x = 1e6;
        let e = chernoff_expected_bounds(x, 2.0 - 1e-9).unwrap();
        assert!((e.upper - x) / x < 1e-6 && (x - e.lower) / x < 1e-6);
    }

    #[test]
    fn back_substitution_residuals() {
        let eps: f64 = 1e-10;
        let target = (eps / 2.0).ln();
        // beyond ~1e12 the textbook form itself cancels below 1e-8 in f64
        for x in [1e-3, 0.5, 3.0, 80.0, 1e3, 1e6, 1e9, 1e12] {
            let b = chernoff_expected_bounds(x, eps).unwrap();
            // for x ≪ ln(2/ε) the lower root underflows to 0
            assert!(b.lower > 0.0 || x < 1e-2);
            assert!(b.lower == 0.0 || ((ln_lhs_phi_l(x, b.delta_1) - target) / target).abs() < 1e-8, "phi_L x={x}");
            assert!(((ln_lhs_phi_u(x, b.delta_2) - target) / target).abs() < 1e-8, "phi_U x={x}");
            let r = chernoff_real_bounds(x, eps).unwrap();
            assert!(((ln_lhs_real_u(x, r.delta_1) - target) / target).abs() < 1e-8, "real_U x={x}");
            if !r.lower_clamped {
                assert!(((ln_lhs_real_l(x, r.delta_2) - target) / target).abs() < 1e-8, "real_L x={x}");
            }
        }
    }

    #[test]
    fn real_lower_clamps_below_confidence() {
        let eps: f64 = 1e-10;
        let c = (2.0 / eps).ln();
        let r = chernoff_real_bounds(0.9 * c, eps).unwrap();
        assert!(r.lower_clamped);
        assert_eq!(r.lower, 0.0);
        assert_eq!(r.delta_2, 1.0);
        assert!(varphi_lower(1.1 * c, eps).unwrap().value > 0.0);
    }

    #[test]
    fn extreme_inputs_converge() {
        for eps in [1e-30, 1e-10, 1e-3, 0.5] {
            for x in [1e-12, 1.0, 1e18] {
                chernoff_expected_bounds(x, eps).unwrap();
                chernoff_real_bounds(x, eps).unwrap();
            }
        }
        assert!(phi_lower(-1.0, 0.1).is_err());
        assert!(phi_upper(1.0, 0.0).is_err());
        assert!(varphi_upper(1.0, 2.5).is_err());
    }

    #[test]
    fn binomial_coverage() {
        let (n, p, eps) = (100_000u64, 1e-2, 0.01);
        let mean = n as f64 * p;
        let dist = Binomial::new(n, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let replicates = 10_000;
        let misses = (0..replicates)
            .filter(|_| {
                let x = dist.sample(&mut rng) as f64;
                let b = chernoff_expected_bounds(x, eps).unwrap();
                !(b.lower <= mean && mean <= b.upper)
            })
            .count();
        assert!(misses as f64 <= eps * replicates as f64, "{misses} misses");
    }

    #[test]
    fn budget_counts_uses() {
        let mut b = BoundBudget::new(1e-10).unwrap();
        b.phi_lower(10.0).unwrap();
        b.phi_upper(10.0).unwrap();
        b.varphi_lower(10.0).unwrap();
        assert_eq!(b.invocations, 3);
        assert!((b.spent() - 3e-10).abs() < 1e-24);
        assert!(BoundBudget::new(0.0).is_err());
    }

    proptest! {
        #[test]
        fn bounds_bracket_their_argument(x in 0.0f64..1e15, le in -30.0f64..-0.5) {
            let eps = 10f64.powf(le);
            let e = chernoff_expected_bounds(x, eps).unwrap();
            prop_assert!(e.lower <= x && x <= e.upper);
            let r = chernoff_real_bounds(x, eps).unwrap();
            prop_assert!(r.lower <= x && x <= r.upper);
        }

        #[test]
        fn smaller_epsilon_widens(x in 1e-3f64..1e15, le in -29.0f64..-0.5, shrink in 0.1f64..5.0) {
            let (a, b) = (10f64.powf(le), 10f64.powf(le - shrink));
            let (ea, eb) = (chernoff_expected_bounds(x, a).unwrap(), chernoff_expected_bounds(x, b).unwrap());
            prop_assert!(eb.lower <= ea.lower && eb.upper >= ea.upper);
            let (ra, rb) = (chernoff_real_bounds(x, a).unwrap(), chernoff_real_bounds(x, b).unwrap());
            prop_assert!(rb.lower <= ra.lower && rb.upper >= ra.upper);
        }

        #[test]
        fn bounds_are_monotone_in_argument(x in 0.0f64..1e12, k in 1.0f64..3.0) {
            let eps: f64 = 1e-10;
            let (a, b) = (chernoff_expected_bounds(x, eps).unwrap(), chernoff_expected_bounds(x * k, eps).unwrap());
            prop_assert!(b.lower >= a.lower * (1.0 - 1e-14) && b.upper >= a.upper * (1.0 - 1e-14));
        }
    }
}
