//! Small numerical kernels: modified Bessel I₀, adaptive Simpson quadrature,
//! and a bracketing root solver.

/// Modified Bessel function of the first kind, order zero.
///
/// Power series for moderate arguments, asymptotic expansion beyond.
pub fn bessel_i0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 30.0 {
        return 1.0 + bessel_i0_minus_one(ax);
    }
    // e^x / sqrt(2πx) · Σ ((2k-1)!!)² / (k! 8^k x^k)
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        let kf = k as f64;
        let next = term * (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * ax);
        if next > term {
            break;
        }
        term = next;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    ax.exp() / (2.0 * std::f64::consts::PI * ax).sqrt() * sum
}

/// `I₀(x) − 1` without cancellation for small `x`.
pub fn bessel_i0_minus_one(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 30.0 {
        return bessel_i0(ax) - 1.0;
    }
    let q = 0.25 * ax * ax;
    let mut term = 1.0;
    let mut sum = 0.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term <= sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Integral of `f` over `[a, b]` by adaptive Simpson with relative tolerance `rel_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Result of a bracketing root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub iterations: u32,
}

/// Bisection for an increasing function `f` on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
///
/// With `geometric` the midpoint is `sqrt(lo·hi)` (both ends must be positive),
/// which converges in relative terms over brackets spanning many decades.
/// Stops when the bracket stops shrinking in floating point, when it is
/// below `rel_tol` relative width, or after `max_iter` steps (returns `None`).
pub fn bisect_increasing<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    geometric: bool,
    rel_tol: f64,
    max_iter: u32,
) -> Option<Root> {
    for it in 0..max_iter {
        let mid = if geometric { lo.sqrt() * hi.sqrt() } else { lo + 0.5 * (hi - lo) };
        if mid <= lo || mid >= hi || (hi - lo) <= rel_tol * hi.abs() {
            return Some(Root { x: 0.5 * (lo + hi), iterations: it });
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    /// I₀(x) = (1/π) ∫₀^π e^{x cos t} dt, evaluated with composite Simpson on a fine grid.
    fn i0_by_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let h = std::f64::consts::PI / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * (x * (k as f64 * h).cos()).exp();
        }
        s * h / 3.0 / std::f64::consts::PI
    }

    #[test]
    fn bessel_matches_quadrature() {
        for &x in &[0.0, 1e-6, 0.01, 0.3, 1.0, 2.5, 10.0, 29.9, 30.1, 45.0] {
            let want = i0_by_quadrature(x);
            let got = bessel_i0(x);
            assert!(((got - want) / want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
        assert_eq!(bessel_i0(0.0), 1.0);
        assert_eq!(bessel_i0_minus_one(0.0), 0.0);
        // I₀(x) − 1 = x²/4 + x⁴/64 + …
        let x = 1e-5;
        assert!((bessel_i0_minus_one(x) - (x * x / 4.0 + x.powi(4) / 64.0)).abs() < 1e-30);
        assert_eq!(bessel_i0(-1.3), bessel_i0(1.3));
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        let got = integrate(|t| t.cos(), 0.0, 1.0, 1e-12);
        assert!((got - 1f64.sin()).abs() < 1e-12);
        let got = integrate(|t| (-t * t).exp(), 0.0, 3.0, 1e-12);
        let want = 0.886_207_348_259_521_2; // √π/2 · erf(3)
        assert!((got - want).abs() < 1e-11, "{got}");
        assert_eq!(integrate(|t| t, 2.0, 2.0, 1e-10), 0.0);
    }

    #[test]
    fn bisection_finds_roots() {
        let r = bisect_increasing(|x| x * x - 2.0, 0.0, 2.0, false, 1e-15, 200).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-14);
        let r = bisect_increasing(|x| x.ln() - 500.0, 1.0, 1e300, true, 1e-15, 200).unwrap();
        assert!(((r.x.ln() - 500.0) / 500.0).abs() < 1e-14);
        assert!(bisect_increasing(|x| x - 0.3, 0.0, 1.0, false, 0.0, 3).is_none());
    }
}
