//! One-dimensional quadrature helpers: Gauss-Legendre rules, adaptive
//! bisection, and dyadic grading toward an integrable endpoint singularity.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed in `f64`.
pub fn gauss_legendre_f64(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    let nf = n as f64;
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn rule(n: usize) -> &'static [(f64, f64)] {
    static G8: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static G16: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static G32: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    match n {
        8 => G8.get_or_init(|| gauss_legendre_f64(8)),
        16 => G16.get_or_init(|| gauss_legendre_f64(16)),
        32 => G32.get_or_init(|| gauss_legendre_f64(32)),
        _ => panic!("unsupported cached rule size {n}"),
    }
}

/// Fixed `n`-point Gauss-Legendre rule on `[a, b]` (n in {8, 16, 32}).
pub fn gauss<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, n: usize) -> T {
    let half = (b - a) * lit(0.5);
    let mid = (a + b) * lit(0.5);
    let mut acc = T::zero();
    for &(x, w) in rule(n) {
        acc += lit::<T>(w) * f(mid + half * lit(x));
    }
    acc * half
}

/// Tolerances for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_depth: 48,
        }
    }
}

/// Adaptive Gauss-Legendre quadrature comparing the 8- and 16-point rules
/// and bisecting where they disagree.
pub fn adaptive<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, opts: AdaptiveOptions) -> Result<T> {
    if a == b {
        return Ok(T::zero());
    }
    let whole = gauss(f, a, b, 16);
    if !whole.is_finite() {
        return Err(Error::Quadrature {
            context: format!("[{a:e}, {b:e}]"),
            detail: "non-finite integrand".into(),
        });
    }
    let scale = whole.abs();
    let v = refine(f, a, b, whole, scale, opts, 0);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Quadrature {
            context: format!("[{a:e}, {b:e}]"),
            detail: "non-finite result".into(),
        })
    }
}

fn refine<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    est16: T,
    scale: T,
    opts: AdaptiveOptions,
    depth: u32,
) -> T {
    let est8 = gauss(f, a, b, 8);
    let err = (est16 - est8).abs();
    let tol = lit::<T>(opts.rel_tol) * scale.max(est16.abs()) + T::min_positive_value();
    if err <= tol || depth >= opts.max_depth {
        return est16;
    }
    let m = (a + b) * lit(0.5);
    let left = gauss(f, a, m, 16);
    let right = gauss(f, m, b, 16);
    refine(f, a, m, left, scale, opts, depth + 1) + refine(f, m, b, right, scale, opts, depth + 1)
}

/// Integrates `f` over `(0, upper)` where `f` may carry an integrable power
/// singularity at zero.
///
/// Dyadic cells `[upper 2^{-j-1}, upper 2^{-j}]` are integrated adaptively;
/// the remaining innermost piece is integrated in closed form after fitting
/// `f(r) ~ C r^gamma` on two samples. The fit is exact for pure powers.
pub fn integral_from_zero<T: Real, F: Fn(T) -> T>(
    f: &F,
    upper: T,
    levels: u32,
    opts: AdaptiveOptions,
) -> Result<T> {
    if upper <= T::zero() {
        return Ok(T::zero());
    }
    let mut parts = Vec::with_capacity(levels as usize + 1);
    let mut hi = upper;
    for _ in 0..levels {
        let lo = hi * lit(0.5);
        parts.push(adaptive(f, lo, hi, opts)?);
        hi = lo;
    }
    parts.push(power_tail(f, hi)?);
    // smallest contributions first
    parts.reverse();
    Ok(parts.into_iter().fold(T::zero(), |acc, v| acc + v))
}

/// Closed-form integral of the local power-law fit of `f` over `(0, eps)`.
pub fn power_tail<T: Real, F: Fn(T) -> T>(f: &F, eps: T) -> Result<T> {
    let f1 = f(eps);
    let f2 = f(eps * lit(0.5));
    if f1 == T::zero() && f2 == T::zero() {
        return Ok(T::zero());
    }
    if !(f1.is_finite() && f2.is_finite()) {
        return Err(Error::Singularity {
            cell: format!("(0, {eps:e})"),
            value: f64::INFINITY,
        });
    }
    if f1 == T::zero() || f2 == T::zero() || (f1 > T::zero()) != (f2 > T::zero()) {
        return Ok(f1 * eps);
    }
    let gamma = (f1 / f2).ln() / lit::<T>(2.0).ln();
    if gamma <= -T::one() {
        return Err(Error::Singularity {
            cell: format!("(0, {eps:e})"),
            value: crate::scalar::to_f64(gamma),
        });
    }
    Ok(f1 * eps / (gamma + T::one()))
}

/// Integrates `f` over `(lo, hi)` with `0 < lo`, using geometrically growing
/// cells so that integrands decaying like powers are resolved evenly.
pub fn geometric_integral<T: Real, F: Fn(T) -> T>(
    f: &F,
    lo: T,
    hi: T,
    opts: AdaptiveOptions,
) -> Result<T> {
    if hi <= lo {
        return Ok(T::zero());
    }
    let mut acc = Vec::new();
    let mut a = lo;
    while a < hi {
        let b = (a + a).min(hi);
        acc.push(adaptive(f, a, b, opts)?);
        a = b;
    }
    Ok(acc.into_iter().fold(T::zero(), |s, v| s + v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_polynomials_exactly() {
        for n in [8usize, 16, 32] {
            let deg = 2 * n - 1;
            let f = |x: f64| x.powi(deg as i32) + x.powi(deg as i32 - 1);
            let exact = 2.0 / deg as f64;
            assert!((gauss(&f, -1.0, 1.0, n) - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn adaptive_handles_a_jump() {
        let f = |x: f64| if x < 0.3 { 1.0 } else { 0.0 };
        let v = adaptive(&f, 0.0, 1.0, AdaptiveOptions::default()).unwrap();
        assert!((v - 0.3).abs() < 1e-10, "{v}");
    }

    #[test]
    fn power_singularity_from_zero() {
        // integral of 0.01 r^{-0.98} on (0, 0.5) = 0.5^{0.02} / 2
        let f = |r: f64| 0.01 * r.powf(-0.98);
        let v = integral_from_zero(&f, 0.5, 64, AdaptiveOptions::default()).unwrap();
        let exact = 0.5f64.powf(0.02) / 2.0;
        assert!((v - exact).abs() < 1e-11 * exact, "{v} vs {exact}");
    }

    #[test]
    fn non_integrable_singularity_is_reported() {
        let f = |r: f64| 1.0 / (r * r);
        assert!(matches!(
            integral_from_zero(&f, 1.0, 20, AdaptiveOptions::default()),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn geometric_cells_integrate_decaying_power() {
        let f = |r: f64| r.powf(-2.5);
        let v = geometric_integral(&f, 1.0, 1e6, AdaptiveOptions::default()).unwrap();
        let exact = (1.0 - 1e6f64.powf(-1.5)) / 1.5;
        assert!((v - exact).abs() < 1e-11);
    }
}
