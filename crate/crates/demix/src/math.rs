//! Numerical building blocks: log-gamma, log binomial/trinomial coefficients,
//! the regularized incomplete gamma function, chi-squared quantiles, and a
//! bounded scalar maximizer.

use crate::error::{DemixError, Result};

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.9999999999998099,
    676.5203681218851,
    -1259.1392167224028,
    771.3234287776531,
    -176.6150291621406,
    12.507343278686905,
    -0.13857109526572012,
    9.984369578019572e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Natural log of the binomial coefficient C(n, k).
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Natural log of the trinomial coefficient d! / (a! b! c!) with a + b + c = d.
pub fn ln_trinomial(d: u64, a: u64, b: u64, c: u64) -> f64 {
    debug_assert_eq!(a + b + c, d);
    ln_gamma(d as f64 + 1.0)
        - ln_gamma(a as f64 + 1.0)
        - ln_gamma(b as f64 + 1.0)
        - ln_gamma(c as f64 + 1.0)
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 500;

/// Regularized lower incomplete gamma function P(a, x) for a > 0, x >= 0.
///
/// Series expansion for x < a + 1, continued fraction (modified Lentz)
/// otherwise.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_p domain: a > 0, x >= 0");
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // Series: P(a,x) = x^a e^-x / Gamma(a) * sum x^n / (a(a+1)...(a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        sum * (a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        1.0 - regularized_gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction (x >= a + 1).
fn regularized_gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    h * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Cumulative distribution function of the chi-squared distribution with one
/// degree of freedom.
pub fn chi2_cdf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        regularized_gamma_p(0.5, x / 2.0)
    }
}

/// Survival function P(X > x) for X ~ chi-squared with one degree of freedom.
pub fn chi2_survival_1df(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < 1.0 {
        1.0 - regularized_gamma_p(0.5, x / 2.0)
    } else {
        regularized_gamma_q_cf(0.5, x / 2.0)
    }
}

/// Upper-tail quantile of the chi-squared distribution with one degree of
/// freedom: the c with P(X > c) = alpha.
pub fn chi2_quantile_1df(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DemixError::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let target = 1.0 - alpha;
    // Bracket the root, then bisect. CDF is strictly increasing.
    let mut hi = 1.0;
    while chi2_cdf_1df(hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf_1df(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of a bounded scalar maximization.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMax {
    pub x: f64,
    pub value: f64,
}

/// Golden-section search for the maximum of `f` on `[lo, hi]`.
///
/// Converges to within `tol` on the argument; returns a non-convergence
/// error carrying the best iterate if `max_iter` is exhausted first.
pub fn golden_section_max<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ScalarMax> {
    assert!(lo < hi, "golden_section_max requires lo < hi");
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if b - a < tol {
            let x = 0.5 * (a + b);
            return Ok(ScalarMax { x, value: f(x) });
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (a + b);
    Err(DemixError::NonConvergence {
        message: format!("golden-section search did not reach tol {tol} in {max_iter} iterations"),
        best: vec![x, f(x)],
    })
}

/// Numerically stable log(sum(exp(v))).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
