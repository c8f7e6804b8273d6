//! Special functions on the positive reals.
//!
//! `ln_gamma` uses a Lanczos sum (g = 7, n = 9) with reflection below 1/2.
//! `log_beta_fn` follows the classical split into Stirling corrections so
//! that large shape parameters do not lose digits to cancellation.

use crate::error::{Error, Result};
use std::f64::consts::PI;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1−x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x >= 10.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_correction(x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Remainder of Stirling's series, ln Γ(x) − [(x−½)ln x − x + ln√(2π)], for x ≥ 10.
fn stirling_correction(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        + r2 * (-1.0 / 360.0
            + r2 * (1.0 / 1260.0
                + r2 * (-1.0 / 1680.0
                    + r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360_360.0 + r2 * (1.0 / 156.0)))))))
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a+b).
pub fn log_beta_fn(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!(
            "log_beta_fn requires a, b > 0 (got {a}, {b})"
        )));
    }
    Ok(log_beta_unchecked(a, b))
}

pub(crate) fn log_beta_unchecked(a: f64, b: f64) -> f64 {
    let p = a.min(b);
    let q = a.max(b);
    let s = p + q;
    if p >= 10.0 {
        let corr = stirling_correction(p) + stirling_correction(q) - stirling_correction(s);
        -0.5 * q.ln() + LN_SQRT_2PI + corr + (p - 0.5) * (p / s).ln() + q * (-p / s).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_correction(q) - stirling_correction(s);
        ln_gamma(p) + corr + p - p * s.ln() + (q - 0.5) * (-p / s).ln_1p()
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(s)
    }
}

/// ln of the binomial coefficient C(n, k).
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    let (n, k) = (n as f64, k as f64);
    -(n + 1.0).ln() - log_beta_unchecked(n - k + 1.0, k + 1.0)
}

const CF_MAX_ITER: usize = 20_000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Regularized incomplete beta function I_x(a, b).
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!(
            "beta_cdf requires a, b > 0 (got {a}, {b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!(
            "beta_cdf requires x in [0, 1] (got {x})"
        )));
    }
    Ok(beta_cdf_unchecked(x, a, b))
}

pub(crate) fn beta_cdf_unchecked(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > a / (a + b) {
        1.0 - incbeta_cf(b, a, 1.0 - x)
    } else {
        incbeta_cf(a, b, x)
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn incbeta_cf(a: f64, b: f64, x: f64) -> f64 {
    let ln_front = a * x.ln() + b * (-x).ln_1p() - log_beta_unchecked(a, b);
    let front = ln_front.exp() / a;
    if front == 0.0 {
        return 0.0;
    }

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    (front * h).clamp(0.0, 1.0)
}

/// Log density of Beta(a, b) at x in (0, 1).
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - log_beta_unchecked(a, b)
}

/// ψ(x), the digamma function, for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + x.ln()
        - 0.5 * r
        - r2 * (1.0 / 12.0
            - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 - r2 * (1.0 / 240.0 - r2 * (1.0 / 132.0)))))
}

/// ψ'(x), the trigamma function, for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))))
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^t) without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_beta_examples() {
        assert_eq!(log_beta_fn(1.0, 1.0).unwrap(), 0.0);
        assert!((log_beta_fn(2.0, 2.0).unwrap() - (1.0f64 / 6.0).ln()).abs() < 1e-14);
        assert!((log_beta_fn(0.5, 0.5).unwrap() - PI.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_beta_rejects_non_positive() {
        assert!(log_beta_fn(0.0, 1.0).is_err());
        assert!(log_beta_fn(1.0, -2.0).is_err());
        assert!(log_beta_fn(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn log_beta_large_arguments_keep_relative_accuracy() {
        // B(n, 1) = 1/n exactly.
        for n in [10.0, 1e3, 1e5, 1e6] {
            let got = log_beta_fn(n, 1.0).unwrap();
            let want = -(n as f64).ln();
            assert!(
                ((got - want) / want).abs() < 1e-12,
                "n = {n}: {got} vs {want}"
            );
        }
        // B(n, 2) = 1/(n(n+1)).
        for n in [12.5, 1e4, 1e6] {
            let got = log_beta_fn(n, 2.0).unwrap();
            let want = -(n * (n + 1.0)).ln();
            assert!(((got - want) / want).abs() < 1e-12, "n = {n}");
        }
        // Symmetric large case against Stirling-free factorial identity: B(n, n) for integer n.
        let n = 30.0;
        let want = 2.0 * ln_factorial(29) - ln_factorial(59);
        assert!(((log_beta_fn(n, n).unwrap() - want) / want).abs() < 1e-12);
    }

    fn ln_factorial(n: u32) -> f64 {
        (1..=n).map(|k| (k as f64).ln()).sum()
    }

    #[test]
    fn ln_gamma_integers() {
        for n in 1..40u32 {
            let got = ln_gamma(n as f64);
            let want = ln_factorial(n - 1);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "n = {n}");
        }
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn beta_cdf_examples() {
        assert!((beta_cdf(0.5, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let want = 1.0 - 0.7f64.powi(4);
        assert!((beta_cdf(0.3, 1.0, 4.0).unwrap() - want).abs() < 1e-14);
        assert_eq!(beta_cdf(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(beta_cdf(1.0, 2.0, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn beta_cdf_domain_errors() {
        assert!(beta_cdf(-0.1, 1.0, 1.0).is_err());
        assert!(beta_cdf(1.1, 1.0, 1.0).is_err());
        assert!(beta_cdf(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn beta_cdf_matches_binomial_identity() {
        // I_x(k, n−k+1) = P(Bin(n, x) ≥ k)
        let n = 20u64;
        let x: f64 = 0.37;
        for k in 1..=n {
            let tail: f64 = (k..=n)
                .map(|j| {
                    (ln_choose(n, j) + j as f64 * x.ln() + (n - j) as f64 * (1.0 - x).ln()).exp()
                })
                .sum();
            let got = beta_cdf(x, k as f64, (n - k + 1) as f64).unwrap();
            assert!((got - tail).abs() < 1e-13, "k = {k}: {got} vs {tail}");
        }
    }

    #[test]
    fn digamma_trigamma_reference_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-13);
        assert!((digamma(0.5) + euler + 2.0 * 2f64.ln()).abs() < 1e-13);
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn expit_logit_inverse() {
        for t in [-30.0, -2.0, 0.0, 0.7, 12.0] {
            assert!((logit(expit(t)) - t).abs() < 1e-9);
        }
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
