//! Oracles shared by the integration suites. They deliberately avoid the
//! library's special functions.
#![allow(dead_code)]

use eqps::numerics::quad::integrate;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// ∫_0^x t^(a−1)(1−t)^(b−1) dt. A shape below 1 puts an integrable
/// singularity at its endpoint, removed by t = u^(1/a) on the left half or
/// 1 − t = u^(1/b) on the right half.
pub fn incomplete_beta_integral(x: f64, a: f64, b: f64) -> f64 {
    let kernel = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
    let left = |hi: f64| {
        if a < 1.0 {
            integrate(
                |u: f64| (1.0 - u.powf(1.0 / a)).powf(b - 1.0) / a,
                0.0,
                hi.powf(a),
                1e-15,
            )
        } else {
            integrate(kernel, 0.0, hi, 1e-15)
        }
    };
    let right = |lo: f64| {
        if b < 1.0 {
            integrate(
                |u: f64| (1.0 - u.powf(1.0 / b)).powf(a - 1.0) / b,
                0.0,
                (1.0 - lo).powf(b),
                1e-15,
            )
        } else {
            integrate(kernel, lo, 1.0, 1e-15)
        }
    };
    if x <= 0.5 {
        left(x)
    } else {
        left(0.5) + right(0.5) - right(x)
    }
}

pub fn beta_integral(a: f64, b: f64) -> f64 {
    incomplete_beta_integral(1.0, a, b)
}

/// Marginal likelihood of y successes in n trials under a Beta(a, b) prior,
/// integrated numerically (binomial coefficient omitted).
pub fn marginal_likelihood(a: f64, b: f64, y: u64, n: u64) -> f64 {
    let kernel = beta_integral(a + y as f64, b + (n - y) as f64);
    kernel / beta_integral(a, b)
}

/// Monte Carlo estimate of Pr(X > Y) with X ~ Beta(x), Y ~ Beta(y).
pub fn mc_prob_greater<R: Rng>(rng: &mut R, x: (f64, f64), y: (f64, f64), draws: usize) -> f64 {
    let bx = Beta::new(x.0, x.1).unwrap();
    let by = Beta::new(y.0, y.1).unwrap();
    let hits = (0..draws)
        .filter(|_| bx.sample(rng) > by.sample(rng))
        .count();
    hits as f64 / draws as f64
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Critical KS distance at the 1% level for sample sizes n and m.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}
