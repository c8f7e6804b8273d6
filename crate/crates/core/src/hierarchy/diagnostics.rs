//! Convergence diagnostics over several chains of equal length.

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Potential scale reduction on chains split in half.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[c.len() - half..]])
        .collect();
    rhat(&pieces)
}

fn rhat(chains: &[&[f64]]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / chains.len() as f64;
    let b = n * var(&means);
    if !(w > 0.0) {
        return if b > 0.0 { f64::INFINITY } else { 1.0 };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 || m == 0 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |t: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| {
                (0..n - t)
                    .map(|i| (c[i] - mu) * (c[i + t] - mu))
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { var(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) {
        return (m * n) as f64;
    }
    let rho = |t: usize| 1.0 - (w - acov(t)) / var_plus;
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n - 2 {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum_pairs += pair;
        prev = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / ((m * n) as f64).log10());
    (m * n) as f64 / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    fn white(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_chains() {
        let a = white(1, 2000);
        let b = white(2, 2000);
        let chains = [a.as_slice(), b.as_slice()];
        assert!((split_rhat(&chains) - 1.0).abs() < 0.01);
        let ess = effective_sample_size(&chains);
        assert!(ess > 3000.0 && ess < 5500.0, "{ess}");
    }

    #[test]
    fn shifted_chain_flagged() {
        let a = white(1, 1000);
        let b: Vec<f64> = white(2, 1000).iter().map(|v| v + 3.0).collect();
        assert!(split_rhat(&[&a, &b]) > 1.5);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with φ = 0.9 has integrated time (1+φ)/(1−φ) = 19.
        let e = white(5, 40_000);
        let mut x = vec![0.0; e.len()];
        for i in 1..x.len() {
            x[i] = 0.9 * x[i - 1] + e[i];
        }
        let ess = effective_sample_size(&[&x]);
        let expect = 40_000.0 / 19.0;
        assert!((ess / expect - 1.0).abs() < 0.25, "{ess} vs {expect}");
    }
}
