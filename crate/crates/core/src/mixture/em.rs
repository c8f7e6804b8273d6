//! Maximum-likelihood Beta mixtures by EM.

use super::BetaComponent;
use crate::error::{Error, Result};
use crate::numerics::special::{digamma, log_beta_unchecked, trigamma};
use serde::{Deserialize, Serialize};

pub const EM_MAX_ITER: usize = 500;
/// Convergence threshold on the change of the mean log-likelihood per sample.
const EM_TOL: f64 = 1e-8;
const CLAMP: f64 = 1e-6;
const MIN_WEIGHT: f64 = 1e-4;
const MIN_SAMPLES: usize = 100;
/// Cap on a + b. Clamped boundary samples otherwise pull a component into a
/// spike whose shapes grow without bound and exhaust ln Γ precision.
const MAX_CONCENTRATION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionCriterion {
    #[default]
    Aic,
    Bic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMixtureFit {
    pub components: Vec<BetaComponent>,
    pub log_likelihood: f64,
    pub criterion_value: f64,
    pub iterations: usize,
    /// Samples moved inside [1e-6, 1 − 1e-6].
    pub clamped: usize,
    /// Log-likelihood after every EM iteration of the selected fit.
    pub trace: Vec<f64>,
}

struct Suff {
    ln_x: Vec<f64>,
    ln_1mx: Vec<f64>,
}

/// Fits K = 1..=k_max components and returns the one preferred by `criterion`.
pub fn fit_beta_mixture(
    samples: &[f64],
    k_max: usize,
    criterion: SelectionCriterion,
) -> Result<BetaMixtureFit> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Estimation(format!(
            "beta mixture fit needs at least {MIN_SAMPLES} samples"
        )));
    }
    if k_max == 0 {
        return Err(Error::config("k_max must be at least 1"));
    }
    let mut clamped = 0;
    let xs: Vec<f64> = samples
        .iter()
        .map(|&x| {
            let c = x.clamp(CLAMP, 1.0 - CLAMP);
            if c != x {
                clamped += 1;
            }
            c
        })
        .collect();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("beta mixture samples must be finite"));
    }
    if clamped > 0 {
        log::warn!("{clamped} samples clamped into [{CLAMP}, {}]", 1.0 - CLAMP);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-14) {
        return Err(Error::Estimation(
            "beta mixture samples are degenerate (no spread)".into(),
        ));
    }
    let suff = Suff {
        ln_x: xs.iter().map(|x| x.ln()).collect(),
        ln_1mx: xs.iter().map(|x| (-x).ln_1p()).collect(),
    };

    let mut best: Option<BetaMixtureFit> = None;
    for k in 1..=k_max {
        let init = kmeans_moments(&xs, k);
        let mut fit = run_em(&suff, init)?;
        fit.clamped = clamped;
        let params = (3 * fit.components.len() - 1) as f64;
        fit.criterion_value = match criterion {
            SelectionCriterion::Aic => -2.0 * fit.log_likelihood + 2.0 * params,
            SelectionCriterion::Bic => -2.0 * fit.log_likelihood + params * n.ln(),
        };
        if best
            .as_ref()
            .is_none_or(|b| fit.criterion_value < b.criterion_value)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("k_max >= 1"))
}

/// Method-of-moments components on a 1-D K-means partition.
fn kmeans_moments(xs: &[f64], k: usize) -> Vec<BetaComponent> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centres: Vec<f64> = (0..k)
        .map(|j| sorted[((j as f64 + 0.5) / k as f64 * n as f64) as usize])
        .collect();
    let mut cut = vec![0usize; k + 1];
    for _ in 0..100 {
        // On sorted data each cluster is a contiguous run between centre midpoints.
        cut[0] = 0;
        cut[k] = n;
        for j in 1..k {
            let mid = 0.5 * (centres[j - 1] + centres[j]);
            cut[j] = sorted.partition_point(|&x| x < mid);
        }
        let next: Vec<f64> = (0..k)
            .map(|j| {
                let run = &sorted[cut[j]..cut[j + 1]];
                if run.is_empty() {
                    centres[j]
                } else {
                    run.iter().sum::<f64>() / run.len() as f64
                }
            })
            .collect();
        if next == centres {
            break;
        }
        centres = next;
    }
    (0..k)
        .filter_map(|j| {
            let run = &sorted[cut[j]..cut[j + 1]];
            if run.len() < 2 {
                return None;
            }
            let m = run.iter().sum::<f64>() / run.len() as f64;
            let v = run.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (run.len() - 1) as f64;
            let common = if v > 0.0 && v < m * (1.0 - m) {
                (m * (1.0 - m) / v - 1.0).min(MAX_CONCENTRATION)
            } else {
                2.0
            };
            Some(BetaComponent {
                weight: run.len() as f64 / n as f64,
                a: (m * common).max(1e-3),
                b: ((1.0 - m) * common).max(1e-3),
            })
        })
        .collect()
}

fn log_likelihood(suff: &Suff, comps: &[BetaComponent], resp: Option<&mut Vec<f64>>) -> f64 {
    let k = comps.len();
    let mut buf = vec![0.0; k];
    let mut total = 0.0;
    let mut resp = resp;
    let offsets: Vec<f64> = comps
        .iter()
        .map(|c| c.weight.ln() - log_beta_unchecked(c.a, c.b))
        .collect();
    for i in 0..suff.ln_x.len() {
        let mut top = f64::NEG_INFINITY;
        for (j, c) in comps.iter().enumerate() {
            buf[j] = offsets[j] + (c.a - 1.0) * suff.ln_x[i] + (c.b - 1.0) * suff.ln_1mx[i];
            top = top.max(buf[j]);
        }
        // One exp per term serves both the normaliser and the responsibilities.
        let mut sum = 0.0;
        for v in buf.iter_mut() {
            *v = (*v - top).exp();
            sum += *v;
        }
        total += top + sum.ln();
        if let Some(r) = resp.as_deref_mut() {
            for j in 0..k {
                r[i * k + j] = buf[j] / sum;
            }
        }
    }
    total
}

/// Weighted Beta MLE given mean sufficient statistics, by Newton ascent from `(a, b)`.
/// Steps are halved until the objective does not decrease.
fn beta_mle(mut a: f64, mut b: f64, s1: f64, s2: f64) -> (f64, f64) {
    let obj = |a: f64, b: f64| (a - 1.0) * s1 + (b - 1.0) * s2 - log_beta_unchecked(a, b);
    let mut f = obj(a, b);
    for _ in 0..100 {
        let psi_ab = digamma(a + b);
        let g1 = s1 - digamma(a) + psi_ab;
        let g2 = s2 - digamma(b) + psi_ab;
        if g1.abs() < 1e-12 && g2.abs() < 1e-12 {
            break;
        }
        let t_ab = trigamma(a + b);
        let h11 = trigamma(a) - t_ab;
        let h22 = trigamma(b) - t_ab;
        let h12 = -t_ab;
        let det = h11 * h22 - h12 * h12;
        let (da, db) = if det > 0.0 {
            ((h22 * g1 - h12 * g2) / det, (h11 * g2 - h12 * g1) / det)
        } else {
            (g1 / h11.max(1e-12), g2 / h22.max(1e-12))
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let (mut na, mut nb) = (a + t * da, b + t * db);
            if na + nb > MAX_CONCENTRATION {
                let shrink = MAX_CONCENTRATION / (na + nb);
                na *= shrink;
                nb *= shrink;
            }
            if na > 0.0 && nb > 0.0 {
                let nf = obj(na, nb);
                if nf >= f {
                    a = na;
                    b = nb;
                    moved = nf > f;
                    f = nf;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (a, b)
}

fn run_em(suff: &Suff, mut comps: Vec<BetaComponent>) -> Result<BetaMixtureFit> {
    let n = suff.ln_x.len();
    let mut resp = vec![0.0; n * comps.len()];
    let mut ll = log_likelihood(suff, &comps, Some(&mut resp));
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < EM_MAX_ITER {
        iterations += 1;
        let k = comps.len();
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let r = resp[i * k + j];
                w += r;
                s1 += r * suff.ln_x[i];
                s2 += r * suff.ln_1mx[i];
            }
            if w <= 0.0 {
                next.push(BetaComponent {
                    weight: 0.0,
                    ..comps[j]
                });
                continue;
            }
            let (a, b) = beta_mle(comps[j].a, comps[j].b, s1 / w, s2 / w);
            next.push(BetaComponent {
                weight: w / n as f64,
                a,
                b,
            });
        }
        if next.iter().any(|c| c.weight < MIN_WEIGHT) && next.len() > 1 {
            // Drop the degenerate component and restart the ascent from the survivors.
            next.retain(|c| c.weight >= MIN_WEIGHT);
            let total: f64 = next.iter().map(|c| c.weight).sum();
            next.iter_mut().for_each(|c| c.weight /= total);
            comps = next;
            resp = vec![0.0; n * comps.len()];
            ll = log_likelihood(suff, &comps, Some(&mut resp));
            trace.clear();
            trace.push(ll);
            continue;
        }
        let new_ll = log_likelihood(suff, &next, Some(&mut resp));
        if new_ll < ll - 1e-9 * ll.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "EM log-likelihood decreased from {ll} to {new_ll}"
            )));
        }
        comps = next;
        trace.push(new_ll);
        let change = (new_ll - ll) / n as f64;
        ll = new_ll;
        if change.abs() < EM_TOL {
            break;
        }
    }
    Ok(BetaMixtureFit {
        components: comps,
        log_likelihood: ll,
        criterion_value: f64::NAN,
        iterations,
        clamped: 0,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::draw_beta;
    use crate::numerics::RngStream;

    fn draws(rng: &mut RngStream, n: usize, a: f64, b: f64) -> Vec<f64> {
        (0..n).map(|_| draw_beta(rng, a, b)).collect()
    }

    fn monotone(trace: &[f64]) -> bool {
        trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs())
    }

    #[test]
    fn recovers_single_beta() {
        let mut rng = RngStream::new(21, 0);
        let xs = draws(&mut rng, 10_000, 3.0, 7.0);
        let fit = fit_beta_mixture(&xs, 3, SelectionCriterion::Aic).unwrap();
        assert_eq!(fit.components.len(), 1, "{:?}", fit.components);
        assert!((fit.components[0].mean() - 0.3).abs() < 0.02);
        assert!(monotone(&fit.trace));
    }

    #[test]
    fn recovers_two_component_mixture() {
        let mut rng = RngStream::new(22, 0);
        let mut xs = draws(&mut rng, 5_000, 20.0, 5.0);
        xs.extend(draws(&mut rng, 5_000, 5.0, 20.0));
        let fit = fit_beta_mixture(&xs, 3, SelectionCriterion::Bic).unwrap();
        assert_eq!(fit.components.len(), 2, "{:?}", fit.components);
        let mut means: Vec<f64> = fit.components.iter().map(|c| c.mean()).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] - 0.2).abs() < 0.05 && (means[1] - 0.8).abs() < 0.05);
        assert!(monotone(&fit.trace));
        assert!((fit.components.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let err = fit_beta_mixture(&vec![1.0; 500], 3, SelectionCriterion::Aic).unwrap_err();
        assert!(matches!(err, Error::Estimation(_)));
        assert!(fit_beta_mixture(&[0.5; 10], 3, SelectionCriterion::Aic).is_err());
    }

    #[test]
    fn boundary_samples_are_clamped() {
        let mut rng = RngStream::new(23, 0);
        let mut xs = draws(&mut rng, 1_000, 0.3, 3.0);
        xs.extend([0.0, 0.0, 1.0]);
        let fit = fit_beta_mixture(&xs, 2, SelectionCriterion::Aic).unwrap();
        assert!(fit.clamped >= 3);
        assert!(fit.components.iter().all(|c| c.a > 0.0 && c.b > 0.0));
    }

    #[test]
    fn beta_mle_fixed_point() {
        // Exact sufficient statistics of Beta(4, 9): E ln X = ψ(4) − ψ(13), E ln(1−X) = ψ(9) − ψ(13).
        let s1 = digamma(4.0) - digamma(13.0);
        let s2 = digamma(9.0) - digamma(13.0);
        let (a, b) = beta_mle(1.0, 1.0, s1, s2);
        assert!((a - 4.0).abs() < 1e-8 && (b - 9.0).abs() < 1e-8, "{a} {b}");
    }
}
