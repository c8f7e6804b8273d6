//! Beta mixtures: the robust prior/posterior object, its conjugate update and summaries.

mod em;

pub use em::{fit_beta_mixture, BetaMixtureFit, SelectionCriterion, EM_MAX_ITER};

use crate::data::BinomialSummary;
use crate::error::{Error, Result};
use crate::numerics::special::{beta_cdf_unchecked, beta_ln_pdf, log_beta_unchecked, log_sum_exp};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaComponent {
    pub weight: f64,
    pub a: f64,
    pub b: f64,
}

impl BetaComponent {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// E[X²].
    fn second_moment(&self) -> f64 {
        let s = self.a + self.b;
        self.a * (self.a + 1.0) / (s * (s + 1.0))
    }
}

/// The vague (robustifying) component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VagueComponent {
    pub a: f64,
    pub b: f64,
}

impl VagueComponent {
    pub const UNIFORM: VagueComponent = VagueComponent { a: 1.0, b: 1.0 };
    pub const JEFFREYS: VagueComponent = VagueComponent { a: 0.5, b: 0.5 };
}

impl Default for VagueComponent {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// (1 − ω) Σ π_k Beta(a_k, b_k) + ω Beta(a₀, b₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustBetaMixture {
    pub components: Vec<BetaComponent>,
    pub vague: VagueComponent,
    pub omega: f64,
}

fn check_shape(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::validation(format!(
            "beta shapes must be positive and finite (got {a}, {b})"
        )));
    }
    Ok(())
}

/// Mixes informative components with the vague one at weight `omega`.
/// Weights are renormalized to sum to one.
pub fn robustify(
    components: &[BetaComponent],
    vague: VagueComponent,
    omega: f64,
) -> Result<RobustBetaMixture> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::validation(format!(
            "vague weight {omega} outside [0, 1]"
        )));
    }
    check_shape(vague.a, vague.b)?;
    for c in components {
        check_shape(c.a, c.b)?;
        if !(c.weight > 0.0) {
            return Err(Error::validation("component weights must be positive"));
        }
    }
    if components.is_empty() && omega < 1.0 {
        return Err(Error::validation(
            "a mixture without informative components needs vague weight 1",
        ));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let components = components
        .iter()
        .map(|c| BetaComponent {
            weight: c.weight / total,
            ..*c
        })
        .collect();
    Ok(RobustBetaMixture {
        components,
        vague,
        omega,
    })
}

impl RobustBetaMixture {
    /// The vague component alone.
    pub fn vague_only(vague: VagueComponent) -> Self {
        Self {
            components: vec![],
            vague,
            omega: 1.0,
        }
    }

    /// Every component with its overall weight, the vague one last.
    pub fn weighted(&self) -> Vec<BetaComponent> {
        let mut out: Vec<BetaComponent> = self
            .components
            .iter()
            .map(|c| BetaComponent {
                weight: (1.0 - self.omega) * c.weight,
                ..*c
            })
            .collect();
        out.push(BetaComponent {
            weight: self.omega,
            a: self.vague.a,
            b: self.vague.b,
        });
        out.retain(|c| c.weight > 0.0);
        out
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weighted()
            .iter()
            .map(|c| c.weight * beta_ln_pdf(x, c.a, c.b).exp())
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weighted().iter().map(|c| c.weight * c.mean()).sum()
    }

    pub fn variance(&self) -> f64 {
        let w = self.weighted();
        let m: f64 = w.iter().map(|c| c.weight * c.mean()).sum();
        let m2: f64 = w.iter().map(|c| c.weight * c.second_moment()).sum();
        (m2 - m * m).max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        self.weighted()
            .iter()
            .map(|c| c.weight * beta_cdf_unchecked(x, c.a, c.b))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Inverse cdf by bisection to 1e-10.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::domain(format!("quantile level {q} outside (0, 1)")));
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let w = self.weighted();
        let mut u = rng.random::<f64>();
        let mut pick = w[w.len() - 1];
        for c in &w {
            if u < c.weight {
                pick = *c;
                break;
            }
            u -= c.weight;
        }
        draw_beta(rng, pick.a, pick.b)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Parameters of the component-wise posterior after observing `data`,
    /// without touching the weights.
    fn shifted(&self, data: BinomialSummary) -> (Vec<BetaComponent>, VagueComponent) {
        let (y, f) = (data.y as f64, (data.n - data.y) as f64);
        let comps = self
            .components
            .iter()
            .map(|c| BetaComponent {
                weight: c.weight,
                a: c.a + y,
                b: c.b + f,
            })
            .collect();
        (
            comps,
            VagueComponent {
                a: self.vague.a + y,
                b: self.vague.b + f,
            },
        )
    }

    /// Conjugate update of every component with the weights held fixed.
    pub fn update_fixed_weights(&self, data: BinomialSummary) -> RobustBetaMixture {
        let (components, vague) = self.shifted(data);
        RobustBetaMixture {
            components,
            vague,
            omega: self.omega,
        }
    }
}

pub fn draw_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("validated beta shapes").sample(rng)
}

/// ln of the marginal likelihood ratio B(a+y, b+N−y) / B(a, b) (binomial coefficient omitted).
pub fn log_marginal_ratio(a: f64, b: f64, data: BinomialSummary) -> f64 {
    let (y, f) = (data.y as f64, (data.n - data.y) as f64);
    log_beta_unchecked(a + y, b + f) - log_beta_unchecked(a, b)
}

/// Posterior mixture with the data-driven weight update, all ratios in log space.
pub fn posterior_update(prior: &RobustBetaMixture, data: BinomialSummary) -> RobustBetaMixture {
    let (components, vague) = prior.shifted(data);
    if prior.components.is_empty() || prior.omega >= 1.0 {
        return RobustBetaMixture {
            components,
            vague,
            omega: 1.0,
        };
    }
    let log_inf: Vec<f64> = prior
        .components
        .iter()
        .map(|c| c.weight.ln() + log_marginal_ratio(c.a, c.b, data))
        .collect();
    let lse_inf = log_sum_exp(&log_inf);
    let components = components
        .into_iter()
        .zip(&log_inf)
        .map(|(c, lw)| BetaComponent {
            weight: (lw - lse_inf).exp(),
            ..c
        })
        .collect();
    let omega = if prior.omega <= 0.0 {
        0.0
    } else {
        let log_vague = prior.omega.ln() + log_marginal_ratio(prior.vague.a, prior.vague.b, data);
        let log_rest = (1.0 - prior.omega).ln() + lse_inf;
        (log_vague - log_sum_exp(&[log_vague, log_rest])).exp()
    };
    RobustBetaMixture {
        components,
        vague,
        omega,
    }
}

/// Moment-matched Beta(ã, b̃) pseudo-sample size ã + b̃. `None` when the
/// variance is at least m(1 − m).
pub fn prior_effective_sample_size(m: &RobustBetaMixture) -> Option<f64> {
    let mean = m.mean();
    let var = m.variance();
    let bound = mean * (1.0 - mean);
    (var > 0.0 && var < bound).then(|| bound / var - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::{beta_breaks, integrate_with_breaks};
    use crate::numerics::RngStream;

    fn comp(a: f64, b: f64) -> BetaComponent {
        BetaComponent { weight: 1.0, a, b }
    }

    fn bs(y: u64, n: u64) -> BinomialSummary {
        BinomialSummary { y, n }
    }

    #[test]
    fn robustify_extremes() {
        let c = [comp(3.0, 5.0)];
        let m0 = robustify(&c, VagueComponent::UNIFORM, 0.0).unwrap();
        assert_eq!(m0.weighted(), vec![comp(3.0, 5.0)]);
        let m1 = robustify(&c, VagueComponent::UNIFORM, 1.0).unwrap();
        assert_eq!(m1.weighted(), vec![comp(1.0, 1.0)]);
        let half = robustify(&[comp(2.0, 2.0)], VagueComponent::UNIFORM, 0.5).unwrap();
        assert!((half.density(0.5) - 1.25).abs() < 1e-12);
        assert!(robustify(&[], VagueComponent::UNIFORM, 0.5).is_err());
        assert!(robustify(&c, VagueComponent::UNIFORM, 1.5).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let m = robustify(
            &[
                BetaComponent {
                    weight: 0.3,
                    a: 40.0,
                    b: 12.0,
                },
                BetaComponent {
                    weight: 0.7,
                    a: 3.0,
                    b: 9.0,
                },
            ],
            VagueComponent::JEFFREYS,
            0.2,
        )
        .unwrap();
        let mut breaks = beta_breaks(40.0, 12.0);
        breaks.extend(beta_breaks(3.0, 9.0));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let eps = 1e-14;
        breaks[0] = eps;
        *breaks.last_mut().unwrap() = 1.0 - eps;
        // The Jeffreys component has integrable endpoint singularities; add their tails analytically.
        let tails = 0.2 * 2.0 * beta_cdf_unchecked(eps, 0.5, 0.5);
        let mass = integrate_with_breaks(|x| m.density(x), &breaks, 1e-10) + tails;
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn conjugate_single_component() {
        let prior = robustify(&[comp(2.5, 7.25)], VagueComponent::UNIFORM, 0.0).unwrap();
        let post = posterior_update(&prior, bs(13, 40));
        assert_eq!(post.omega, 0.0);
        assert_eq!(
            post.components,
            vec![BetaComponent {
                weight: 1.0,
                a: 15.5,
                b: 34.25
            }]
        );
    }

    #[test]
    fn weight_update_worked_example() {
        let prior = robustify(&[comp(2.0, 2.0)], VagueComponent::UNIFORM, 0.5).unwrap();
        let post = posterior_update(&prior, bs(1, 2));
        assert!((post.omega - 5.0 / 11.0).abs() < 1e-12);
        let never = robustify(&[comp(2.0, 2.0)], VagueComponent::UNIFORM, 1.0).unwrap();
        assert_eq!(posterior_update(&never, bs(30, 31)).omega, 1.0);
    }

    #[test]
    fn update_order_equivalence() {
        let prior = robustify(&[comp(1.7, 3.1)], VagueComponent::UNIFORM, 0.0).unwrap();
        let two = posterior_update(&posterior_update(&prior, bs(4, 11)), bs(9, 20));
        let one = posterior_update(&prior, bs(13, 31));
        assert_eq!(two, one);
    }

    #[test]
    fn large_counts_stay_finite() {
        let prior = robustify(&[comp(300.0, 700.0)], VagueComponent::UNIFORM, 0.2).unwrap();
        let post = posterior_update(&prior, bs(900, 1000));
        assert!(post.omega > 0.999 && post.omega <= 1.0);
        let post = posterior_update(&prior, bs(300, 1000));
        assert!(post.omega < 0.05 && post.omega > 0.0);
    }

    #[test]
    fn stats() {
        let u = RobustBetaMixture::vague_only(VagueComponent::UNIFORM);
        assert!((u.mean() - 0.5).abs() < 1e-15);
        assert!((u.cdf(0.25) - 0.25).abs() < 1e-12);
        let sym = robustify(
            &[comp(9.0, 1.0), comp(1.0, 9.0)],
            VagueComponent::UNIFORM,
            0.0,
        )
        .unwrap();
        assert!((sym.mean() - 0.5).abs() < 1e-15);
        let m = robustify(
            &[comp(9.0, 3.0), comp(2.0, 9.0)],
            VagueComponent::UNIFORM,
            0.1,
        )
        .unwrap();
        for q in [0.01, 0.5, 0.99] {
            assert!((m.cdf(m.quantile(q).unwrap()) - q).abs() < 1e-8);
        }
        assert!(m.quantile(0.0).is_err());
        let mut rng = RngStream::new(10, 0);
        let n = 1_000_000;
        let mc = m.sample_n(&mut rng, n).iter().sum::<f64>() / n as f64;
        assert!((mc - m.mean()).abs() < 0.002);
    }

    #[test]
    fn effective_sample_sizes() {
        let ess = |m: &RobustBetaMixture| prior_effective_sample_size(m).unwrap();
        assert!(
            (ess(&robustify(&[comp(10.0, 10.0)], VagueComponent::UNIFORM, 0.0).unwrap()) - 20.0)
                .abs()
                < 1e-9
        );
        assert!((ess(&RobustBetaMixture::vague_only(VagueComponent::UNIFORM)) - 2.0).abs() < 1e-9);
        // 0.5·Beta(10,10) + 0.5·Beta(1,1): mean ½, E[X²] = ½(110/420) + ½(1/3).
        let m2 = 0.5 * 110.0 / 420.0 + 0.5 / 3.0;
        let var = m2 - 0.25;
        let want = 0.25 / var - 1.0;
        let mix = robustify(&[comp(10.0, 10.0)], VagueComponent::UNIFORM, 0.5).unwrap();
        assert!((ess(&mix) - want).abs() < 1e-9);
        let bimodal = robustify(&[comp(0.01, 0.01)], VagueComponent::UNIFORM, 0.0).unwrap();
        assert!(prior_effective_sample_size(&bimodal).is_some_and(|e| e < 0.05));
    }
}
