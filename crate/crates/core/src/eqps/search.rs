//! Consistency probability, the vague-weight search and the go/no-go decision.

use super::{prob_greater, ContinuityMode, EqpsConfig};
use crate::data::BinomialSummary;
use crate::error::{Error, Result};
use crate::mixture::{
    draw_beta, posterior_update, prior_effective_sample_size, robustify, BetaComponent,
    RobustBetaMixture, VagueComponent,
};
use crate::numerics::RngStream;
use serde::{Deserialize, Serialize};

/// Which mixture a candidate ω is judged by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStage {
    /// The robustified prior itself.
    Prior,
    /// Conjugate update with ω and π held at their prior values.
    #[default]
    Posterior,
    /// Conjugate update with data-driven ω and π.
    PosteriorUpdated,
}

/// Ascending ω grid 0, step, …, 1.
pub fn omega_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::config("omega grid step must lie in (0, 1]"));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "omega grid step {step} does not divide 1"
        )));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Pr(|p_hyb − p_curr| < δ) by direct simulation, with its standard error.
pub fn consistency_p(
    hybrid: &RobustBetaMixture,
    current: BinomialSummary,
    delta: f64,
    draws: usize,
    mode: ContinuityMode,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if draws < 1_000 {
        return Err(Error::config(
            "consistency probability needs at least 1000 draws",
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::config("equivalence margin must be positive"));
    }
    if delta >= 1.0 {
        return Ok((1.0, 0.0));
    }
    let (a, b) = mode.shapes(current)?;
    let hits = (0..draws)
        .filter(|_| {
            let c = draw_beta(rng, a, b);
            (hybrid.sample(rng) - c).abs() < delta
        })
        .count();
    let p = hits as f64 / draws as f64;
    Ok((p, (p * (1.0 - p) / draws as f64).sqrt()))
}

/// Per-component hit rates Pr(|X_j − p_curr| < δ) on common draws of p_curr.
///
/// Every candidate posterior in the search mixes the same components, so
/// p(ω) = Σ_j w_j(ω)·P_j. One table therefore scores the whole grid on common
/// random numbers, with the component choice integrated out exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTable {
    pub deltas: Vec<f64>,
    pub draws: usize,
    components: usize,
    mean: Vec<Vec<f64>>,
    cov: Vec<Vec<f64>>,
}

impl ConsistencyTable {
    pub fn estimate(
        components: &[(f64, f64)],
        current: (f64, f64),
        deltas: &[f64],
        draws: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if draws < 1_000 {
            return Err(Error::config(
                "consistency probability needs at least 1000 draws",
            ));
        }
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::config("equivalence margin must be positive"));
        }
        let j = components.len();
        let mut sum = vec![vec![0u64; j]; deltas.len()];
        let mut cross = vec![vec![0u64; j * j]; deltas.len()];
        let mut hit = vec![false; j];
        let mut x = vec![0.0; j];
        for _ in 0..draws {
            let c = draw_beta(rng, current.0, current.1);
            for (xi, &(a, b)) in x.iter_mut().zip(components) {
                *xi = draw_beta(rng, a, b);
            }
            for (d, &delta) in deltas.iter().enumerate() {
                for k in 0..j {
                    hit[k] = (x[k] - c).abs() < delta;
                    sum[d][k] += hit[k] as u64;
                }
                for k in 0..j {
                    if hit[k] {
                        for l in 0..j {
                            cross[d][k * j + l] += hit[l] as u64;
                        }
                    }
                }
            }
        }
        let m = draws as f64;
        let mean: Vec<Vec<f64>> = sum
            .iter()
            .map(|row| row.iter().map(|&s| s as f64 / m).collect())
            .collect();
        let cov = cross
            .iter()
            .zip(&mean)
            .map(|(cr, mu)| {
                (0..j * j)
                    .map(|kl| {
                        let (k, l) = (kl / j, kl % j);
                        (cr[kl] as f64 - m * mu[k] * mu[l]) / (m - 1.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            deltas: deltas.to_vec(),
            draws,
            components: j,
            mean,
            cov,
        })
    }

    /// Hit rate of every component for margin `delta_index`.
    pub fn hit_rates(&self, delta_index: usize) -> &[f64] {
        &self.mean[delta_index]
    }

    /// Mixture consistency probability and its Monte Carlo standard error.
    pub fn probability(&self, delta_index: usize, weights: &[f64]) -> (f64, f64) {
        if self.deltas[delta_index] >= 1.0 {
            return (1.0, 0.0);
        }
        let j = self.components;
        let p: f64 = weights
            .iter()
            .zip(&self.mean[delta_index])
            .map(|(w, m)| w * m)
            .sum();
        let cov = &self.cov[delta_index];
        let mut var = 0.0;
        for k in 0..j {
            for l in 0..j {
                var += weights[k] * weights[l] * cov[k * j + l];
            }
        }
        (p.clamp(0.0, 1.0), (var.max(0.0) / self.draws as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub omega: f64,
    pub p: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqpsResult {
    pub omega_eq: f64,
    /// Consistency probability at the chosen ω.
    pub p: f64,
    pub p_se: f64,
    /// No grid point reached λ and ω fell back to 1.
    pub fallback: bool,
    pub empty_borrow: bool,
    pub prior: RobustBetaMixture,
    /// Data-driven posterior of the robustified prior.
    pub posterior: RobustBetaMixture,
    pub prior_ess: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Components of the candidate mixtures, vague last.
pub fn candidate_components(
    stage: CandidateStage,
    components: &[BetaComponent],
    vague: VagueComponent,
    current: BinomialSummary,
) -> Vec<(f64, f64)> {
    let (y, f) = match stage {
        CandidateStage::Prior => (0.0, 0.0),
        _ => (current.y as f64, current.failures() as f64),
    };
    components
        .iter()
        .map(|c| (c.a + y, c.b + f))
        .chain(std::iter::once((vague.a + y, vague.b + f)))
        .collect()
}

/// Overall weights of [`candidate_components`] at vague weight `omega`.
pub fn candidate_weights(
    stage: CandidateStage,
    components: &[BetaComponent],
    vague: VagueComponent,
    current: BinomialSummary,
    omega: f64,
) -> Result<Vec<f64>> {
    let prior = robustify(components, vague, omega)?;
    let mix = match stage {
        CandidateStage::PosteriorUpdated => posterior_update(&prior, current),
        _ => prior,
    };
    let mut w: Vec<f64> = mix
        .components
        .iter()
        .map(|c| (1.0 - mix.omega) * c.weight)
        .collect();
    w.push(mix.omega);
    Ok(w)
}

/// Smallest ω on the grid whose candidate posterior is consistent with the
/// current data at level λ; 1 when none is.
pub fn find_omega_eq(
    components: &[BetaComponent],
    current: BinomialSummary,
    cfg: &EqpsConfig,
    rng: &mut RngStream,
) -> Result<EqpsResult> {
    let comps = candidate_components(cfg.stage, components, cfg.vague, current);
    let table = ConsistencyTable::estimate(
        &comps,
        cfg.continuity.shapes(current)?,
        &[cfg.delta],
        cfg.draws,
        rng,
    )?;
    find_omega_eq_with(components, current, &table, 0, cfg.lambda, cfg)
}

/// Search against a precomputed table, so several (δ, λ) pairs can share draws.
pub fn find_omega_eq_with(
    components: &[BetaComponent],
    current: BinomialSummary,
    table: &ConsistencyTable,
    delta_index: usize,
    lambda: f64,
    cfg: &EqpsConfig,
) -> Result<EqpsResult> {
    if current.n == 0 {
        return Err(Error::validation("current arm has no subjects"));
    }
    if table.components != components.len() + 1 {
        return Err(Error::Internal(
            "consistency table built for other components".into(),
        ));
    }
    let empty_borrow = components.is_empty();
    let mut curve = Vec::new();
    let mut chosen = None;
    let grid = if empty_borrow {
        vec![1.0]
    } else {
        omega_grid(cfg.grid_step)?
    };
    for omega in grid {
        let w = candidate_weights(cfg.stage, components, cfg.vague, current, omega)?;
        let (p, se) = table.probability(delta_index, &w);
        curve.push(CurvePoint { omega, p, se });
        if chosen.is_none() && p >= lambda {
            chosen = Some(curve.len() - 1);
        }
    }
    let (idx, fallback) = match chosen {
        Some(i) => (i, false),
        None => (curve.len() - 1, true),
    };
    let pick = curve[idx];
    let prior = if empty_borrow {
        RobustBetaMixture::vague_only(cfg.vague)
    } else {
        robustify(components, cfg.vague, pick.omega)?
    };
    let posterior = posterior_update(&prior, current);
    Ok(EqpsResult {
        omega_eq: pick.omega,
        p: pick.p,
        p_se: pick.se,
        fallback,
        empty_borrow,
        prior_ess: prior_effective_sample_size(&prior),
        prior,
        posterior,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Pr(p_treatment > p_control).
    pub probability: f64,
    pub success: bool,
}

/// Pr(p_t > p_c) between two independent Beta mixtures, summed exactly over
/// component pairs.
pub fn prob_treatment_better(treatment: &RobustBetaMixture, control: &RobustBetaMixture) -> f64 {
    let (t, c) = (treatment.weighted(), control.weighted());
    let mut p = 0.0;
    for ti in t.iter().filter(|x| x.weight > 0.0) {
        for cj in c.iter().filter(|x| x.weight > 0.0) {
            p += ti.weight * cj.weight * prob_greater((ti.a, ti.b), (cj.a, cj.b));
        }
    }
    p.clamp(0.0, 1.0)
}

/// Success when Pr(p_t > p_c) exceeds `threshold`.
pub fn decide_trial(
    treatment: &RobustBetaMixture,
    control: &RobustBetaMixture,
    threshold: f64,
) -> Decision {
    let probability = prob_treatment_better(treatment, control);
    Decision {
        probability,
        success: probability > threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(y: u64, n: u64) -> BinomialSummary {
        BinomialSummary { y, n }
    }

    fn comp(weight: f64, a: f64, b: f64) -> BetaComponent {
        BetaComponent { weight, a, b }
    }

    #[test]
    fn grid_shape() {
        let g = omega_grid(0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (0.0, 1.0));
        assert!(omega_grid(0.0).is_err());
    }

    #[test]
    fn wide_margin_is_certain() {
        let mut rng = RngStream::new(1, 0);
        let m = RobustBetaMixture::vague_only(VagueComponent::UNIFORM);
        assert_eq!(
            consistency_p(&m, bs(3, 10), 1.0, 1000, ContinuityMode::Half, &mut rng).unwrap(),
            (1.0, 0.0)
        );
        assert!(consistency_p(&m, bs(3, 10), 0.1, 10, ContinuityMode::Half, &mut rng).is_err());
    }

    #[test]
    fn direct_monte_carlo_matches_quadrature() {
        // Beta(50,50) against itself: |X − Y| < 0.1 by 2-D quadrature of the difference.
        let mix = robustify(&[comp(1.0, 50.0, 50.0)], VagueComponent::UNIFORM, 0.0).unwrap();
        let mut rng = RngStream::new(9, 0);
        let (p, se) = consistency_p(
            &mix,
            bs(50, 100),
            0.1,
            200_000,
            ContinuityMode::Half,
            &mut rng,
        )
        .unwrap();
        let oracle = {
            use crate::numerics::quad::integrate;
            use crate::numerics::special::{beta_cdf_unchecked, beta_ln_pdf};
            integrate(
                |c| {
                    let f = beta_ln_pdf(c, 50.0, 50.0).exp();
                    f * (beta_cdf_unchecked((c + 0.1).min(1.0), 50.0, 50.0)
                        - beta_cdf_unchecked((c - 0.1).max(0.0), 50.0, 50.0))
                },
                0.0,
                1.0,
                1e-12,
            )
        };
        assert!((p - oracle).abs() < 4.0 * se, "{p} vs {oracle} (se {se})");
    }

    #[test]
    fn table_agrees_with_direct_simulation() {
        let comps = [comp(0.7, 30.0, 70.0), comp(0.3, 8.0, 12.0)];
        let data = bs(35, 100);
        let cfg = EqpsConfig::default();
        let omega = 0.3;
        let mut rng = RngStream::new(4, 0);
        let cc = candidate_components(cfg.stage, &comps, cfg.vague, data);
        let table =
            ConsistencyTable::estimate(&cc, (35.0, 65.0), &[0.1], 200_000, &mut rng).unwrap();
        let w = candidate_weights(cfg.stage, &comps, cfg.vague, data, omega).unwrap();
        let (p, se) = table.probability(0, &w);
        let hybrid = robustify(&comps, cfg.vague, omega)
            .unwrap()
            .update_fixed_weights(data);
        let (q, qse) =
            consistency_p(&hybrid, data, 0.1, 200_000, ContinuityMode::Half, &mut rng).unwrap();
        assert!(
            (p - q).abs() < 4.0 * (se * se + qse * qse).sqrt(),
            "{p} vs {q}"
        );
        assert!(se <= qse * 1.01);
    }

    #[test]
    fn point_mass_hybrid_reduces_to_an_interval_probability() {
        // A hybrid concentrated at 0.9 leaves Pr(0.85 < p_curr < 0.95).
        let mix = robustify(&[comp(1.0, 9e5, 1e5)], VagueComponent::UNIFORM, 0.0).unwrap();
        let mut rng = RngStream::new(12, 0);
        let (p, se) = consistency_p(
            &mix,
            bs(90, 100),
            0.05,
            400_000,
            ContinuityMode::Strict,
            &mut rng,
        )
        .unwrap();
        use crate::numerics::special::beta_cdf;
        let oracle = beta_cdf(0.95, 90.0, 10.0).unwrap() - beta_cdf(0.85, 90.0, 10.0).unwrap();
        assert!((p - oracle).abs() < 4.0 * se + 1e-3, "{p} vs {oracle}");
    }

    #[test]
    fn external_equal_to_current_borrows_almost_fully() {
        let data = bs(60, 100);
        let comps = [comp(1.0, 60.0, 40.0)];
        let coarse = EqpsConfig {
            draws: 50_000,
            ..Default::default()
        };
        let fine = EqpsConfig {
            grid_step: 0.001,
            ..coarse.clone()
        };
        let a = find_omega_eq(&comps, data, &coarse, &mut RngStream::new(6, 0)).unwrap();
        let b = find_omega_eq(&comps, data, &fine, &mut RngStream::new(6, 0)).unwrap();
        assert!(a.omega_eq <= 0.1 && b.omega_eq <= 0.1);
        // The coarse answer is the fine one rounded up to the coarse grid.
        assert!(a.omega_eq >= b.omega_eq && a.omega_eq - b.omega_eq < 0.01 + 1e-12);
    }

    #[test]
    fn agreeing_prior_needs_no_vague_weight() {
        let comps = [comp(1.0, 60.0, 40.0)];
        let mut rng = RngStream::new(2, 0);
        let r = find_omega_eq(
            &comps,
            bs(60, 100),
            &EqpsConfig {
                draws: 20_000,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.omega_eq, 0.0);
        assert!(!r.fallback && r.p >= 0.8);
        assert_eq!(r.curve.len(), 101);
    }

    #[test]
    fn conflicting_prior_is_discounted() {
        let comps = [comp(1.0, 200.0, 800.0)];
        let mut rng = RngStream::new(3, 0);
        let cfg = EqpsConfig {
            draws: 20_000,
            ..Default::default()
        };
        let r = find_omega_eq(&comps, bs(45, 100), &cfg, &mut rng).unwrap();
        assert!(r.omega_eq > 0.3, "{}", r.omega_eq);
        // Search result is the first grid point at or above λ.
        let first = r
            .curve
            .iter()
            .find(|c| c.p >= cfg.lambda)
            .map(|c| c.omega)
            .unwrap_or(1.0);
        assert_eq!(first, r.omega_eq);
        assert!(r
            .curve
            .windows(2)
            .all(|w| w[1].p >= w[0].p - 2.0 * (w[0].se + w[1].se)));
    }

    #[test]
    fn unreachable_threshold_falls_back_to_one() {
        let comps = [comp(1.0, 200.0, 800.0)];
        let mut rng = RngStream::new(3, 0);
        let cfg = EqpsConfig {
            draws: 20_000,
            lambda: 0.99,
            ..Default::default()
        };
        let r = find_omega_eq(&comps, bs(45, 100), &cfg, &mut rng).unwrap();
        assert!(r.fallback);
        assert_eq!(r.omega_eq, 1.0);
        assert_eq!(r.posterior.omega, 1.0);
    }

    #[test]
    fn empty_borrow_uses_vague_prior() {
        let mut rng = RngStream::new(3, 0);
        let r = find_omega_eq(
            &[],
            bs(45, 100),
            &EqpsConfig {
                draws: 2_000,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        assert!(r.empty_borrow);
        assert_eq!(r.omega_eq, 1.0);
        assert_eq!((r.posterior.vague.a, r.posterior.vague.b), (46.0, 56.0));
    }

    #[test]
    fn stage_weights() {
        let comps = [comp(1.0, 10.0, 10.0)];
        let w = candidate_weights(
            CandidateStage::Posterior,
            &comps,
            VagueComponent::UNIFORM,
            bs(5, 10),
            0.25,
        )
        .unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
        let w = candidate_weights(
            CandidateStage::PosteriorUpdated,
            &comps,
            VagueComponent::UNIFORM,
            bs(5, 10),
            0.25,
        )
        .unwrap();
        assert!(w[1] < 0.25 && (w[0] + w[1] - 1.0).abs() < 1e-12);
        let c = candidate_components(
            CandidateStage::Prior,
            &comps,
            VagueComponent::UNIFORM,
            bs(5, 10),
        );
        assert_eq!(c, vec![(10.0, 10.0), (1.0, 1.0)]);
    }

    #[test]
    fn decision_examples() {
        let t = robustify(&[comp(1.0, 65.0, 35.0)], VagueComponent::UNIFORM, 0.0).unwrap();
        let c = robustify(&[comp(1.0, 40.0, 60.0)], VagueComponent::UNIFORM, 0.0).unwrap();
        let d = decide_trial(&t, &c, 0.95);
        assert!(d.success && d.probability > 0.99);
        let d = decide_trial(&t, &t, 0.95);
        assert!((d.probability - 0.5).abs() < 1e-9);
        assert!(!d.success);
        let t = robustify(&[comp(1.0, 650.0, 350.0)], VagueComponent::UNIFORM, 0.0).unwrap();
        let c = robustify(&[comp(1.0, 400.0, 600.0)], VagueComponent::UNIFORM, 0.0).unwrap();
        let d = decide_trial(&t, &c, 0.95);
        assert!(d.success && d.probability > 0.9999);
        let back = decide_trial(&c, &t, 0.95);
        assert!((d.probability + back.probability - 1.0).abs() < 1e-9);
        assert!(!back.success);
    }

    #[test]
    fn mixture_decision_matches_paired_sampling() {
        let t = robustify(
            &[comp(0.6, 30.0, 20.0), comp(0.4, 5.0, 5.0)],
            VagueComponent::UNIFORM,
            0.3,
        )
        .unwrap();
        let c = robustify(&[comp(1.0, 22.0, 28.0)], VagueComponent::JEFFREYS, 0.1).unwrap();
        let exact = prob_treatment_better(&t, &c);
        let mut rng = RngStream::new(5, 0);
        let n = 1_000_000;
        let wins = (0..n)
            .filter(|_| t.sample(&mut rng) > c.sample(&mut rng))
            .count() as f64
            / n as f64;
        assert!((wins - exact).abs() < 0.002, "{wins} vs {exact}");
    }
}
