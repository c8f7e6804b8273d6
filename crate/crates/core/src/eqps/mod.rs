//! Equivalence-probability weighting of strata, the composite prior on the
//! current-trial log-odds, the vague-weight search and the trial decision.

mod pipeline;
mod search;

pub(crate) use pipeline::thin;
pub use pipeline::{
    analyze_arm, build_prior, calibrate, prior_from_draws, sample_arm, ArmAnalysis, PriorBuild,
    PriorOptions,
};
pub use search::{
    candidate_components, candidate_weights, consistency_p, decide_trial, find_omega_eq,
    find_omega_eq_with, omega_grid, prob_treatment_better, CandidateStage, ConsistencyTable,
    CurvePoint, Decision, EqpsResult,
};

use crate::data::{Arm, BinomialSummary, SourceLabel, StratifiedData};
use crate::error::{Error, Result};
use crate::hierarchy::{borrowed_sources, PosteriorDraws};
use crate::mixture::{SelectionCriterion, VagueComponent};
use crate::numerics::quad::{beta_breaks, integrate_with_breaks};
use crate::numerics::special::{beta_cdf_unchecked, beta_ln_pdf, expit};
use crate::propensity::OverlapScales;
use serde::{Deserialize, Serialize};

/// Handling of Beta(y, n − y) when y is 0 or n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuityMode {
    /// Add ½ to both shape parameters at the boundary.
    #[default]
    Half,
    /// Refuse boundary counts.
    Strict,
}

impl ContinuityMode {
    /// Shape parameters of the response-rate distribution Beta(y, n − y).
    pub fn shapes(self, data: BinomialSummary) -> Result<(f64, f64)> {
        if data.n == 0 {
            return Err(Error::validation("response-rate distribution needs n > 0"));
        }
        let (y, f) = (data.y as f64, (data.n - data.y) as f64);
        if data.y > 0 && data.y < data.n {
            return Ok((y, f));
        }
        match self {
            ContinuityMode::Half => {
                log::warn!(
                    "boundary count {}/{}: adding 0.5 to both Beta parameters",
                    data.y,
                    data.n
                );
                Ok((y + 0.5, f + 0.5))
            }
            ContinuityMode::Strict => Err(Error::domain(format!(
                "Beta(y, n - y) is improper for y = {} of n = {}",
                data.y, data.n
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EqpsConfig {
    /// Compatibility threshold λ.
    pub lambda: f64,
    /// Clinical equivalence margin δ.
    pub delta: f64,
    pub grid_step: f64,
    /// Monte Carlo size for the consistency probability.
    pub draws: usize,
    pub stage: CandidateStage,
    pub continuity: ContinuityMode,
    pub vague: VagueComponent,
    pub k_max: usize,
    pub criterion: SelectionCriterion,
    /// Composite draws are thinned to at most this many before the mixture fit.
    pub em_max_samples: usize,
    /// Posterior probability Pr(θ_t > θ_c) required for success.
    pub success_threshold: f64,
}

impl Default for EqpsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            delta: 0.1,
            grid_step: 0.01,
            draws: 100_000,
            stage: CandidateStage::Posterior,
            continuity: ContinuityMode::Half,
            vague: VagueComponent::UNIFORM,
            k_max: 3,
            criterion: SelectionCriterion::Aic,
            em_max_samples: 4_000,
            success_threshold: 0.95,
        }
    }
}

impl EqpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::config("lambda must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta must lie in (0, 1)"));
        }
        omega_grid(self.grid_step)?;
        if self.draws < 1_000 {
            return Err(Error::config("Monte Carlo sizes must be at least 1000"));
        }
        if self.k_max == 0 || self.em_max_samples < 100 {
            return Err(Error::config(
                "mixture fit needs k_max >= 1 and at least 100 samples",
            ));
        }
        if !(self.success_threshold > 0.0 && self.success_threshold < 1.0) {
            return Err(Error::config("success threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// ε = 2·min{Pr(p_a > p_b), 1 − Pr(p_a > p_b)} with p ~ Beta(y, n − y).
pub fn equivalence_prob(
    a: BinomialSummary,
    b: BinomialSummary,
    mode: ContinuityMode,
) -> Result<f64> {
    let (aa, ab) = mode.shapes(a)?;
    let (ba, bb) = mode.shapes(b)?;
    let pr = prob_greater((aa, ab), (ba, bb));
    Ok((2.0 * pr.min(1.0 - pr)).clamp(0.0, 1.0))
}

/// Pr(X > Y) for independent X ~ Beta(xa, xb), Y ~ Beta(ya, yb): ∫ f_X(t) F_Y(t) dt.
pub fn prob_greater(x: (f64, f64), y: (f64, f64)) -> f64 {
    let mut breaks = beta_breaks(x.0, x.1);
    breaks.extend(beta_breaks(y.0, y.1));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let integrand = |t: f64| {
        let f = beta_ln_pdf(t, x.0, x.1).exp();
        if f == 0.0 {
            0.0
        } else {
            f * beta_cdf_unchecked(t, y.0, y.1)
        }
    };
    integrate_with_breaks(integrand, &breaks, 1e-11).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumWeight {
    pub epsilon_external: Option<f64>,
    pub epsilon_rwd: Option<f64>,
    pub omega_external: f64,
    pub omega_rwd: f64,
    /// n_Curr,s / N_Curr within the arm.
    pub current_share: f64,
    pub no_borrow: bool,
}

impl StratumWeight {
    pub fn omega(&self, source: SourceLabel) -> f64 {
        match source {
            SourceLabel::External => self.omega_external,
            SourceLabel::RealWorld => self.omega_rwd,
            SourceLabel::Current => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumWeights {
    pub arm: Arm,
    pub strata: Vec<StratumWeight>,
}

impl StratumWeights {
    pub fn empty_borrow(&self) -> bool {
        self.strata.iter().all(|s| s.no_borrow)
    }
}

/// Per-stratum source weights n·ε / Σ n·ε for one arm. A source takes part in a
/// stratum when it has subjects there and a finite half-normal scale. With
/// `equal_epsilon` every ε is 1 and the weights are sample-size shares.
pub fn stratum_weights(
    strata: &StratifiedData,
    scales: &OverlapScales,
    arm: Arm,
    mode: ContinuityMode,
    equal_epsilon: bool,
) -> Result<StratumWeights> {
    let n_arm: u64 = (0..strata.n_strata())
        .map(|s| strata.summary(s, SourceLabel::Current, arm).n)
        .sum();
    if n_arm == 0 {
        return Err(Error::validation(format!(
            "current trial has no {arm} subjects"
        )));
    }
    let mut out = Vec::with_capacity(strata.n_strata());
    for s in 0..strata.n_strata() {
        let current = strata.summary(s, SourceLabel::Current, arm);
        let mut eps = [None, None];
        let mut mass = [0.0, 0.0];
        for &src in borrowed_sources(arm) {
            let slot = (src == SourceLabel::RealWorld) as usize;
            let data = strata.summary(s, src, arm);
            if data.n == 0 || !scales.for_source(src).scale[s].is_finite() {
                continue;
            }
            let e = if equal_epsilon || current.n == 0 {
                if current.n == 0 && !equal_epsilon {
                    log::warn!(
                        "stratum {}: no current {arm} subjects, equivalence set to 1",
                        s + 1
                    );
                }
                1.0
            } else {
                equivalence_prob(data, current, mode)?
            };
            eps[slot] = Some(e);
            mass[slot] = data.n as f64 * e;
        }
        let total = mass[0] + mass[1];
        let no_borrow = !(total > 0.0);
        out.push(StratumWeight {
            epsilon_external: eps[0],
            epsilon_rwd: eps[1],
            omega_external: if no_borrow { 0.0 } else { mass[0] / total },
            omega_rwd: if no_borrow { 0.0 } else { mass[1] / total },
            current_share: current.n as f64 / n_arm as f64,
            no_borrow,
        });
    }
    Ok(StratumWeights { arm, strata: out })
}

/// Inverse-logit draws of θ_curr = Σ_s share_s (Σ_source ω θ). Shares are
/// renormalized over strata that can borrow; `None` when none can.
pub fn composite_prior_samples(
    draws: &PosteriorDraws,
    w: &StratumWeights,
) -> Result<Option<Vec<f64>>> {
    if draws.strata.len() != w.strata.len() {
        return Err(Error::validation(
            "draws and weights cover different strata",
        ));
    }
    let usable: Vec<usize> = (0..w.strata.len())
        .filter(|&s| !w.strata[s].no_borrow && draws.strata[s].is_some())
        .collect();
    let share_total: f64 = usable.iter().map(|&s| w.strata[s].current_share).sum();
    if usable.is_empty() || !(share_total > 0.0) {
        return Ok(None);
    }
    let len = draws.strata[usable[0]]
        .as_ref()
        .expect("usable")
        .draws
        .len();
    let mut theta = vec![0.0; len];
    for &s in &usable {
        let sd = draws.strata[s].as_ref().expect("usable");
        let share = w.strata[s].current_share / share_total;
        for src in [SourceLabel::External, SourceLabel::RealWorld] {
            let omega = w.strata[s].omega(src);
            if omega == 0.0 {
                continue;
            }
            let th = sd.theta(src).ok_or_else(|| {
                Error::Internal(format!(
                    "stratum {} has weight on {src} but no draws",
                    s + 1
                ))
            })?;
            if th.len() != len {
                return Err(Error::Internal("strata carry different draw counts".into()));
            }
            for (acc, v) in theta.iter_mut().zip(th) {
                *acc += share * omega * v;
            }
        }
    }
    Ok(Some(theta.into_iter().map(expit).collect()))
}
