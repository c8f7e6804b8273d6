//! One arm end to end: stratum weights, hierarchical draws, composite prior,
//! mixture fit and the vague-weight search.

use super::{
    composite_prior_samples, find_omega_eq, stratum_weights, EqpsConfig, EqpsResult, StratumWeights,
};
use crate::data::{Arm, BinomialSummary, SourceLabel};
use crate::error::Result;
use crate::exec::Execution;
use crate::hierarchy::{sample_hierarchy, HierarchicalSpec, McmcConfig, PosteriorDraws};
use crate::mixture::{fit_beta_mixture, BetaComponent};
use crate::numerics::{rng::label, RngStream};
use crate::propensity::Stratification;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorOptions {
    pub mcmc: McmcConfig,
    /// Replace every equivalence probability by 1 (sample-size weights).
    pub equal_epsilon: bool,
    /// Keep the per-stratum draws in the result.
    pub keep_draws: bool,
}

impl Default for PriorOptions {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::desk(),
            equal_epsilon: false,
            keep_draws: false,
        }
    }
}

/// The λ/δ-independent part of an arm analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBuild {
    pub arm: Arm,
    pub weights: StratumWeights,
    /// Informative mixture components; empty when nothing can be borrowed.
    pub components: Vec<BetaComponent>,
    pub composite_mean: Option<f64>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub converged: bool,
    pub draws: Option<PosteriorDraws>,
}

impl PriorBuild {
    pub fn empty_borrow(&self) -> bool {
        self.components.is_empty()
    }
}

/// Every `stride`-th draw so that at most `max` remain.
pub(crate) fn thin(samples: Vec<f64>, max: usize) -> Vec<f64> {
    if samples.len() <= max {
        return samples;
    }
    let stride = samples.len().div_ceil(max);
    samples.into_iter().step_by(stride).collect()
}

/// Hierarchical draws for every stratum that can borrow; `None` when none can.
pub fn sample_arm(
    strat: &Stratification,
    arm: Arm,
    mcmc: &McmcConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<Option<PosteriorDraws>> {
    let spec = HierarchicalSpec::from_strata(&strat.strata, &strat.scales, arm);
    if spec.strata.iter().all(Option::is_none) {
        return Ok(None);
    }
    sample_hierarchy(
        &spec,
        mcmc,
        &rng.child(label("hierarchy")).child(arm.index() as u64),
        exec,
    )
    .map(Some)
}

/// Weights, composite and mixture fit from existing draws.
pub fn prior_from_draws(
    strat: &Stratification,
    arm: Arm,
    draws: Option<&PosteriorDraws>,
    equal_epsilon: bool,
    cfg: &EqpsConfig,
) -> Result<PriorBuild> {
    let weights = stratum_weights(
        &strat.strata,
        &strat.scales,
        arm,
        cfg.continuity,
        equal_epsilon,
    )?;
    let mut out = PriorBuild {
        arm,
        weights,
        components: vec![],
        composite_mean: None,
        max_rhat: 1.0,
        min_ess: f64::NAN,
        converged: true,
        draws: None,
    };
    let Some(draws) = draws.filter(|_| !out.weights.empty_borrow()) else {
        log::warn!("{arm} arm: nothing to borrow, analysis falls back to the vague prior");
        return Ok(out);
    };
    out.max_rhat = draws.max_rhat();
    out.min_ess = draws.min_ess();
    out.converged = draws.converged();
    if !out.converged {
        log::warn!(
            "{arm} arm: split R-hat {:.3} exceeds the limit",
            out.max_rhat
        );
    }
    if let Some(samples) = composite_prior_samples(draws, &out.weights)? {
        out.composite_mean = Some(samples.iter().sum::<f64>() / samples.len() as f64);
        let fit = fit_beta_mixture(&thin(samples, cfg.em_max_samples), cfg.k_max, cfg.criterion)?;
        out.components = fit.components;
    }
    Ok(out)
}

pub fn build_prior(
    strat: &Stratification,
    arm: Arm,
    opts: &PriorOptions,
    cfg: &EqpsConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<PriorBuild> {
    let draws = sample_arm(strat, arm, &opts.mcmc, rng, exec)?;
    let mut out = prior_from_draws(strat, arm, draws.as_ref(), opts.equal_epsilon, cfg)?;
    if opts.keep_draws {
        out.draws = draws;
    }
    Ok(out)
}

/// Search and final update for one arm against its current data.
pub fn calibrate(
    build: &PriorBuild,
    current: BinomialSummary,
    cfg: &EqpsConfig,
    rng: &RngStream,
) -> Result<EqpsResult> {
    find_omega_eq(
        &build.components,
        current,
        cfg,
        &mut rng.child(label("search")),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmAnalysis {
    pub current: BinomialSummary,
    pub prior: PriorBuild,
    pub result: EqpsResult,
}

pub fn analyze_arm(
    strat: &Stratification,
    arm: Arm,
    opts: &PriorOptions,
    cfg: &EqpsConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<ArmAnalysis> {
    cfg.validate()?;
    let current = strat.strata.pooled(SourceLabel::Current, arm);
    let prior = build_prior(strat, arm, opts, cfg, rng, exec)?;
    let result = calibrate(&prior, current, cfg, rng)?;
    Ok(ArmAnalysis {
        current,
        prior,
        result,
    })
}
