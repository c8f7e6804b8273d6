//! Reference borrowing methods and a per-dataset analyzer that runs any of
//! them, sharing the expensive fits between methods.

use crate::data::{summarize, Arm, BinomialSummary, SourceLabel, Subject};
use crate::eqps::{
    calibrate, decide_trial, prior_from_draws, sample_arm, thin, Decision, EqpsConfig, PriorBuild,
    StratumWeights,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hierarchy::{borrowed_sources, sample_unstratified_map, McmcConfig, PosteriorDraws};
use crate::mixture::{
    fit_beta_mixture, posterior_update, prior_effective_sample_size, robustify, BetaComponent,
    RobustBetaMixture,
};
use crate::numerics::special::{expit, ln_choose, log_beta_unchecked, log_sum_exp};
use crate::numerics::{rng::label, RngStream};
use crate::propensity::{stratify_subjects, Stratification};
use serde::{Deserialize, Serialize};
use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    NoBorrow,
    Map,
    Rmap,
    EbRmap,
    PsMap,
    Eqps,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NoBorrow,
        Method::Map,
        Method::Rmap,
        Method::EbRmap,
        Method::PsMap,
        Method::Eqps,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Method::NoBorrow => "noborrow",
            Method::Map => "map",
            Method::Rmap => "rmap",
            Method::EbRmap => "ebrmap",
            Method::PsMap => "psmap",
            Method::Eqps => "eqps",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.token() == t)
            .ok_or_else(|| Error::config(format!("unknown method '{s}' (expected one of noborrow, map, rmap, ebrmap, psmap, eqps)")))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let out: Vec<Method> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::config("method list is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparatorConfig {
    /// Half-normal scale of the between-history heterogeneity in MAP fits.
    pub map_tau_scale: f64,
    /// Fixed vague weight of rMAP.
    pub rmap_omega: f64,
    /// Ascending Box p-value cut points.
    pub eb_thresholds: Vec<f64>,
    /// Vague weight for p below the first cut, between cuts, and above the last.
    pub eb_weights: Vec<f64>,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            map_tau_scale: 1.0,
            rmap_omega: 0.2,
            eb_thresholds: vec![0.01, 0.05, 0.2],
            eb_weights: vec![1.0, 0.8, 0.5, 0.1],
        }
    }
}

impl ComparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.map_tau_scale > 0.0 && self.map_tau_scale.is_finite()) {
            return Err(Error::config(
                "MAP heterogeneity scale must be positive and finite",
            ));
        }
        if !(0.0..=1.0).contains(&self.rmap_omega) {
            return Err(Error::config("rMAP vague weight must lie in [0, 1]"));
        }
        let t = &self.eb_thresholds;
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "EB thresholds must be strictly ascending in [0, 1]",
            ));
        }
        if self.eb_weights.len() != t.len() + 1
            || self.eb_weights.iter().any(|w| !(0.0..=1.0).contains(w))
        {
            return Err(Error::config(
                "EB step needs one weight in [0, 1] per interval",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub n_strata: usize,
    pub mcmc: McmcConfig,
    pub eqps: EqpsConfig,
    pub comparators: ComparatorConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_strata: 5,
            mcmc: McmcConfig::desk(),
            eqps: EqpsConfig::default(),
            comparators: ComparatorConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_strata == 0 {
            return Err(Error::config("need at least one stratum"));
        }
        self.mcmc.validate()?;
        self.eqps.validate()?;
        self.comparators.validate()
    }
}

/// Box's prior-predictive p-value: predictive mass of counts no more likely
/// than the observed one under the beta-binomial mixture.
pub fn box_p_value(prior: &RobustBetaMixture, current: BinomialSummary) -> f64 {
    let n = current.n;
    let comps: Vec<(f64, f64, f64)> = prior
        .weighted()
        .into_iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| (c.weight.ln() - log_beta_unchecked(c.a, c.b), c.a, c.b))
        .collect();
    let log_pmf: Vec<f64> = (0..=n)
        .map(|k| {
            let (kf, rest) = (k as f64, (n - k) as f64);
            let terms: Vec<f64> = comps
                .iter()
                .map(|&(lw, a, b)| lw + log_beta_unchecked(a + kf, b + rest))
                .collect();
            ln_choose(n, k) + log_sum_exp(&terms)
        })
        .collect();
    let observed = log_pmf[current.y as usize];
    let tol = 1e-12 * observed.abs().max(1.0);
    let tail: Vec<f64> = log_pmf
        .iter()
        .copied()
        .filter(|&l| l <= observed + tol)
        .collect();
    log_sum_exp(&tail).exp().min(1.0)
}

/// Vague weight from the EB step function.
pub fn eb_weight(p: f64, cfg: &ComparatorConfig) -> f64 {
    let idx = cfg.eb_thresholds.iter().take_while(|&&t| p >= t).count();
    cfg.eb_weights[idx]
}

/// Unstratified MAP mixture for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPrior {
    pub histories: Vec<BinomialSummary>,
    pub components: Vec<BetaComponent>,
    pub converged: bool,
    pub max_rhat: f64,
}

/// Pooled history per borrowed source for an arm.
pub fn map_histories(subjects: &[Subject], arm: Arm) -> Vec<BinomialSummary> {
    borrowed_sources(arm)
        .iter()
        .map(|&src| summarize(subjects, |s| s.source == src && s.arm == arm))
        .filter(|h| h.n > 0)
        .collect()
}

pub fn fit_map_prior(
    histories: &[BinomialSummary],
    cfg: &AnalysisConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<MapPrior> {
    if histories.is_empty() {
        return Ok(MapPrior {
            histories: vec![],
            components: vec![],
            converged: true,
            max_rhat: 1.0,
        });
    }
    let draws = sample_unstratified_map(
        histories,
        cfg.comparators.map_tau_scale,
        &cfg.mcmc,
        rng,
        exec,
    )?;
    let predictive = draws
        .predictive
        .as_ref()
        .ok_or_else(|| Error::Internal("MAP fit returned no predictive draws".into()))?;
    let samples: Vec<f64> = predictive.iter().map(|&t| expit(t)).collect();
    let fit = fit_beta_mixture(
        &thin(samples, cfg.eqps.em_max_samples),
        cfg.eqps.k_max,
        cfg.eqps.criterion,
    )?;
    Ok(MapPrior {
        histories: histories.to_vec(),
        components: fit.components,
        converged: draws.converged(),
        max_rhat: draws.max_rhat(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPosterior {
    pub arm: Arm,
    pub current: BinomialSummary,
    pub prior: RobustBetaMixture,
    pub posterior: RobustBetaMixture,
    /// Prior vague weight.
    pub omega: f64,
    pub prior_ess: Option<f64>,
    pub posterior_mean: f64,
    pub box_p: Option<f64>,
    /// Consistency probability at the chosen weight (EQPS only).
    pub consistency: Option<f64>,
    pub weights: Option<StratumWeights>,
    pub converged: bool,
    pub max_rhat: f64,
}

impl ArmPosterior {
    fn new(
        arm: Arm,
        current: BinomialSummary,
        prior: RobustBetaMixture,
        converged: bool,
        max_rhat: f64,
    ) -> Self {
        let posterior = posterior_update(&prior, current);
        Self {
            arm,
            current,
            omega: prior.omega,
            prior_ess: prior_effective_sample_size(&prior),
            posterior_mean: posterior.mean(),
            prior,
            posterior,
            box_p: None,
            consistency: None,
            weights: None,
            converged,
            max_rhat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAnalysis {
    pub method: Method,
    pub treatment: ArmPosterior,
    pub control: ArmPosterior,
    pub decision: Decision,
    /// Difference of posterior means.
    pub risk_difference: f64,
}

impl TrialAnalysis {
    pub fn converged(&self) -> bool {
        self.treatment.converged && self.control.converged
    }
}

fn shared<T>(cell: &OnceCell<Result<T>>, init: impl FnOnce() -> Result<T>) -> Result<&T> {
    cell.get_or_init(init).as_ref().map_err(Error::duplicate)
}

/// Runs methods on one dataset. Stratification, hierarchical draws and MAP
/// fits are computed once and reused, and every stage draws from its own
/// labelled stream, so a method's result does not depend on which other
/// methods ran.
pub struct Analyzer<'a> {
    subjects: &'a [Subject],
    cfg: &'a AnalysisConfig,
    rng: RngStream,
    exec: Execution,
    strat: OnceCell<Result<Stratification>>,
    draws: [OnceCell<Result<Option<PosteriorDraws>>>; 2],
    map: [OnceCell<Result<MapPrior>>; 2],
}

impl<'a> Analyzer<'a> {
    pub fn new(
        subjects: &'a [Subject],
        cfg: &'a AnalysisConfig,
        rng: &RngStream,
        exec: Execution,
    ) -> Self {
        Self {
            subjects,
            cfg,
            rng: rng.clone(),
            exec,
            strat: OnceCell::new(),
            draws: [OnceCell::new(), OnceCell::new()],
            map: [OnceCell::new(), OnceCell::new()],
        }
    }

    pub fn config(&self) -> &AnalysisConfig {
        self.cfg
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }

    pub fn current(&self, arm: Arm) -> BinomialSummary {
        summarize(self.subjects, |s| {
            s.source == SourceLabel::Current && s.arm == arm
        })
    }

    pub fn stratification(&self) -> Result<&Stratification> {
        shared(&self.strat, || {
            stratify_subjects(self.subjects, self.cfg.n_strata)
        })
    }

    pub fn hierarchical_draws(&self, arm: Arm) -> Result<Option<&PosteriorDraws>> {
        let strat = self.stratification()?;
        shared(&self.draws[arm.index()], || {
            sample_arm(strat, arm, &self.cfg.mcmc, &self.rng, self.exec)
        })
        .map(Option::as_ref)
    }

    pub fn map_prior(&self, arm: Arm) -> Result<&MapPrior> {
        shared(&self.map[arm.index()], || {
            let rng = self.rng.child(label("map")).child(arm.index() as u64);
            fit_map_prior(
                &map_histories(self.subjects, arm),
                self.cfg,
                &rng,
                self.exec,
            )
        })
    }

    /// Stratified composite prior with equivalence or sample-size weights.
    pub fn stratified_prior(&self, arm: Arm, equal_epsilon: bool) -> Result<PriorBuild> {
        let strat = self.stratification()?;
        prior_from_draws(
            strat,
            arm,
            self.hierarchical_draws(arm)?,
            equal_epsilon,
            &self.cfg.eqps,
        )
    }

    fn map_family(
        &self,
        arm: Arm,
        omega: impl FnOnce(&RobustBetaMixture, BinomialSummary) -> (f64, Option<f64>),
    ) -> Result<ArmPosterior> {
        let map = self.map_prior(arm)?;
        let current = self.current(arm);
        let vague = self.cfg.eqps.vague;
        if map.components.is_empty() {
            return Ok(ArmPosterior::new(
                arm,
                current,
                RobustBetaMixture::vague_only(vague),
                true,
                1.0,
            ));
        }
        let base = robustify(&map.components, vague, 0.0)?;
        let (w, box_p) = omega(&base, current);
        let mut out = ArmPosterior::new(
            arm,
            current,
            robustify(&map.components, vague, w)?,
            map.converged,
            map.max_rhat,
        );
        out.box_p = box_p;
        Ok(out)
    }

    pub fn arm(&self, method: Method, arm: Arm) -> Result<ArmPosterior> {
        let cmp = &self.cfg.comparators;
        match method {
            Method::NoBorrow => Ok(ArmPosterior::new(
                arm,
                self.current(arm),
                RobustBetaMixture::vague_only(self.cfg.eqps.vague),
                true,
                1.0,
            )),
            Method::Map => self.map_family(arm, |_, _| (0.0, None)),
            Method::Rmap => self.map_family(arm, |_, _| (cmp.rmap_omega, None)),
            Method::EbRmap => self.map_family(arm, |base, current| {
                let p = box_p_value(base, current);
                (eb_weight(p, cmp), Some(p))
            }),
            Method::PsMap => {
                let build = self.stratified_prior(arm, true)?;
                let prior = if build.empty_borrow() {
                    RobustBetaMixture::vague_only(self.cfg.eqps.vague)
                } else {
                    robustify(&build.components, self.cfg.eqps.vague, 0.0)?
                };
                let mut out = ArmPosterior::new(
                    arm,
                    self.current(arm),
                    prior,
                    build.converged,
                    build.max_rhat,
                );
                out.weights = Some(build.weights);
                Ok(out)
            }
            Method::Eqps => {
                let build = self.stratified_prior(arm, false)?;
                let current = self.current(arm);
                let res = calibrate(
                    &build,
                    current,
                    &self.cfg.eqps,
                    &self.rng.child(arm.index() as u64),
                )?;
                let mut out =
                    ArmPosterior::new(arm, current, res.prior, build.converged, build.max_rhat);
                out.consistency = Some(res.p);
                out.weights = Some(build.weights);
                Ok(out)
            }
        }
    }

    pub fn run(&self, method: Method) -> Result<TrialAnalysis> {
        let treatment = self.arm(method, Arm::Treatment)?;
        let control = self.arm(method, Arm::Control)?;
        let decision = decide_trial(
            &treatment.posterior,
            &control.posterior,
            self.cfg.eqps.success_threshold,
        );
        let risk_difference = treatment.posterior_mean - control.posterior_mean;
        Ok(TrialAnalysis {
            method,
            treatment,
            control,
            decision,
            risk_difference,
        })
    }
}

/// Convenience wrapper for a single method.
pub fn analyze(
    method: Method,
    subjects: &[Subject],
    cfg: &AnalysisConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<TrialAnalysis> {
    cfg.validate()?;
    Analyzer::new(subjects, cfg, rng, exec).run(method)
}
