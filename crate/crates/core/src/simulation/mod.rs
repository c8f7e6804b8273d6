//! Simulated hybrid trials and the operating-characteristic studies built on them.

mod case_study;
mod curve;
mod grid;

pub use case_study::{
    case_study, case_study_aggregate, CaseStudyConfig, CaseStudyReport, CaseStudyRow, DensityRow,
};
pub use curve::{
    required_sample_size, sample_size_ratio, weight_curve, CurveConfig, CurveRow, SampleSizeConfig,
    SampleSizeResult,
};
pub use grid::{
    arm_sweep, eqps_sweep, run_grid, summarize_records, GridConfig, GridOutput, ResultRecord,
    SummaryRow, SweepPoint,
};

use crate::data::{Arm, SourceLabel, Subject};
use crate::error::{Error, Result};
use crate::numerics::special::expit;
use crate::numerics::{rng::label, RngStream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Covariate {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Covariate {
    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Covariate::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            Covariate::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }
}

/// Data-generating model of one simulated hybrid trial.
///
/// Source membership follows a multinomial logit with the current trial as
/// reference; outcomes follow
/// logit P(Y = 1) = β₀ + β₁T + β₂·x + β₃·T·[RWD] + β₄·T·[external].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Current-trial subjects per arm.
    pub n_current: usize,
    /// External-trial subjects per arm.
    pub n_external: usize,
    /// Real-world (treatment only) subjects.
    pub n_rwd: usize,
    pub intercept: f64,
    pub treatment_effect: f64,
    pub covariate_effects: Vec<f64>,
    /// Extra treatment log-odds in the real-world cohort.
    pub rwd_shift: f64,
    /// Extra treatment log-odds in the external trial.
    pub external_shift: f64,
    /// Selection coefficients for real-world membership (empty = all zero).
    pub selection_rwd: Vec<f64>,
    /// Selection coefficients for external-trial membership (empty = all zero).
    pub selection_external: Vec<f64>,
    pub covariates: Vec<Covariate>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScenarioConfig {
    pub fn desk() -> Self {
        Self {
            n_current: 100,
            n_external: 100,
            n_rwd: 100,
            intercept: 0.0,
            treatment_effect: 0.5,
            covariate_effects: vec![0.5, 0.5],
            rwd_shift: 0.0,
            external_shift: 0.0,
            selection_rwd: vec![],
            selection_external: vec![],
            covariates: vec![
                Covariate::Bernoulli { p: 0.5 },
                Covariate::Normal { mean: 0.0, sd: 1.0 },
            ],
        }
    }

    pub fn paper() -> Self {
        Self {
            n_current: 500,
            n_external: 500,
            n_rwd: 500,
            ..Self::desk()
        }
    }

    /// Both selection vectors set to `shift` on every covariate.
    pub fn with_baseline_shift(mut self, shift: f64) -> Self {
        self.selection_rwd = vec![shift; self.covariates.len()];
        self.selection_external = vec![shift; self.covariates.len()];
        self
    }

    pub fn with_heterogeneity(mut self, rwd: f64, external: f64) -> Self {
        self.rwd_shift = rwd;
        self.external_shift = external;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_current == 0 || self.n_external == 0 || self.n_rwd == 0 {
            return Err(Error::config("sample sizes must be positive"));
        }
        let k = self.covariates.len();
        if self.covariate_effects.len() != k {
            return Err(Error::config(format!(
                "{} covariate effects for {k} covariates",
                self.covariate_effects.len()
            )));
        }
        for sel in [&self.selection_rwd, &self.selection_external] {
            if !sel.is_empty() && sel.len() != k {
                return Err(Error::config(format!(
                    "selection vector of length {} for {k} covariates",
                    sel.len()
                )));
            }
        }
        for c in &self.covariates {
            let ok = match *c {
                Covariate::Bernoulli { p } => (0.0..=1.0).contains(&p),
                Covariate::Normal { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
            };
            if !ok {
                return Err(Error::config("covariate law has invalid parameters"));
            }
        }
        let all = [
            self.intercept,
            self.treatment_effect,
            self.rwd_shift,
            self.external_shift,
        ];
        if all
            .iter()
            .chain(&self.covariate_effects)
            .chain(&self.selection_rwd)
            .chain(&self.selection_external)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("model coefficients must be finite"));
        }
        Ok(())
    }

    fn draw_covariates(&self, rng: &mut RngStream) -> Vec<f64> {
        self.covariates.iter().map(|c| c.draw(rng)).collect()
    }

    /// Membership probabilities indexed by [`SourceLabel::index`].
    pub fn membership(&self, x: &[f64]) -> [f64; 3] {
        let lin = |b: &[f64]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        let (er, ee) = (lin(&self.selection_rwd), lin(&self.selection_external));
        let m = er.max(ee).max(0.0);
        let (c, r, e) = ((-m).exp(), (er - m).exp(), (ee - m).exp());
        let z = c + r + e;
        let mut p = [0.0; 3];
        p[SourceLabel::Current.index()] = c / z;
        p[SourceLabel::External.index()] = e / z;
        p[SourceLabel::RealWorld.index()] = r / z;
        p
    }

    pub fn response_probability(&self, source: SourceLabel, arm: Arm, x: &[f64]) -> f64 {
        let t = f64::from(u8::from(arm == Arm::Treatment));
        let mut eta = self.intercept + self.treatment_effect * t;
        eta += self
            .covariate_effects
            .iter()
            .zip(x)
            .map(|(b, x)| b * x)
            .sum::<f64>();
        eta += match source {
            SourceLabel::RealWorld => self.rwd_shift * t,
            SourceLabel::External => self.external_shift * t,
            SourceLabel::Current => 0.0,
        };
        expit(eta)
    }

    fn quotas(&self) -> [usize; 3] {
        let mut q = [0; 3];
        q[SourceLabel::Current.index()] = 2 * self.n_current;
        q[SourceLabel::External.index()] = 2 * self.n_external;
        q[SourceLabel::RealWorld.index()] = self.n_rwd;
        q
    }
}

/// Draws one dataset. Covariates come from the population law and source
/// membership from the selection model; a subject whose drawn source is
/// already full is discarded, so each source's covariates follow the exact
/// conditional law given membership. The first half of each trial source is
/// treated, the second half control; all real-world subjects are treated.
pub fn generate_datasets(cfg: &ScenarioConfig, rng: &mut RngStream) -> Result<Vec<Subject>> {
    cfg.validate()?;
    let quotas = cfg.quotas();
    let total: usize = quotas.iter().sum();
    let max_draws = 1_000 * total;
    let mut filled = [0usize; 3];
    let mut out = Vec::with_capacity(total);
    let mut draws = 0;
    while out.len() < total {
        draws += 1;
        if draws > max_draws {
            return Err(Error::config(
                "selection model leaves a source almost empty; quotas cannot be filled",
            ));
        }
        let x = cfg.draw_covariates(rng);
        let p = cfg.membership(&x);
        let u: f64 = rng.random();
        let idx = if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        };
        if filled[idx] == quotas[idx] {
            continue;
        }
        let source = SourceLabel::ALL[idx];
        let arm = match source {
            SourceLabel::RealWorld => Arm::Treatment,
            _ if filled[idx] < quotas[idx] / 2 => Arm::Treatment,
            _ => Arm::Control,
        };
        filled[idx] += 1;
        let y = rng.random::<f64>() < cfg.response_probability(source, arm, &x);
        out.push(Subject::new(source, arm, x, y)?);
    }
    Ok(out)
}

/// Risk difference in the current-trial population, integrated over the
/// covariate law given current membership by importance-weighted draws.
pub fn true_risk_difference(cfg: &ScenarioConfig, draws: usize) -> Result<f64> {
    cfg.validate()?;
    let mut rng = RngStream::new(label("true-effect"), 0);
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..draws {
        let x = cfg.draw_covariates(&mut rng);
        let w = cfg.membership(&x)[SourceLabel::Current.index()];
        let d = cfg.response_probability(SourceLabel::Current, Arm::Treatment, &x)
            - cfg.response_probability(SourceLabel::Current, Arm::Control, &x);
        num += w * d;
        den += w;
    }
    Ok(num / den)
}

pub const TRUE_EFFECT_DRAWS: usize = 1_000_000;
