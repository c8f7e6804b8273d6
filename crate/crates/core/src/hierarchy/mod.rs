//! Binomial-logit random-effects models sampled by adaptive Metropolis within Gibbs.
//!
//! Every group g has log-odds θ_g ~ N(μ, τ_t²) where t indexes the group's
//! heterogeneity parameter; τ_t ~ HalfNormal(k_t) is sampled on the log scale
//! and μ ~ N(0, σ_μ²), flat when σ_μ is infinite. The stratified model gives
//! each source its own τ; the unstratified predictive model shares one.
//!
//! Besides the component-wise random walks, two joint moves keep the sampler
//! mixing when τ is tiny or huge: a common shift of μ and all θ, and a
//! rescaling of τ_t together with the residuals θ_g − μ of its groups.

pub mod diagnostics;

use crate::data::{Arm, BinomialSummary, SourceLabel, StratifiedData};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::special::softplus;
use crate::numerics::RngStream;
use crate::propensity::OverlapScales;
use diagnostics::{effective_sample_size, split_rhat};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Standard deviation of the vague normal prior on μ.
pub const VAGUE_MU_SD: f64 = 10.0;
/// Split R-hat above this marks a diagnostic failure.
pub const RHAT_LIMIT: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_accept: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl McmcConfig {
    pub fn desk() -> Self {
        Self {
            chains: 4,
            iterations: 5_000,
            burn_in: 1_000,
            thin: 1,
            target_accept: 0.30,
        }
    }

    pub fn paper() -> Self {
        Self {
            chains: 5,
            iterations: 41_000,
            burn_in: 1_000,
            thin: 1,
            target_accept: 0.30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::config("MCMC needs at least 2 chains"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config("burn-in must be shorter than the chain"));
        }
        if self.thin == 0 {
            return Err(Error::config("thinning interval must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub data: BinomialSummary,
    /// Index into [`GroupModel::tau_scales`].
    pub tau: usize,
}

/// One random-effects model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub groups: Vec<Group>,
    pub tau_scales: Vec<f64>,
    pub mu_sd: f64,
    /// Also draw θ* ~ N(μ, τ₀²) for a new exchangeable group.
    pub predictive: bool,
}

impl GroupModel {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::validation(
                "hierarchical model needs at least one group",
            ));
        }
        if let Some(g) = self
            .groups
            .iter()
            .find(|g| g.data.n == 0 || g.data.y > g.data.n)
        {
            return Err(Error::validation(format!(
                "group with y = {}, n = {} is not usable",
                g.data.y, g.data.n
            )));
        }
        if self.groups.iter().any(|g| g.tau >= self.tau_scales.len()) {
            return Err(Error::validation(
                "group refers to a missing heterogeneity parameter",
            ));
        }
        if self.tau_scales.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::validation(
                "half-normal scales must be positive and finite",
            ));
        }
        if !(self.mu_sd > 0.0) {
            return Err(Error::validation("prior sd of the mean must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

/// Post-burn-in draws pooled chain after chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDraws {
    pub chains: usize,
    pub per_chain: usize,
    pub mu: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub predictive: Option<Vec<f64>>,
    pub diagnostics: Vec<ParamDiagnostic>,
}

impl ModelDraws {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn max_rhat(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.rhat).fold(1.0, f64::max)
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.rhat <= RHAT_LIMIT)
    }

    fn chain_slices<'a>(&self, v: &'a [f64]) -> Vec<&'a [f64]> {
        v.chunks(self.per_chain).collect()
    }
}

struct Step {
    log_scale: f64,
}

impl Step {
    fn new(scale: f64) -> Self {
        Self {
            log_scale: scale.max(1e-300).ln(),
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn adapt(&mut self, accepted: bool, target: f64, iter: usize) {
        let gain = ((iter + 1) as f64).powf(-0.6);
        self.log_scale += gain * (accepted as u8 as f64 - target);
    }
}

fn log_lik(g: &BinomialSummary, theta: f64) -> f64 {
    g.y as f64 * theta - g.n as f64 * softplus(theta)
}

/// Half-normal(k) prior on τ = e^u including the Jacobian.
fn log_tau_prior(u: f64, k: f64) -> f64 {
    let tau = u.exp();
    -tau * tau / (2.0 * k * k) + u
}

fn gauss(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

fn accept(rng: &mut RngStream, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

struct ChainOut {
    mu: Vec<f64>,
    tau: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    predictive: Vec<f64>,
}

fn run_chain(model: &GroupModel, cfg: &McmcConfig, rng: &mut RngStream) -> ChainOut {
    let g_count = model.groups.len();
    let t_count = model.tau_scales.len();
    let members: Vec<Vec<usize>> = (0..t_count)
        .map(|t| (0..g_count).filter(|&g| model.groups[g].tau == t).collect())
        .collect();
    let prec_mu = if model.mu_sd.is_finite() {
        1.0 / (model.mu_sd * model.mu_sd)
    } else {
        0.0
    };
    let log_prior_mu = |mu: f64| -0.5 * mu * mu * prec_mu;

    let emp: Vec<f64> = model
        .groups
        .iter()
        .map(|g| g.data.empirical_logit())
        .collect();
    let mut mu = emp.iter().sum::<f64>() / g_count as f64 + 0.3 * gauss(rng);
    let mut u: Vec<f64> = model
        .tau_scales
        .iter()
        .map(|k| k.min(1.0).ln() + 0.3 * gauss(rng))
        .collect();
    let mut theta: Vec<f64> = (0..g_count)
        .map(|g| {
            let tau = u[model.groups[g].tau].exp();
            mu + (emp[g] - mu).clamp(-2.0 * tau, 2.0 * tau)
        })
        .collect();

    let mut theta_step: Vec<Step> = model
        .groups
        .iter()
        .map(|g| {
            let p = (g.data.y as f64 + 0.5) / (g.data.n as f64 + 1.0);
            let sd = 1.0 / (g.data.n as f64 * p * (1.0 - p)).sqrt();
            Step::new(2.4 * sd.min(model.tau_scales[g.tau]))
        })
        .collect();
    let mut tau_step: Vec<Step> = (0..t_count).map(|_| Step::new(0.5)).collect();
    let mut funnel_step: Vec<Step> = (0..t_count).map(|_| Step::new(0.3)).collect();
    let mut shift_step = Step::new(0.1);
    let target = cfg.target_accept;

    let keep = cfg.draws_per_chain();
    let mut out = ChainOut {
        mu: Vec::with_capacity(keep),
        tau: vec![Vec::with_capacity(keep); t_count],
        theta: vec![Vec::with_capacity(keep); g_count],
        predictive: Vec::with_capacity(if model.predictive { keep } else { 0 }),
    };

    for it in 0..cfg.iterations {
        let adapting = it < cfg.burn_in;

        // θ_g | μ, τ
        for g in 0..g_count {
            let data = &model.groups[g].data;
            let tau = u[model.groups[g].tau].exp();
            let cur = theta[g];
            let prop = cur + theta_step[g].scale() * gauss(rng);
            let lr = log_lik(data, prop)
                - log_lik(data, cur)
                - ((prop - mu).powi(2) - (cur - mu).powi(2)) / (2.0 * tau * tau);
            let ok = accept(rng, lr);
            if ok {
                theta[g] = prop;
            }
            if adapting {
                theta_step[g].adapt(ok, target, it);
            }
        }

        // μ | θ, τ is normal
        let mut prec = prec_mu;
        let mut weighted = 0.0;
        for g in 0..g_count {
            let w = (-2.0 * u[model.groups[g].tau]).exp();
            prec += w;
            weighted += w * theta[g];
        }
        mu = weighted / prec + gauss(rng) / prec.sqrt();

        // log τ_t | θ, μ
        for t in 0..t_count {
            let k = model.tau_scales[t];
            let ss: f64 = members[t].iter().map(|&g| (theta[g] - mu).powi(2)).sum();
            let m = members[t].len() as f64;
            let log_post = |u: f64| log_tau_prior(u, k) - m * u - ss * (-2.0 * u).exp() / 2.0;
            let prop = u[t] + tau_step[t].scale() * gauss(rng);
            let ok = accept(rng, log_post(prop) - log_post(u[t]));
            if ok {
                u[t] = prop;
            }
            if adapting {
                tau_step[t].adapt(ok, target, it);
            }
        }

        // Rescale τ_t with its groups' residuals.
        for t in 0..t_count {
            if members[t].is_empty() {
                continue;
            }
            let c = funnel_step[t].scale() * gauss(rng);
            let factor = c.exp();
            let mut lr = log_tau_prior(u[t] + c, model.tau_scales[t])
                - log_tau_prior(u[t], model.tau_scales[t]);
            let proposed: Vec<f64> = members[t]
                .iter()
                .map(|&g| mu + factor * (theta[g] - mu))
                .collect();
            for (&g, &p) in members[t].iter().zip(&proposed) {
                lr += log_lik(&model.groups[g].data, p) - log_lik(&model.groups[g].data, theta[g]);
            }
            let ok = accept(rng, lr);
            if ok {
                u[t] += c;
                for (&g, p) in members[t].iter().zip(proposed) {
                    theta[g] = p;
                }
            }
            if adapting {
                funnel_step[t].adapt(ok, target, it);
            }
        }

        // Common shift of μ and every θ.
        {
            let c = shift_step.scale() * gauss(rng);
            let mut lr = log_prior_mu(mu + c) - log_prior_mu(mu);
            for (g, grp) in model.groups.iter().enumerate() {
                lr += log_lik(&grp.data, theta[g] + c) - log_lik(&grp.data, theta[g]);
            }
            let ok = accept(rng, lr);
            if ok {
                mu += c;
                theta.iter_mut().for_each(|th| *th += c);
            }
            if adapting {
                shift_step.adapt(ok, target, it);
            }
        }

        if !adapting && (it - cfg.burn_in) % cfg.thin == 0 && out.mu.len() < keep {
            out.mu.push(mu);
            for t in 0..t_count {
                out.tau[t].push(u[t].exp());
            }
            for g in 0..g_count {
                out.theta[g].push(theta[g]);
            }
            if model.predictive {
                out.predictive.push(mu + u[0].exp() * gauss(rng));
            }
        }
    }
    out
}

fn merge(model: &GroupModel, chains: Vec<ChainOut>) -> Result<ModelDraws> {
    let per_chain = chains[0].mu.len();
    let n_chains = chains.len();
    let cat = |f: &dyn Fn(&ChainOut) -> &Vec<f64>| {
        chains
            .iter()
            .flat_map(|c| f(c).iter().copied())
            .collect::<Vec<f64>>()
    };
    let mu = cat(&|c| &c.mu);
    let tau: Vec<Vec<f64>> = (0..model.tau_scales.len())
        .map(|t| cat(&|c| &c.tau[t]))
        .collect();
    let theta: Vec<Vec<f64>> = (0..model.groups.len())
        .map(|g| cat(&|c| &c.theta[g]))
        .collect();
    let predictive = model.predictive.then(|| cat(&|c| &c.predictive));

    let all = mu
        .iter()
        .chain(tau.iter().flatten())
        .chain(theta.iter().flatten())
        .chain(predictive.iter().flatten());
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("MCMC produced non-finite draws".into()));
    }
    let mut draws = ModelDraws {
        chains: n_chains,
        per_chain,
        mu,
        tau,
        theta,
        predictive,
        diagnostics: vec![],
    };
    let mut diag = Vec::new();
    let mut push = |name: String, v: &[f64]| {
        let slices = draws.chain_slices(v);
        diag.push(ParamDiagnostic {
            name,
            rhat: split_rhat(&slices),
            ess: effective_sample_size(&slices),
        });
    };
    push("mu".into(), &draws.mu);
    for (t, v) in draws.tau.iter().enumerate() {
        push(format!("tau[{t}]"), v);
    }
    for (g, v) in draws.theta.iter().enumerate() {
        push(format!("theta[{g}]"), v);
    }
    draws.diagnostics = diag;
    if !draws.converged() {
        log::warn!("split R-hat {:.3} exceeds {RHAT_LIMIT}", draws.max_rhat());
    }
    Ok(draws)
}

/// Samples one model; chain `c` uses `rng.child(c)`.
pub fn sample_model(
    model: &GroupModel,
    cfg: &McmcConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<ModelDraws> {
    cfg.validate()?;
    model.validate()?;
    let chains = exec.map_indexed(cfg.chains, |c| {
        run_chain(model, cfg, &mut rng.child(c as u64))
    });
    merge(model, chains)
}

/// Standard MAP predictive: histories share one τ ~ HalfNormal(scale).
pub fn sample_unstratified_map(
    histories: &[BinomialSummary],
    tau_scale: f64,
    cfg: &McmcConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<ModelDraws> {
    let model = GroupModel {
        groups: histories
            .iter()
            .map(|&data| Group { data, tau: 0 })
            .collect(),
        tau_scales: vec![tau_scale],
        mu_sd: VAGUE_MU_SD,
        predictive: true,
    };
    sample_model(&model, cfg, rng, exec)
}

/// Borrowed sources entering one stratum's model, each with its own τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub sources: Vec<SourceLabel>,
    pub data: Vec<BinomialSummary>,
    pub scales: Vec<f64>,
}

impl StratumSpec {
    pub fn model(&self, mu_sd: f64) -> GroupModel {
        GroupModel {
            groups: self
                .data
                .iter()
                .enumerate()
                .map(|(i, &data)| Group { data, tau: i })
                .collect(),
            tau_scales: self.scales.clone(),
            mu_sd,
            predictive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalSpec {
    /// `None` for a stratum with nothing to borrow.
    pub strata: Vec<Option<StratumSpec>>,
    pub mu_sd: f64,
}

/// Sources borrowed for an arm: both for treatment, External only for control.
pub fn borrowed_sources(arm: Arm) -> &'static [SourceLabel] {
    match arm {
        Arm::Treatment => &[SourceLabel::External, SourceLabel::RealWorld],
        Arm::Control => &[SourceLabel::External],
    }
}

impl HierarchicalSpec {
    /// Arm-specific spec. A source is left out of a stratum when it has no
    /// subjects there or its scale is the zero-overlap sentinel.
    pub fn from_strata(strata: &StratifiedData, scales: &OverlapScales, arm: Arm) -> Self {
        let specs = (0..strata.n_strata())
            .map(|s| {
                let mut spec = StratumSpec {
                    sources: vec![],
                    data: vec![],
                    scales: vec![],
                };
                for &src in borrowed_sources(arm) {
                    let data = strata.summary(s, src, arm);
                    let k = scales.for_source(src).scale[s];
                    if data.n > 0 && k.is_finite() {
                        spec.sources.push(src);
                        spec.data.push(data);
                        spec.scales.push(k);
                    }
                }
                (!spec.sources.is_empty()).then_some(spec)
            })
            .collect();
        Self {
            strata: specs,
            mu_sd: VAGUE_MU_SD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDraws {
    pub sources: Vec<SourceLabel>,
    pub draws: ModelDraws,
}

impl StratumDraws {
    pub fn theta(&self, source: SourceLabel) -> Option<&[f64]> {
        self.sources
            .iter()
            .position(|s| *s == source)
            .map(|i| self.draws.theta[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub strata: Vec<Option<StratumDraws>>,
}

impl PosteriorDraws {
    pub fn converged(&self) -> bool {
        self.strata.iter().flatten().all(|s| s.draws.converged())
    }

    pub fn max_rhat(&self) -> f64 {
        self.strata
            .iter()
            .flatten()
            .map(|s| s.draws.max_rhat())
            .fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.strata
            .iter()
            .flatten()
            .flat_map(|s| s.draws.diagnostics.iter().map(|d| d.ess))
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV dump: chain, iteration, parameter, stratum, value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["chain", "iteration", "parameter", "stratum", "value"])?;
        for (s, sd) in self.strata.iter().enumerate() {
            let Some(sd) = sd else { continue };
            let d = &sd.draws;
            let mut params: Vec<(String, &Vec<f64>)> = vec![("mu".into(), &d.mu)];
            for (i, src) in sd.sources.iter().enumerate() {
                params.push((format!("tau_{src}"), &d.tau[i]));
                params.push((format!("theta_{src}"), &d.theta[i]));
            }
            for (name, values) in params {
                for (i, v) in values.iter().enumerate() {
                    let (chain, iter) = (i / d.per_chain, i % d.per_chain);
                    w.write_record([
                        (chain + 1).to_string(),
                        (iter + 1).to_string(),
                        name.clone(),
                        (s + 1).to_string(),
                        format!("{v:?}"),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples every stratum independently. Chains of all strata run as one parallel batch.
pub fn sample_hierarchy(
    spec: &HierarchicalSpec,
    cfg: &McmcConfig,
    rng: &RngStream,
    exec: Execution,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let models: Vec<Option<GroupModel>> = spec
        .strata
        .iter()
        .map(|s| s.as_ref().map(|s| s.model(spec.mu_sd)))
        .collect();
    for m in models.iter().flatten() {
        m.validate()?;
    }
    let jobs: Vec<(usize, usize)> = models
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_some())
        .flat_map(|(s, _)| (0..cfg.chains).map(move |c| (s, c)))
        .collect();
    let outs = exec.map_slice(&jobs, |&(s, c)| {
        let stream = rng.child(s as u64).child(c as u64);
        run_chain(
            models[s].as_ref().expect("job for present stratum"),
            cfg,
            &mut stream.clone(),
        )
    });
    let mut outs = outs.into_iter();
    let mut strata = Vec::with_capacity(models.len());
    for (s, m) in models.iter().enumerate() {
        match m {
            None => strata.push(None),
            Some(m) => {
                let chains: Vec<ChainOut> = outs.by_ref().take(cfg.chains).collect();
                let draws = merge(m, chains)?;
                let sources = spec.strata[s].as_ref().expect("present").sources.clone();
                strata.push(Some(StratumDraws { sources, draws }));
            }
        }
    }
    Ok(PosteriorDraws { strata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::integrate;

    fn bs(y: u64, n: u64) -> BinomialSummary {
        BinomialSummary { y, n }
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Posterior mean of θ under a flat prior, p(θ) ∝ e^{yθ}(1+e^θ)^{−n}.
    fn flat_posterior_mean(d: BinomialSummary) -> f64 {
        let centre = d.empirical_logit();
        let dens = |t: f64| (log_lik(&d, t) - log_lik(&d, centre)).exp();
        let z = integrate(dens, centre - 8.0, centre + 8.0, 1e-12);
        integrate(|t| t * dens(t), centre - 8.0, centre + 8.0, 1e-12) / z
    }

    fn two_source(e: BinomialSummary, r: BinomialSummary, k: f64) -> GroupModel {
        GroupModel {
            groups: vec![Group { data: e, tau: 0 }, Group { data: r, tau: 1 }],
            tau_scales: vec![k, k],
            mu_sd: VAGUE_MU_SD,
            predictive: false,
        }
    }

    #[test]
    fn tiny_scale_pools_completely() {
        let model = two_source(bs(160, 200), bs(40, 200), 1e-6);
        let d = sample_model(
            &model,
            &McmcConfig::desk(),
            &RngStream::new(1, 0),
            Execution::Sequential,
        )
        .unwrap();
        let diff: Vec<f64> = d.theta[0]
            .iter()
            .zip(&d.theta[1])
            .map(|(a, b)| a - b)
            .collect();
        assert!(mean(&diff).abs() < 0.05);
        assert!(d.converged(), "{:?}", d.diagnostics);
    }

    #[test]
    fn huge_scale_leaves_groups_independent() {
        let (e, r) = (bs(160, 200), bs(40, 200));
        let model = two_source(e, r, 1e3);
        let d = sample_model(
            &model,
            &McmcConfig::desk(),
            &RngStream::new(2, 0),
            Execution::Sequential,
        )
        .unwrap();
        assert!((mean(&d.theta[0]) - flat_posterior_mean(e)).abs() < 0.1);
        assert!((mean(&d.theta[1]) - flat_posterior_mean(r)).abs() < 0.1);
    }

    #[test]
    fn single_group_flat_mean_prior_matches_quadrature() {
        let data = bs(27, 40);
        let model = GroupModel {
            groups: vec![Group { data, tau: 0 }],
            tau_scales: vec![1.0],
            mu_sd: f64::INFINITY,
            predictive: false,
        };
        let d = sample_model(
            &model,
            &McmcConfig::desk(),
            &RngStream::new(3, 0),
            Execution::Sequential,
        )
        .unwrap();
        assert!((mean(&d.theta[0]) - flat_posterior_mean(data)).abs() < 0.02);
        assert!(d.converged());
    }

    #[test]
    fn boundary_counts_are_fine() {
        let model = two_source(bs(0, 30), bs(30, 30), 1.0);
        let d = sample_model(
            &model,
            &McmcConfig::desk(),
            &RngStream::new(4, 0),
            Execution::Sequential,
        )
        .unwrap();
        assert!(d.theta.iter().flatten().all(|v| v.is_finite()));
        assert!(mean(&d.theta[0]) < mean(&d.theta[1]));
    }

    #[test]
    fn map_predictive_degenerate_pooling() {
        let d = sample_unstratified_map(
            &[bs(30_000, 100_000)],
            1e-6,
            &McmcConfig::desk(),
            &RngStream::new(5, 0),
            Execution::Sequential,
        )
        .unwrap();
        let target = (0.3f64 / 0.7).ln();
        assert!((mean(d.predictive.as_ref().unwrap()) - target).abs() < 0.01);
    }

    #[test]
    fn map_predictive_symmetric_histories() {
        let d = sample_unstratified_map(
            &[bs(40, 100), bs(40, 100)],
            0.5,
            &McmcConfig::desk(),
            &RngStream::new(6, 0),
            Execution::Sequential,
        )
        .unwrap();
        let target = (0.4f64 / 0.6).ln();
        assert!((mean(d.predictive.as_ref().unwrap()) - target).abs() < 0.05);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let model = two_source(bs(60, 100), bs(70, 100), 0.5);
        let cfg = McmcConfig {
            iterations: 600,
            burn_in: 100,
            ..McmcConfig::desk()
        };
        let rng = RngStream::new(7, 0);
        let a = sample_model(&model, &cfg, &rng, Execution::Parallel).unwrap();
        let b = sample_model(&model, &cfg, &rng, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(McmcConfig {
            chains: 1,
            ..McmcConfig::desk()
        }
        .validate()
        .is_err());
        assert!(McmcConfig {
            burn_in: 5_000,
            ..McmcConfig::desk()
        }
        .validate()
        .is_err());
        assert_eq!(McmcConfig::paper().draws_per_chain(), 40_000);
    }
}
