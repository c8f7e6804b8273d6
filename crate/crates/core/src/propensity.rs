//! Propensity of belonging to the current trial, trimming, quantile strata
//! and the overlap-derived half-normal scales.

use crate::data::{
    covariate_dimension, BinomialSummary, SourceLabel, StratifiedData, StratumCell, Subject,
};
use crate::error::{Error, Result};
use crate::numerics::kde::{
    kde_unit_interval, quantile_sorted, trapezoid_integral, DensityEstimate, MIN_KDE_SAMPLES,
};
use crate::numerics::linalg::cholesky_solve;
use crate::numerics::special::log_sum_exp;
use serde::{Deserialize, Serialize};

/// Non-reference classes in coefficient-row order.
pub const MODELLED: [SourceLabel; 2] = [SourceLabel::RealWorld, SourceLabel::External];

const RIDGE: f64 = 1e-6;
/// Standardized-scale coefficient size beyond which the fit is treated as separated.
const SEPARATION_BOUND: f64 = 25.0;

/// Multinomial-logit fit with Current as reference class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Rows for RealWorld and External (intercept first); `None` when the class is absent.
    pub coefficients: [Option<Vec<f64>>; 2],
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Ridge penalty was needed (separation or near-singular information).
    pub regularized: bool,
}

impl PropensityModel {
    pub fn dimension(&self) -> usize {
        self.coefficients
            .iter()
            .flatten()
            .next()
            .map_or(0, |c| c.len() - 1)
    }

    /// Class probabilities indexed by `SourceLabel::index`.
    pub fn class_probabilities(&self, x: &[f64]) -> Result<[f64; 3]> {
        if x.len() != self.dimension() {
            return Err(Error::validation(format!(
                "covariate dimension {} does not match model dimension {}",
                x.len(),
                self.dimension()
            )));
        }
        let eta = |row: &Option<Vec<f64>>| {
            row.as_ref().map_or(f64::NEG_INFINITY, |b| {
                b[0] + b[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            })
        };
        let (e_real, e_ext) = (eta(&self.coefficients[0]), eta(&self.coefficients[1]));
        let lse = log_sum_exp(&[0.0, e_real, e_ext]);
        let mut out = [0.0; 3];
        out[SourceLabel::Current.index()] = (-lse).exp();
        out[SourceLabel::RealWorld.index()] = (e_real - lse).exp();
        out[SourceLabel::External.index()] = (e_ext - lse).exp();
        Ok(out)
    }

    /// e(X): probability of the Current class.
    pub fn score_one(&self, x: &[f64]) -> Result<f64> {
        Ok(self.class_probabilities(x)?[SourceLabel::Current.index()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tolerance: 1e-8,
        }
    }
}

pub fn fit_propensity(subjects: &[Subject]) -> Result<PropensityModel> {
    fit_propensity_with(subjects, FitOptions::default())
}

/// Maximum-likelihood fit by damped Newton iterations on standardized covariates.
pub fn fit_propensity_with(subjects: &[Subject], opts: FitOptions) -> Result<PropensityModel> {
    let k = covariate_dimension(subjects)?;
    let present: Vec<bool> = MODELLED
        .iter()
        .map(|c| subjects.iter().any(|s| s.source == *c))
        .collect();
    if !subjects.iter().any(|s| s.source == SourceLabel::Current) {
        return Err(Error::validation(
            "propensity model needs current-trial subjects",
        ));
    }
    let classes: Vec<SourceLabel> = MODELLED
        .iter()
        .zip(&present)
        .filter(|(_, p)| **p)
        .map(|(c, _)| *c)
        .collect();
    if classes.is_empty() {
        return Err(Error::validation(
            "propensity model needs at least two source classes",
        ));
    }

    // Standardize so the Newton system is well conditioned; coefficients are mapped back at the end.
    let n = subjects.len() as f64;
    let mut centre = vec![0.0; k];
    let mut spread = vec![1.0; k];
    for j in 0..k {
        let mean = subjects.iter().map(|s| s.covariates[j]).sum::<f64>() / n;
        let var = subjects
            .iter()
            .map(|s| (s.covariates[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        if !(var > 0.0) {
            return Err(Error::Estimation(format!(
                "covariate {} is constant; design matrix is rank deficient",
                j + 1
            )));
        }
        centre[j] = mean;
        spread[j] = var.sqrt();
    }
    let p = k + 1;
    let design: Vec<f64> = subjects
        .iter()
        .flat_map(|s| {
            std::iter::once(1.0)
                .chain((0..k).map(|j| (s.covariates[j] - centre[j]) / spread[j]))
                .collect::<Vec<_>>()
        })
        .collect();
    let labels: Vec<Option<usize>> = subjects
        .iter()
        .map(|s| classes.iter().position(|c| *c == s.source))
        .collect();
    let problem = Newton {
        design: &design,
        labels: &labels,
        p,
        m: classes.len(),
    };

    let mut fit = problem.solve(0.0, opts);
    let separated = match &fit {
        Ok(f) => {
            !f.converged
                || f.beta.iter().any(|b| b.abs() > SEPARATION_BOUND)
                || problem.saturated(&f.beta)
        }
        Err(_) => true,
    };
    let mut regularized = false;
    if separated {
        log::warn!("propensity fit shows separation or a singular information matrix; refitting with ridge {RIDGE}");
        fit = problem.solve(RIDGE, opts);
        regularized = true;
    }
    let fit = fit?;
    if !fit.converged {
        return Err(Error::Convergence(format!(
            "propensity fit did not converge in {} iterations (gradient norm {:.3e})",
            opts.max_iter, fit.gradient_norm
        )));
    }

    let mut coefficients: [Option<Vec<f64>>; 2] = [None, None];
    for (ci, class) in classes.iter().enumerate() {
        let b = &fit.beta[ci * p..(ci + 1) * p];
        let mut row = vec![0.0; p];
        row[0] = b[0]
            - (0..k)
                .map(|j| b[j + 1] * centre[j] / spread[j])
                .sum::<f64>();
        for j in 0..k {
            row[j + 1] = b[j + 1] / spread[j];
        }
        let slot = MODELLED
            .iter()
            .position(|c| c == class)
            .expect("modelled class");
        coefficients[slot] = Some(row);
    }
    Ok(PropensityModel {
        coefficients,
        iterations: fit.iterations,
        gradient_norm: fit.gradient_norm,
        regularized,
    })
}

struct Newton<'a> {
    design: &'a [f64],
    labels: &'a [Option<usize>],
    p: usize,
    m: usize,
}

struct NewtonFit {
    beta: Vec<f64>,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

impl Newton<'_> {
    fn rows(&self) -> impl Iterator<Item = (&[f64], Option<usize>)> {
        self.design.chunks(self.p).zip(self.labels.iter().copied())
    }

    fn probs(&self, beta: &[f64], x: &[f64], out: &mut [f64]) -> f64 {
        let mut eta = vec![0.0; self.m + 1];
        for c in 0..self.m {
            eta[c + 1] = beta[c * self.p..(c + 1) * self.p]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum();
        }
        let lse = log_sum_exp(&eta);
        for c in 0..self.m {
            out[c] = (eta[c + 1] - lse).exp();
        }
        lse
    }

    /// Some fitted probability is numerically 0 or 1, the usual sign of separation.
    fn saturated(&self, beta: &[f64]) -> bool {
        let mut pr = vec![0.0; self.m];
        self.rows().any(|(x, _)| {
            self.probs(beta, x, &mut pr);
            let current = 1.0 - pr.iter().sum::<f64>();
            current < 1e-10
                || current > 1.0 - 1e-10
                || pr.iter().any(|q| *q < 1e-10 || *q > 1.0 - 1e-10)
        })
    }

    fn objective(&self, beta: &[f64], ridge: f64) -> f64 {
        let mut pr = vec![0.0; self.m];
        let mut ll = 0.0;
        for (x, label) in self.rows() {
            let lse = self.probs(beta, x, &mut pr);
            let eta_y = label.map_or(0.0, |c| {
                beta[c * self.p..(c + 1) * self.p]
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum()
            });
            ll += eta_y - lse;
        }
        ll - 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>()
    }

    fn gradient_hessian(&self, beta: &[f64], ridge: f64) -> (Vec<f64>, Vec<f64>) {
        let d = self.m * self.p;
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d]; // negative Hessian
        let mut pr = vec![0.0; self.m];
        for (x, label) in self.rows() {
            self.probs(beta, x, &mut pr);
            for c in 0..self.m {
                let resid = (label == Some(c)) as u8 as f64 - pr[c];
                for a in 0..self.p {
                    g[c * self.p + a] += resid * x[a];
                }
                for c2 in 0..self.m {
                    let w = pr[c] * ((c == c2) as u8 as f64 - pr[c2]);
                    for a in 0..self.p {
                        for b in 0..self.p {
                            h[(c * self.p + a) * d + c2 * self.p + b] += w * x[a] * x[b];
                        }
                    }
                }
            }
        }
        for i in 0..d {
            g[i] -= ridge * beta[i];
            h[i * d + i] += ridge;
        }
        (g, h)
    }

    fn solve(&self, ridge: f64, opts: FitOptions) -> Result<NewtonFit> {
        let d = self.m * self.p;
        let mut beta = vec![0.0; d];
        let mut obj = self.objective(&beta, ridge);
        let mut gnorm = f64::INFINITY;
        for it in 0..opts.max_iter {
            let (g, h) = self.gradient_hessian(&beta, ridge);
            gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < opts.tolerance {
                return Ok(NewtonFit {
                    beta,
                    iterations: it,
                    gradient_norm: gnorm,
                    converged: true,
                });
            }
            let step = cholesky_solve(&h, &g).ok_or_else(|| {
                Error::Estimation("propensity information matrix is singular".into())
            })?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                let cand_obj = self.objective(&cand, ridge);
                if cand_obj >= obj - 1e-12 * obj.abs().max(1.0) {
                    beta = cand;
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // Objective is flat to rounding; accept the point if the gradient is small in relative terms.
                let converged = gnorm < opts.tolerance * 1e3;
                return Ok(NewtonFit {
                    beta,
                    iterations: it,
                    gradient_norm: gnorm,
                    converged,
                });
            }
        }
        Ok(NewtonFit {
            beta,
            iterations: opts.max_iter,
            gradient_norm: gnorm,
            converged: false,
        })
    }
}

/// e(X) for every subject.
pub fn score(model: &PropensityModel, subjects: &[Subject]) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| model.score_one(&s.covariates))
        .collect()
}

/// Odds weights e(X)/Pr(own source | X) re-weighting borrowed subjects to the
/// current-trial covariate law. Current subjects get weight 1. Diagnostic only.
pub fn inverse_probability_weights(
    model: &PropensityModel,
    subjects: &[Subject],
) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| {
            let pr = model.class_probabilities(&s.covariates)?;
            Ok(if s.source == SourceLabel::Current {
                1.0
            } else {
                pr[0] / pr[s.source.index()]
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    pub retained: Vec<bool>,
    /// [min, max] of the current-trial scores.
    pub range: (f64, f64),
    pub trimmed: [u64; 3],
    /// Every external and real-world subject was trimmed.
    pub empty_borrow: bool,
}

/// Drops borrowed subjects whose score lies outside the current-trial range.
pub fn trim(scores: &[f64], sources: &[SourceLabel]) -> Result<TrimReport> {
    if scores.len() != sources.len() {
        return Err(Error::validation("scores and sources differ in length"));
    }
    let current = scores
        .iter()
        .zip(sources)
        .filter(|(_, s)| **s == SourceLabel::Current)
        .map(|(e, _)| *e);
    let (lo, hi) = current.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e), hi.max(e))
    });
    if lo > hi {
        return Err(Error::validation(
            "trimming needs at least one current-trial score",
        ));
    }
    let mut trimmed = [0u64; 3];
    let retained: Vec<bool> = scores
        .iter()
        .zip(sources)
        .map(|(&e, &src)| {
            let keep = src == SourceLabel::Current || (lo..=hi).contains(&e);
            if !keep {
                trimmed[src.index()] += 1;
            }
            keep
        })
        .collect();
    let empty_borrow = !retained
        .iter()
        .zip(sources)
        .any(|(keep, s)| *keep && *s != SourceLabel::Current);
    if empty_borrow {
        log::warn!("all external and real-world subjects fall outside the current score range");
    }
    Ok(TrimReport {
        retained,
        range: (lo, hi),
        trimmed,
        empty_borrow,
    })
}

/// Equal-probability quantile cut points of the current-trial scores.
pub fn quantile_boundaries(current_scores: &[f64], n_strata: usize) -> Result<Vec<f64>> {
    if n_strata == 0 {
        return Err(Error::config("stratum count must be at least 1"));
    }
    if current_scores.len() < n_strata {
        return Err(Error::validation(format!(
            "{} current subjects cannot fill {n_strata} strata",
            current_scores.len()
        )));
    }
    let mut sorted = current_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b: Vec<f64> = (0..=n_strata)
        .map(|j| quantile_sorted(&sorted, j as f64 / n_strata as f64))
        .collect();
    if n_strata > 1 && b.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Estimation(format!(
            "tied propensity scores give fewer than {n_strata} distinct quantile strata"
        )));
    }
    Ok(b)
}

/// Index of the stratum holding `e`; intervals are left-closed, the last closed.
pub fn stratum_of(boundaries: &[f64], e: f64) -> usize {
    let interior = &boundaries[1..boundaries.len() - 1];
    interior.partition_point(|&b| b <= e)
}

/// Partitions retained subjects into `n_strata` quantile strata of the current-trial scores.
pub fn stratify(
    subjects: &[Subject],
    scores: &[f64],
    trimmed: &TrimReport,
    n_strata: usize,
) -> Result<StratifiedData> {
    if subjects.len() != scores.len() || scores.len() != trimmed.retained.len() {
        return Err(Error::validation(
            "subjects, scores and trim report differ in length",
        ));
    }
    let current: Vec<f64> = subjects
        .iter()
        .zip(scores)
        .filter(|(s, _)| s.source == SourceLabel::Current)
        .map(|(_, e)| *e)
        .collect();
    let boundaries = quantile_boundaries(&current, n_strata)?;
    let mut strata = vec![StratumCell::default(); n_strata];
    let assignment: Vec<Option<usize>> = subjects
        .iter()
        .zip(scores)
        .zip(&trimmed.retained)
        .map(|((s, &e), &keep)| {
            keep.then(|| {
                let k = stratum_of(&boundaries, e);
                let cell = &mut strata[k].outcomes[s.source.index()][s.arm.index()];
                *cell = *cell
                    + BinomialSummary {
                        y: s.outcome as u64,
                        n: 1,
                    };
                k
            })
        })
        .collect();
    if let Some(k) = strata.iter().position(|c| c.n(SourceLabel::Current) == 0) {
        return Err(Error::Internal(format!(
            "stratum {} has no current-trial subjects",
            k + 1
        )));
    }
    for k in 0..n_strata {
        let c = &strata[k];
        if c.n(SourceLabel::External) == 0 && c.n(SourceLabel::RealWorld) == 0 {
            log::warn!("stratum {} has no borrowable subjects", k + 1);
        }
    }
    Ok(StratifiedData {
        boundaries,
        strata,
        assignment,
        trimmed: trimmed.trimmed,
    })
}

/// ∫ min(f, g) by the trapezoid rule on the union of both grids.
pub fn overlap(f: &DensityEstimate, g: &DensityEstimate) -> f64 {
    let mut grid: Vec<f64> = f.grid.iter().chain(&g.grid).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 2 {
        return 0.0;
    }
    let density = grid
        .iter()
        .map(|&x| f.value_at(x).min(g.value_at(x)))
        .collect();
    trapezoid_integral(&DensityEstimate { grid, density }).clamp(0.0, 1.0)
}

/// Overlaps and half-normal scales of one borrowed source across strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScales {
    /// `None` where either density could not be estimated.
    pub overlap: Vec<Option<f64>>,
    pub reference: Option<f64>,
    /// `f64::INFINITY` marks a zero-overlap stratum: the source is left out there.
    pub scale: Vec<f64>,
}

impl SourceScales {
    pub fn excluded(&self, stratum: usize) -> bool {
        self.scale[stratum].is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapScales {
    pub external: SourceScales,
    pub real_world: SourceScales,
}

impl OverlapScales {
    pub fn for_source(&self, source: SourceLabel) -> &SourceScales {
        match source {
            SourceLabel::RealWorld => &self.real_world,
            _ => &self.external,
        }
    }

    /// Unit scales everywhere, as when overlap is not used.
    pub fn unit(n_strata: usize) -> Self {
        let unit = SourceScales {
            overlap: vec![Some(1.0); n_strata],
            reference: Some(1.0),
            scale: vec![1.0; n_strata],
        };
        Self {
            external: unit.clone(),
            real_world: unit,
        }
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

/// k_s = r_ref / r_s with r_ref the median overlap. Undefined overlaps get k = 1.
pub fn half_normal_scales(overlaps: &[Option<f64>]) -> SourceScales {
    let defined: Vec<f64> = overlaps.iter().flatten().copied().collect();
    let reference = median(&defined);
    let scale = overlaps
        .iter()
        .map(|r| match (r, reference) {
            (Some(r), Some(rr)) if *r > 0.0 => rr / r,
            (Some(_), Some(_)) => f64::INFINITY,
            _ => 1.0,
        })
        .collect();
    SourceScales {
        overlap: overlaps.to_vec(),
        reference,
        scale,
    }
}

/// Overlap of each borrowed source with the current trial inside every stratum,
/// with scores rescaled to the stratum's own interval.
pub fn stratum_overlaps(
    subjects: &[Subject],
    scores: &[f64],
    strata: &StratifiedData,
    grid_size: usize,
) -> OverlapScales {
    let s_count = strata.n_strata();
    let mut per_source: [Vec<Option<f64>>; 2] = [vec![None; s_count], vec![None; s_count]];
    for k in 0..s_count {
        let (lo, hi) = (strata.boundaries[k], strata.boundaries[k + 1]);
        let width = hi - lo;
        let collect = |src: SourceLabel| -> Vec<f64> {
            subjects
                .iter()
                .zip(scores)
                .zip(&strata.assignment)
                .filter(|((s, _), a)| s.source == src && **a == Some(k))
                .map(|((_, e), _)| ((e - lo) / width).clamp(0.0, 1.0))
                .collect()
        };
        let current = collect(SourceLabel::Current);
        let f_current = if width > 0.0 && current.len() >= MIN_KDE_SAMPLES {
            kde_unit_interval(&current, grid_size).ok()
        } else {
            None
        };
        for (slot, src) in [SourceLabel::External, SourceLabel::RealWorld]
            .into_iter()
            .enumerate()
        {
            let other = collect(src);
            per_source[slot][k] = match &f_current {
                Some(fc) if other.len() >= MIN_KDE_SAMPLES => kde_unit_interval(&other, grid_size)
                    .ok()
                    .map(|fo| overlap(fc, &fo)),
                _ => None,
            };
            if per_source[slot][k].is_none() && !other.is_empty() {
                log::warn!(
                    "stratum {}: too few subjects to estimate {src} overlap, using unit scale",
                    k + 1
                );
            }
        }
    }
    let [ext, real] = per_source;
    OverlapScales {
        external: half_normal_scales(&ext),
        real_world: half_normal_scales(&real),
    }
}

/// One row of the stratum report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReportRow {
    pub stratum: usize,
    pub lower: f64,
    pub upper: f64,
    pub n_current: u64,
    pub n_external: u64,
    pub n_rwd: u64,
    pub overlap_external: Option<f64>,
    pub overlap_rwd: Option<f64>,
    pub scale_external: f64,
    pub scale_rwd: f64,
}

pub fn stratum_report(strata: &StratifiedData, scales: &OverlapScales) -> Vec<StratumReportRow> {
    (0..strata.n_strata())
        .map(|k| {
            let c = &strata.strata[k];
            StratumReportRow {
                stratum: k + 1,
                lower: strata.boundaries[k],
                upper: strata.boundaries[k + 1],
                n_current: c.n(SourceLabel::Current),
                n_external: c.n(SourceLabel::External),
                n_rwd: c.n(SourceLabel::RealWorld),
                overlap_external: scales.external.overlap[k],
                overlap_rwd: scales.real_world.overlap[k],
                scale_external: scales.external.scale[k],
                scale_rwd: scales.real_world.scale[k],
            }
        })
        .collect()
}

/// Propensity fit, trimming, strata and scales for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub model: PropensityModel,
    pub scores: Vec<f64>,
    pub trim: TrimReport,
    pub strata: StratifiedData,
    pub scales: OverlapScales,
}

pub const OVERLAP_GRID: usize = 256;

/// Fit, score, trim, stratify and derive scales.
pub fn stratify_subjects(subjects: &[Subject], n_strata: usize) -> Result<Stratification> {
    let model = fit_propensity(subjects)?;
    let scores = score(&model, subjects)?;
    let sources: Vec<SourceLabel> = subjects.iter().map(|s| s.source).collect();
    let trim = trim(&scores, &sources)?;
    let strata = stratify(subjects, &scores, &trim, n_strata)?;
    let scales = stratum_overlaps(subjects, &scores, &strata, OVERLAP_GRID);
    Ok(Stratification {
        model,
        scores,
        trim,
        strata,
        scales,
    })
}

impl Stratification {
    /// Copies scores and strata onto the subjects.
    pub fn annotate(&self, subjects: &mut [Subject]) {
        for ((s, e), a) in subjects
            .iter_mut()
            .zip(&self.scores)
            .zip(&self.strata.assignment)
        {
            s.propensity = Some(*e);
            s.stratum = *a;
        }
    }
}
