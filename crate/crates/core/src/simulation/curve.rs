//! Borrowing weight against heterogeneity, and required sample sizes.

use super::grid::arm_sweep;
use super::{generate_datasets, ScenarioConfig};
use crate::comparators::{AnalysisConfig, Analyzer, Method};
use crate::data::Arm;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{rng::label, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveConfig {
    pub base: ScenarioConfig,
    pub baseline_shift: f64,
    /// Real-world treatment offsets β₃ to sweep.
    pub heterogeneity: Vec<f64>,
    /// External offset as a multiple of the real-world one (β₄ = ratio·β₃).
    pub external_ratio: f64,
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub replicates: usize,
    pub analysis: AnalysisConfig,
    pub seed: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::desk(),
            baseline_shift: 0.0,
            heterogeneity: (-4..=4).map(|i| f64::from(i) * 0.2).collect(),
            external_ratio: 1.0,
            lambdas: vec![0.7, 0.8, 0.9],
            deltas: vec![0.1, 0.15, 0.2],
            replicates: 100,
            analysis: AnalysisConfig::default(),
            seed: 20_240_602,
        }
    }
}

impl CurveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heterogeneity.is_empty() || self.lambdas.is_empty() || self.deltas.is_empty() {
            return Err(Error::config("weight curve needs non-empty grids"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicate count must be at least 1"));
        }
        self.base.validate()?;
        self.analysis.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub rwd_shift: f64,
    pub external_shift: f64,
    pub lambda: f64,
    pub delta: f64,
    /// Mean of 1 − ω_Eq in the treatment arm.
    pub mean_weight: f64,
    pub se: f64,
    pub n: usize,
    pub n_fail: usize,
}

/// Mean mixture weight 1 − ω_Eq of the treatment arm at every grid point.
/// Replicate r uses the same seed at every heterogeneity level.
pub fn weight_curve(cfg: &CurveConfig, exec: Execution) -> Result<Vec<CurveRow>> {
    cfg.validate()?;
    let mut rows = vec![];
    for &h in &cfg.heterogeneity {
        let ext = cfg.external_ratio * h;
        log::info!("weight curve at rwd shift {h}, external shift {ext}");
        let data = cfg
            .base
            .clone()
            .with_baseline_shift(cfg.baseline_shift)
            .with_heterogeneity(h, ext);
        let reps: Vec<Result<Vec<f64>>> = exec.map_indexed(cfg.replicates, |r| {
            let root = RngStream::new(cfg.seed, 0)
                .child(label("curve"))
                .child(r as u64);
            let subjects = generate_datasets(&data, &mut root.child(label("data")))?;
            let analyzer = Analyzer::new(
                &subjects,
                &cfg.analysis,
                &root.child(label("analysis")),
                Execution::Sequential,
            );
            let res = arm_sweep(&analyzer, Arm::Treatment, &cfg.lambdas, &cfg.deltas)?;
            Ok(res.iter().map(|r| 1.0 - r.omega_eq).collect())
        });
        let ok: Vec<&Vec<f64>> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
        let n_fail = reps.len() - ok.len();
        for (li, &lambda) in cfg.lambdas.iter().enumerate() {
            for (di, &delta) in cfg.deltas.iter().enumerate() {
                let k = li * cfg.deltas.len() + di;
                let v: Vec<f64> = ok.iter().map(|w| w[k]).collect();
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    f64::NAN
                };
                rows.push(CurveRow {
                    rwd_shift: h,
                    external_shift: ext,
                    lambda,
                    delta,
                    mean_weight: mean,
                    se: (var / n).sqrt(),
                    n: v.len(),
                    n_fail,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSizeConfig {
    pub base: ScenarioConfig,
    pub method: Method,
    pub target_power: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// Width of the final bracket.
    pub resolution: usize,
    pub replicates: usize,
    pub analysis: AnalysisConfig,
    pub seed: u64,
}

impl Default for SampleSizeConfig {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::desk(),
            method: Method::Eqps,
            target_power: 0.8,
            n_min: 20,
            n_max: 320,
            resolution: 10,
            replicates: 100,
            analysis: AnalysisConfig::default(),
            seed: 20_240_603,
        }
    }
}

impl SampleSizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_power > 0.0 && self.target_power < 1.0) {
            return Err(Error::config("target power must lie in (0, 1)"));
        }
        if self.n_min == 0
            || self.n_max < self.n_min
            || self.resolution == 0
            || self.replicates == 0
        {
            return Err(Error::config(
                "sample-size search needs 0 < n_min <= n_max, a positive resolution and replicates",
            ));
        }
        self.base.validate()?;
        self.analysis.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub method: Method,
    /// Smallest per-arm current sample size reaching the target.
    pub n_star: Option<usize>,
    pub range_exhausted: bool,
    /// Every (n, power, failures) evaluated, in search order.
    pub evaluations: Vec<(usize, f64, usize)>,
}

fn power_at(
    cfg: &SampleSizeConfig,
    method: Method,
    n: usize,
    exec: Execution,
) -> Result<(f64, usize)> {
    let data = ScenarioConfig {
        n_current: n,
        ..cfg.base.clone()
    };
    let results: Vec<Result<bool>> = exec.map_indexed(cfg.replicates, |r| {
        let root = RngStream::new(cfg.seed, 0)
            .child(label("samplesize"))
            .child(n as u64)
            .child(r as u64);
        let subjects = generate_datasets(&data, &mut root.child(label("data")))?;
        let analyzer = Analyzer::new(
            &subjects,
            &cfg.analysis,
            &root.child(label("analysis")),
            Execution::Sequential,
        );
        Ok(analyzer.run(method)?.decision.success)
    });
    let ok: Vec<bool> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().copied())
        .collect();
    if ok.is_empty() {
        return Err(Error::Estimation(format!(
            "every replicate failed at n = {n}"
        )));
    }
    let power = ok.iter().filter(|&&s| s).count() as f64 / ok.len() as f64;
    Ok((power, results.len() - ok.len()))
}

/// Doubling search from `n_min` until the target is met, then bisection of
/// the last bracket down to `resolution`.
pub fn required_sample_size(
    cfg: &SampleSizeConfig,
    method: Method,
    exec: Execution,
) -> Result<SampleSizeResult> {
    cfg.validate()?;
    let mut evaluations = vec![];
    let mut eval = |n: usize| -> Result<bool> {
        let (p, fails) = power_at(cfg, method, n, exec)?;
        log::info!("{method}: n = {n}, power {p:.3}");
        evaluations.push((n, p, fails));
        Ok(p >= cfg.target_power)
    };
    let mut lo = None;
    let mut n = cfg.n_min;
    let hi = loop {
        if eval(n)? {
            break Some(n);
        }
        lo = Some(n);
        if n == cfg.n_max {
            break None;
        }
        n = (2 * n).min(cfg.n_max);
    };
    let Some(mut hi) = hi else {
        return Ok(SampleSizeResult {
            method,
            n_star: None,
            range_exhausted: true,
            evaluations,
        });
    };
    if let Some(mut lo) = lo {
        while hi - lo > cfg.resolution {
            let mid = lo + (hi - lo) / 2;
            if eval(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    Ok(SampleSizeResult {
        method,
        n_star: Some(hi),
        range_exhausted: false,
        evaluations,
    })
}

/// Required size for the configured method and for no borrowing, with their ratio.
pub fn sample_size_ratio(
    cfg: &SampleSizeConfig,
    exec: Execution,
) -> Result<(SampleSizeResult, SampleSizeResult, Option<f64>)> {
    let method = required_sample_size(cfg, cfg.method, exec)?;
    let reference = if cfg.method == Method::NoBorrow {
        method.clone()
    } else {
        required_sample_size(cfg, Method::NoBorrow, exec)?
    };
    let ratio = match (method.n_star, reference.n_star) {
        (Some(a), Some(b)) => Some(a as f64 / b as f64),
        _ => None,
    };
    Ok((method, reference, ratio))
}
