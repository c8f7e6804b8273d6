//! The scenario grid: replicated datasets analysed by every method.

use super::{generate_datasets, true_risk_difference, ScenarioConfig, TRUE_EFFECT_DRAWS};
use crate::comparators::{AnalysisConfig, Analyzer, Method, TrialAnalysis};
use crate::data::Arm;
use crate::eqps::{
    candidate_components, decide_trial, find_omega_eq_with, ConsistencyTable, EqpsConfig,
    EqpsResult,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{rng::label, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub base: ScenarioConfig,
    /// Selection coefficient applied to every covariate of both borrowed sources.
    pub baseline_shifts: Vec<f64>,
    /// Treatment log-odds offsets applied to both borrowed sources.
    pub heterogeneity: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub analysis: AnalysisConfig,
    pub seed: u64,
    pub true_effect_draws: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::desk(),
            baseline_shifts: vec![0.0, 0.5],
            heterogeneity: vec![0.0, 0.2, 0.4],
            lambdas: vec![0.7, 0.8, 0.9],
            deltas: vec![0.1, 0.15, 0.2],
            methods: vec![
                Method::Eqps,
                Method::Map,
                Method::PsMap,
                Method::EbRmap,
                Method::NoBorrow,
            ],
            replicates: 500,
            analysis: AnalysisConfig::default(),
            seed: 20_240_601,
            true_effect_draws: TRUE_EFFECT_DRAWS,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.baseline_shifts.is_empty()
            || self.heterogeneity.is_empty()
            || self.lambdas.is_empty()
            || self.deltas.is_empty()
        {
            return Err(Error::config("scenario grid has an empty axis"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicate count must be at least 1"));
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0 && *l < 1.0))
            || self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0))
        {
            return Err(Error::config("lambda and delta values must lie in (0, 1)"));
        }
        if self.true_effect_draws == 0 {
            return Err(Error::config("true-effect integration needs draws"));
        }
        self.base.validate()?;
        self.analysis.validate()
    }

    /// Data-generating settings in grid order (shift-major).
    pub fn data_scenarios(&self) -> Vec<(f64, f64, ScenarioConfig)> {
        let mut out = vec![];
        for &shift in &self.baseline_shifts {
            for &het in &self.heterogeneity {
                out.push((
                    shift,
                    het,
                    self.base
                        .clone()
                        .with_baseline_shift(shift)
                        .with_heterogeneity(het, het),
                ));
            }
        }
        out
    }
}

pub(crate) fn data_id(shift: f64, het: f64) -> String {
    format!("shift{shift}_het{het}")
}

pub(crate) fn scenario_id(shift: f64, het: f64, lambda: f64, delta: f64) -> String {
    format!("{}_lambda{lambda}_delta{delta}", data_id(shift, het))
}

/// One (λ, δ) point of the EQPS sweep on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub delta: f64,
    pub treatment: EqpsResult,
    pub control: EqpsResult,
    pub probability: f64,
    pub success: bool,
    pub risk_difference: f64,
}

/// EQPS results for one arm at every (λ, δ) pair, λ-major, sharing the
/// hierarchical draws, the mixture fit and the consistency draws.
pub fn arm_sweep(
    analyzer: &Analyzer,
    arm: Arm,
    lambdas: &[f64],
    deltas: &[f64],
) -> Result<Vec<EqpsResult>> {
    let cfg = &analyzer.config().eqps;
    let build = analyzer.stratified_prior(arm, false)?;
    let current = analyzer.current(arm);
    let comps = candidate_components(cfg.stage, &build.components, cfg.vague, current);
    let mut rng = analyzer
        .rng()
        .child(arm.index() as u64)
        .child(label("search"));
    let table = ConsistencyTable::estimate(
        &comps,
        cfg.continuity.shapes(current)?,
        deltas,
        cfg.draws,
        &mut rng,
    )?;
    let mut results = vec![];
    for &lambda in lambdas {
        for d in 0..deltas.len() {
            let c = EqpsConfig {
                lambda,
                delta: deltas[d],
                ..cfg.clone()
            };
            results.push(find_omega_eq_with(
                &build.components,
                current,
                &table,
                d,
                lambda,
                &c,
            )?);
        }
    }
    Ok(results)
}

/// EQPS over every (λ, δ) pair for both arms. The point with the analyzer's
/// own λ and δ equals `Analyzer::run(Method::Eqps)`.
pub fn eqps_sweep(analyzer: &Analyzer, lambdas: &[f64], deltas: &[f64]) -> Result<Vec<SweepPoint>> {
    let cfg = &analyzer.config().eqps;
    let treatment = arm_sweep(analyzer, Arm::Treatment, lambdas, deltas)?;
    let control = arm_sweep(analyzer, Arm::Control, lambdas, deltas)?;
    let mut out = vec![];
    for (i, (t, c)) in treatment.into_iter().zip(control).enumerate() {
        let (lambda, delta) = (lambdas[i / deltas.len()], deltas[i % deltas.len()]);
        let decision = decide_trial(&t.posterior, &c.posterior, cfg.success_threshold);
        out.push(SweepPoint {
            lambda,
            delta,
            probability: decision.probability,
            success: decision.success,
            risk_difference: t.posterior.mean() - c.posterior.mean(),
            treatment: t,
            control: c,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scenario: String,
    pub method: Method,
    pub replicate: usize,
    pub estimate: Option<f64>,
    pub success: Option<bool>,
    pub probability: Option<f64>,
    pub omega_treatment: Option<f64>,
    pub omega_control: Option<f64>,
    pub ess_treatment: Option<f64>,
    pub ess_control: Option<f64>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

impl ResultRecord {
    fn failed(scenario: String, method: Method, replicate: usize, err: &Error) -> Self {
        Self {
            scenario,
            method,
            replicate,
            estimate: None,
            success: None,
            probability: None,
            omega_treatment: None,
            omega_control: None,
            ess_treatment: None,
            ess_control: None,
            converged: None,
            error: Some(err.to_string()),
        }
    }

    fn from_analysis(scenario: String, replicate: usize, a: &TrialAnalysis) -> Self {
        Self {
            scenario,
            method: a.method,
            replicate,
            estimate: Some(a.risk_difference),
            success: Some(a.decision.success),
            probability: Some(a.decision.probability),
            omega_treatment: Some(a.treatment.omega),
            omega_control: Some(a.control.omega),
            ess_treatment: a.treatment.prior_ess,
            ess_control: a.control.prior_ess,
            converged: Some(a.converged()),
            error: None,
        }
    }

    fn from_sweep(scenario: String, replicate: usize, p: &SweepPoint, converged: bool) -> Self {
        Self {
            scenario,
            method: Method::Eqps,
            replicate,
            estimate: Some(p.risk_difference),
            success: Some(p.success),
            probability: Some(p.probability),
            omega_treatment: Some(p.treatment.omega_eq),
            omega_control: Some(p.control.omega_eq),
            ess_treatment: p.treatment.prior_ess,
            ess_control: p.control.prior_ess,
            converged: Some(converged),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: Method,
    pub bias: f64,
    pub mse: f64,
    pub rejection_rate: f64,
    pub mean_omega: f64,
    pub mean_ess: f64,
    pub n_fail: usize,
    pub n: usize,
    pub bias_se: f64,
    pub omega_se: f64,
    pub true_effect: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Summary of one scenario × method over its records.
pub fn summarize_records(
    scenario: &str,
    method: Method,
    truth: f64,
    records: &[&ResultRecord],
) -> SummaryRow {
    let ok: Vec<&&ResultRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let err: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.estimate)
        .map(|e| e - truth)
        .collect();
    let (bias, bias_se) = mean_se(&err);
    let mse = if err.is_empty() {
        f64::NAN
    } else {
        err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64
    };
    let rej: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.success)
        .map(|s| f64::from(u8::from(s)))
        .collect();
    let omega: Vec<f64> = ok.iter().filter_map(|r| r.omega_treatment).collect();
    let ess: Vec<f64> = ok.iter().filter_map(|r| r.ess_treatment).collect();
    let (mean_omega, omega_se) = mean_se(&omega);
    SummaryRow {
        scenario: scenario.to_string(),
        method,
        bias,
        mse,
        rejection_rate: mean_se(&rej).0,
        mean_omega,
        mean_ess: mean_se(&ess).0,
        n_fail: records.len() - ok.len(),
        n: ok.len(),
        bias_se,
        omega_se,
        true_effect: truth,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutput {
    pub records: Vec<ResultRecord>,
    pub summary: Vec<SummaryRow>,
}

fn replicate_records(
    grid: &GridConfig,
    shift: f64,
    het: f64,
    data: &ScenarioConfig,
    replicate: usize,
) -> Vec<ResultRecord> {
    let root = RngStream::new(grid.seed, 0)
        .child(label(&data_id(shift, het)))
        .child(replicate as u64);
    let ids: Vec<(f64, f64, String)> = grid
        .lambdas
        .iter()
        .flat_map(|&l| {
            grid.deltas
                .iter()
                .map(move |&d| (l, d, scenario_id(shift, het, l, d)))
        })
        .collect();
    let subjects = match generate_datasets(data, &mut root.child(label("data"))) {
        Ok(s) => s,
        Err(e) => {
            return ids
                .iter()
                .flat_map(|(_, _, id)| {
                    grid.methods
                        .iter()
                        .map(|&m| ResultRecord::failed(id.clone(), m, replicate, &e))
                })
                .collect();
        }
    };
    let analyzer = Analyzer::new(
        &subjects,
        &grid.analysis,
        &root.child(label("analysis")),
        Execution::Sequential,
    );
    let mut out = vec![];
    for &method in &grid.methods {
        if method == Method::Eqps {
            match eqps_sweep(&analyzer, &grid.lambdas, &grid.deltas) {
                Ok(points) => {
                    let converged = Arm::BOTH.iter().all(|&a| {
                        analyzer
                            .hierarchical_draws(a)
                            .map(|d| d.is_none_or(|d| d.converged()))
                            .unwrap_or(false)
                    });
                    for ((_, _, id), p) in ids.iter().zip(&points) {
                        out.push(ResultRecord::from_sweep(
                            id.clone(),
                            replicate,
                            p,
                            converged,
                        ));
                    }
                }
                Err(e) => out.extend(
                    ids.iter()
                        .map(|(_, _, id)| ResultRecord::failed(id.clone(), method, replicate, &e)),
                ),
            }
        } else {
            let res = analyzer.run(method);
            for (_, _, id) in &ids {
                out.push(match &res {
                    Ok(a) => ResultRecord::from_analysis(id.clone(), replicate, a),
                    Err(e) => ResultRecord::failed(id.clone(), method, replicate, e),
                });
            }
        }
    }
    out
}

/// Runs the whole grid. Replicates run on `exec`; results are ordered by data
/// scenario, replicate, method and (λ, δ) regardless of scheduling.
pub fn run_grid(grid: &GridConfig, exec: Execution) -> Result<GridOutput> {
    grid.validate()?;
    let mut records = vec![];
    let mut summary = vec![];
    for (shift, het, data) in grid.data_scenarios() {
        log::info!(
            "scenario {}: {} replicates",
            data_id(shift, het),
            grid.replicates
        );
        let truth = true_risk_difference(&data, grid.true_effect_draws)?;
        let reps = exec.map_indexed(grid.replicates, |r| {
            replicate_records(grid, shift, het, &data, r)
        });
        let block: Vec<ResultRecord> = reps.into_iter().flatten().collect();
        for &lambda in &grid.lambdas {
            for &delta in &grid.deltas {
                let id = scenario_id(shift, het, lambda, delta);
                for &method in &grid.methods {
                    let rows: Vec<&ResultRecord> = block
                        .iter()
                        .filter(|r| r.scenario == id && r.method == method)
                        .collect();
                    summary.push(summarize_records(&id, method, truth, &rows));
                }
            }
        }
        records.extend(block);
    }
    Ok(GridOutput { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::McmcConfig;

    fn tiny() -> GridConfig {
        let mut g = GridConfig {
            baseline_shifts: vec![0.0],
            heterogeneity: vec![0.0],
            lambdas: vec![0.8],
            deltas: vec![0.1, 0.2],
            replicates: 2,
            true_effect_draws: 10_000,
            ..Default::default()
        };
        g.analysis.mcmc = McmcConfig {
            iterations: 600,
            burn_in: 200,
            ..McmcConfig::desk()
        };
        g.analysis.eqps.draws = 5_000;
        g.analysis.n_strata = 3;
        g
    }

    #[test]
    fn grid_layout_and_identities() {
        let g = tiny();
        let out = run_grid(&g, Execution::Parallel).unwrap();
        assert_eq!(out.summary.len(), 2 * g.methods.len());
        assert_eq!(out.records.len(), 2 * 2 * g.methods.len());
        for row in &out.summary {
            assert_eq!(row.n_fail, 0, "{row:?}");
            assert!(row.mse >= row.bias * row.bias - 1e-15);
        }
        let again = run_grid(&g, Execution::Sequential).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn sweep_point_equals_single_run() {
        let g = tiny();
        let data = generate_datasets(&g.base, &mut RngStream::new(1, 0)).unwrap();
        let analyzer = Analyzer::new(
            &data,
            &g.analysis,
            &RngStream::new(2, 0),
            Execution::Sequential,
        );
        let sweep = eqps_sweep(&analyzer, &[0.8], &[0.1, 0.2]).unwrap();
        let single = analyzer.run(Method::Eqps).unwrap();
        assert_eq!(sweep[0].risk_difference, single.risk_difference);
        assert_eq!(sweep[0].treatment.omega_eq, single.treatment.omega);
        assert!(sweep[1].treatment.omega_eq <= sweep[0].treatment.omega_eq);
    }

    #[test]
    fn summary_statistics() {
        let rec = |e: f64, s: bool, w: f64| ResultRecord {
            scenario: "x".into(),
            method: Method::Map,
            replicate: 0,
            estimate: Some(e),
            success: Some(s),
            probability: Some(0.5),
            omega_treatment: Some(w),
            omega_control: Some(w),
            ess_treatment: Some(10.0),
            ess_control: None,
            converged: Some(true),
            error: None,
        };
        let a = rec(0.3, true, 0.0);
        let b = rec(0.1, false, 1.0);
        let c = ResultRecord::failed("x".into(), Method::Map, 2, &Error::Internal("boom".into()));
        let row = summarize_records("x", Method::Map, 0.25, &[&a, &b, &c]);
        assert_eq!((row.n, row.n_fail), (2, 1));
        assert!((row.bias - (-0.05)).abs() < 1e-12);
        assert!((row.mse - (0.05f64.powi(2) + 0.15f64.powi(2)) / 2.0).abs() < 1e-12);
        assert_eq!(
            (row.rejection_rate, row.mean_omega, row.mean_ess),
            (0.5, 0.5, 10.0)
        );
    }
}
