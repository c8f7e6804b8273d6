//! Subcommand bodies. Each returns after its outputs are written; the caller
//! adds the manifest.

use crate::config::{AnalyzeConfig, SampleSizeRun};
use crate::error::{CliError, CliResult};
use crate::manifest::OutputSet;
use crate::plot;
use eqps::comparators::{Analyzer, Method, TrialAnalysis};
use eqps::data::{load_subjects, Arm, Subject};
use eqps::exec::Execution;
use eqps::numerics::RngStream;
use eqps::propensity::{stratum_report, StratumReportRow};
use eqps::simulation::{
    case_study, required_sample_size, run_grid, weight_curve, CaseStudyConfig, CurveConfig,
    GridConfig, SampleSizeConfig,
};
use serde::Serialize;
use std::fmt::Write;
use std::path::{Path, PathBuf};

pub fn to_csv<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

#[derive(Serialize)]
struct AnalyzeReport<'a> {
    seed: u64,
    subjects: usize,
    trimmed: Option<[u64; 3]>,
    strata: Option<Vec<StratumReportRow>>,
    analyses: &'a [TrialAnalysis],
}

pub struct Outcome {
    /// Set when `--strict` should turn the run into a diagnostic failure.
    pub diagnostic: Option<String>,
    /// Human-readable summary for stdout.
    pub text: String,
}

macro_rules! say {
    ($text:expr, $($arg:tt)*) => {
        let _ = writeln!($text, $($arg)*);
    };
}

fn load_all(paths: &[PathBuf], cfg: &AnalyzeConfig) -> CliResult<Vec<Subject>> {
    let mut subjects = vec![];
    for p in paths {
        let part = load_subjects(p, &cfg.columns).map_err(|e| match e {
            eqps::Error::Io(io) => CliError::Input(format!("{}: {io}", p.display())),
            e if e.is_input_error() => CliError::Input(format!("{}: {e}", p.display())),
            e => CliError::Core(e),
        })?;
        subjects.extend(part);
    }
    if subjects.is_empty() {
        return Err(CliError::Input("no subjects in the data files".into()));
    }
    Ok(subjects)
}

pub fn analyze(
    cfg: &AnalyzeConfig,
    data: &[PathBuf],
    dump_draws: bool,
    out: &mut OutputSet,
) -> CliResult<Outcome> {
    let mut text = String::new();
    let subjects = load_all(data, cfg)?;
    let rng = RngStream::new(cfg.seed, 0);
    let analyzer = Analyzer::new(&subjects, &cfg.analysis, &rng, Execution::Parallel);
    let mut analyses = vec![];
    for &m in &cfg.methods {
        log::info!("analysing with {m}");
        analyses.push(analyzer.run(m)?);
    }
    let stratified = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Eqps | Method::PsMap));
    let (trimmed, strata) = if stratified {
        let s = analyzer.stratification()?;
        (
            Some(s.trim.trimmed),
            Some(stratum_report(&s.strata, &s.scales)),
        )
    } else {
        (None, None)
    };
    out.write(
        "report.json",
        &to_json(&AnalyzeReport {
            seed: cfg.seed,
            subjects: subjects.len(),
            trimmed,
            strata,
            analyses: &analyses,
        })?,
    )?;
    if dump_draws && stratified {
        for arm in Arm::BOTH {
            if let Some(d) = analyzer.hierarchical_draws(arm)? {
                let mut bytes = vec![];
                d.write_csv(&mut bytes)?;
                out.write(&format!("draws_{arm}.csv"), &bytes)?;
            }
        }
    }
    say!(
        text,
        "{:<9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}  decision",
        "method",
        "omega_t",
        "omega_c",
        "mean_t",
        "mean_c",
        "diff",
        "Pr(t>c)"
    );
    for a in &analyses {
        say!(
            text,
            "{:<9} {:>8.3} {:>8.3} {:>8.4} {:>8.4} {:>8.4} {:>9.5}  {}",
            a.method.token(),
            a.treatment.omega,
            a.control.omega,
            a.treatment.posterior_mean,
            a.control.posterior_mean,
            a.risk_difference,
            a.decision.probability,
            if a.decision.success {
                "success"
            } else {
                "no success"
            }
        );
        if let Some(p) = a.treatment.consistency {
            say!(
                text,
                "{:<9} consistency p: treatment {:.3}, control {}",
                "",
                p,
                fmt_opt(a.control.consistency, 3)
            );
        }
    }
    let bad: Vec<String> = analyses
        .iter()
        .filter(|a| !a.converged())
        .map(|a| a.method.token().to_string())
        .collect();
    Ok(Outcome {
        diagnostic: (!bad.is_empty())
            .then(|| format!("MCMC did not converge for {}", bad.join(", "))),
        text,
    })
}

pub fn simulate(cfg: &GridConfig, records: bool, out: &mut OutputSet) -> CliResult<Outcome> {
    let mut text = String::new();
    let res = run_grid(cfg, Execution::Parallel)?;
    out.write("summary.csv", &to_csv(&res.summary)?)?;
    if records {
        out.write("records.csv", &to_csv(&res.records)?)?;
    }
    say!(
        text,
        "{} summary rows over {} records",
        res.summary.len(),
        res.records.len()
    );
    for row in res.summary.iter().take(12) {
        say!(
            text,
            "{:<44} {:<9} bias {:>8.4}  mse {:>8.5}  rejection {:>6.3}  omega {:>6}",
            row.scenario,
            row.method.token(),
            row.bias,
            row.mse,
            row.rejection_rate,
            fmt_opt(Some(row.mean_omega).filter(|v| v.is_finite()), 3)
        );
    }
    if res.summary.len() > 12 {
        say!(text, "... see summary.csv");
    }
    let failed = res.records.iter().filter(|r| r.error.is_some()).count();
    let unconverged = res
        .records
        .iter()
        .filter(|r| r.converged == Some(false))
        .count();
    let diagnostic = (failed + unconverged > 0)
        .then(|| format!("{failed} failed and {unconverged} non-converged replicate analyses"));
    Ok(Outcome { diagnostic, text })
}

pub fn weights_curve(cfg: &CurveConfig, out: &mut OutputSet) -> CliResult<Outcome> {
    let mut text = String::new();
    let rows = weight_curve(cfg, Execution::Parallel)?;
    out.write("curve.csv", &to_csv(&rows)?)?;
    for r in &rows {
        say!(
            text,
            "shift {:>5.2}  lambda {:.2}  delta {:.2}  mean weight {:.3} (se {:.3})",
            r.rwd_shift,
            r.lambda,
            r.delta,
            r.mean_weight,
            r.se
        );
    }
    let failed: usize = rows.iter().map(|r| r.n_fail).sum();
    Ok(Outcome {
        diagnostic: (failed > 0).then(|| format!("{failed} failed replicate analyses")),
        text,
    })
}

#[derive(Serialize)]
struct SampleSizeRow {
    heterogeneity: f64,
    method: Method,
    n_star: Option<usize>,
    reference_n_star: Option<usize>,
    ratio: Option<f64>,
    range_exhausted: bool,
}

#[derive(Serialize)]
struct EvaluationRow {
    heterogeneity: f64,
    method: Method,
    n: usize,
    power: f64,
    failures: usize,
}

pub fn sample_size(run: &SampleSizeRun, out: &mut OutputSet) -> CliResult<Outcome> {
    let mut text = String::new();
    let mut rows = vec![];
    let mut evals = vec![];
    let mut failures = 0;
    for &h in &run.heterogeneity {
        let cfg = SampleSizeConfig {
            base: run.search.base.clone().with_heterogeneity(h, h),
            ..run.search.clone()
        };
        let reference = required_sample_size(&cfg, Method::NoBorrow, Execution::Parallel)?;
        let mut record = |r: &eqps::simulation::SampleSizeResult| {
            for &(n, power, f) in &r.evaluations {
                failures += f;
                evals.push(EvaluationRow {
                    heterogeneity: h,
                    method: r.method,
                    n,
                    power,
                    failures: f,
                });
            }
        };
        record(&reference);
        for &m in run.methods.iter().filter(|&&m| m != Method::NoBorrow) {
            let r = required_sample_size(&cfg, m, Execution::Parallel)?;
            record(&r);
            let ratio = match (r.n_star, reference.n_star) {
                (Some(a), Some(b)) => Some(a as f64 / b as f64),
                _ => None,
            };
            say!(
                text,
                "shift {h:>5.2}  {:<8} n* {:>6}  no borrowing {:>6}  ratio {}",
                m.token(),
                r.n_star.map_or("-".into(), |n| n.to_string()),
                reference.n_star.map_or("-".into(), |n| n.to_string()),
                fmt_opt(ratio, 3)
            );
            rows.push(SampleSizeRow {
                heterogeneity: h,
                method: m,
                n_star: r.n_star,
                reference_n_star: reference.n_star,
                ratio,
                range_exhausted: r.range_exhausted,
            });
        }
    }
    out.write("samplesize.csv", &to_csv(&rows)?)?;
    out.write("samplesize_evaluations.csv", &to_csv(&evals)?)?;
    Ok(Outcome {
        diagnostic: (failures > 0).then(|| format!("{failures} failed replicate analyses")),
        text,
    })
}

pub fn case_study_cmd(cfg: &CaseStudyConfig, out: &mut OutputSet) -> CliResult<Outcome> {
    let mut text = String::new();
    let report = case_study(cfg, Execution::Parallel)?;
    out.write("case_study.csv", &to_csv(&report.rows)?)?;
    out.write("case_study_density.csv", &to_csv(&report.density)?)?;
    for r in &report.rows {
        say!(
            text,
            "x{:<2} {:<9} diff {:.4} (sd {:.4})  omega_t {:.2}  omega_c {:.2}  Pr(t>c) {:.4}",
            r.scaling,
            r.method.token(),
            r.risk_difference,
            r.risk_difference_sd,
            r.omega_treatment,
            r.omega_control,
            r.probability
        );
    }
    let bad = report.rows.iter().filter(|r| !r.converged).count();
    Ok(Outcome {
        diagnostic: (bad > 0).then(|| format!("{bad} analyses did not converge")),
        text,
    })
}

pub fn plot_cmd(inputs: &[PathBuf], reference: f64, out: &mut OutputSet) -> CliResult<Outcome> {
    let mut text = String::new();
    for input in inputs {
        for (name, svg) in plot::plots_for(Path::new(input), reference)? {
            let path = out.write(&name, svg.as_bytes())?;
            say!(text, "wrote {}", path.display());
        }
    }
    Ok(Outcome {
        diagnostic: None,
        text,
    })
}
