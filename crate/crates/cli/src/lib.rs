//! The `eqps` command line as a library, so that other crates can drive the
//! same code path in-process.

mod commands;
mod config;
mod error;
mod manifest;
mod plot;

use clap::{ArgAction, Parser, Subcommand};
use config::{load, AnalyzeConfig, Loaded, Preset, RunConfig, SampleSizeRun};
use eqps::comparators::parse_methods;
use eqps::simulation::{CaseStudyConfig, CurveConfig, GridConfig};
use error::{CliError, CliResult};
use manifest::{sha256_hex, write_atomic, Check, OutputSet, RunManifest, MANIFEST_FILE};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Bayesian dynamic borrowing from an external trial and a real-world cohort.
///
/// Exit status: 0 success, 1 unexpected failure, 2 invalid input or
/// configuration, 3 diagnostic failure (with --strict, or a failed --verify).
#[derive(Debug, Parser)]
#[command(name = "eqps", version)]
struct Cli {
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, env = "EQPS_OUT_DIR", default_value = "eqps-out")]
    out_dir: PathBuf,
    /// Default scale before the config file is applied.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// JSON file overriding any subset of the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Exit with status 3 when any MCMC diagnostic or replicate fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Re-hash the outputs listed in the manifest of --out-dir and exit.
    #[arg(long)]
    verify: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Errors only, and no summary on stdout.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyse one hybrid trial from subject-level CSV files.
    Analyze {
        /// Subject CSV (source, arm, outcome, covariates); repeatable.
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        /// Comma-separated methods, e.g. eqps,map,noborrow.
        #[arg(long)]
        methods: Option<String>,
        /// Also write the hierarchical draws.
        #[arg(long)]
        dump_draws: bool,
    },
    /// Operating characteristics over the scenario grid.
    Simulate {
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Also write one row per replicate and method.
        #[arg(long)]
        records: bool,
    },
    /// Mean mixture weight against heterogeneity.
    WeightsCurve {
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Required current-trial sample size relative to no borrowing.
    SampleSize {
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// The worked example rebuilt from published aggregates.
    CaseStudy {
        /// Aggregate table (JSON) replacing the built-in one.
        #[arg(long)]
        aggregate: Option<PathBuf>,
        #[arg(long)]
        methods: Option<String>,
    },
    /// SVG plots from curve, sample-size or case-study density CSVs.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Reference line on density plots.
        #[arg(long, default_value_t = 0.25)]
        reference: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze { .. } => "analyze",
            Command::Simulate { .. } => "simulate",
            Command::WeightsCurve { .. } => "weights-curve",
            Command::SampleSize { .. } => "sample-size",
            Command::CaseStudy { .. } => "case-study",
            Command::Plot { .. } => "plot",
        }
    }
}

fn methods_arg(list: &Option<String>) -> CliResult<Option<Vec<eqps::comparators::Method>>> {
    list.as_deref()
        .map(parse_methods)
        .transpose()
        .map_err(CliError::from)
}

fn positive(name: &str, v: Option<usize>) -> CliResult<Option<usize>> {
    match v {
        Some(0) => Err(CliError::Input(format!("--{name} must be at least 1"))),
        other => Ok(other),
    }
}

/// Loads a config, applies command-line overrides and validates it.
fn prepare<T: RunConfig>(
    cli: &Cli,
    tweak: impl FnOnce(&mut T) -> CliResult<()>,
) -> CliResult<Loaded<T>> {
    let mut loaded: Loaded<T> = load(cli.preset, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        *loaded.config.seed_mut() = seed;
    }
    tweak(&mut loaded.config)?;
    loaded.config.check()?;
    Ok(loaded)
}

struct Prepared<T> {
    config: T,
    seed: u64,
    file_hash: Option<String>,
    json: Vec<u8>,
}

fn finish_prepare<T: RunConfig>(mut loaded: Loaded<T>) -> CliResult<Prepared<T>> {
    let seed = *loaded.config.seed_mut();
    let mut json =
        serde_json::to_vec_pretty(&loaded.config).map_err(|e| CliError::Io(e.to_string()))?;
    json.push(b'\n');
    Ok(Prepared {
        config: loaded.config,
        seed,
        file_hash: loaded.file_hash,
        json,
    })
}

fn run_with<T: RunConfig + Sync>(
    cli: &Cli,
    name: &str,
    prepared: Prepared<T>,
    body: impl FnOnce(&T, &mut OutputSet) -> CliResult<commands::Outcome> + Send,
) -> CliResult<()> {
    if cli.print_config {
        print!("{}", String::from_utf8_lossy(&prepared.json));
        return Ok(());
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut out = OutputSet::new(&cli.out_dir)?;
    out.write("config.json", &prepared.json)?;
    let config = &prepared.config;
    let outcome = eqps::exec::with_threads(cli.threads, || body(config, &mut out))?;
    let effective_config_hash = sha256_hex(&prepared.json);
    let manifest = RunManifest {
        command: name.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: prepared
            .file_hash
            .clone()
            .unwrap_or_else(|| effective_config_hash.clone()),
        config_file: cli.config.as_ref().map(|p| p.display().to_string()),
        effective_config_hash,
        seed: prepared.seed,
        threads: if cli.threads == 0 {
            eqps::exec::worker_count()
        } else {
            cli.threads
        },
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        outputs: out.hashed()?,
    };
    let mut bytes =
        serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&out.dir().join(MANIFEST_FILE), &bytes)?;
    if !cli.quiet {
        print!("{}", outcome.text);
    }
    log::info!("outputs and manifest written to {}", out.dir().display());
    match outcome.diagnostic {
        Some(msg) if cli.strict => Err(CliError::Diagnostic(msg)),
        Some(msg) => {
            log::warn!("{msg}");
            Ok(())
        }
        None => Ok(()),
    }
}

fn verify(dir: &Path) -> CliResult<()> {
    let checks = manifest::verify(dir)?;
    let mut bad = 0;
    for (path, check) in &checks {
        let tag = match check {
            Check::Ok => "ok",
            Check::Missing => "MISSING",
            Check::Mismatch => "MISMATCH",
        };
        bad += usize::from(*check != Check::Ok);
        println!("{tag:<8} {path}");
    }
    if bad > 0 {
        return Err(CliError::Diagnostic(format!(
            "{bad} of {} outputs do not match the manifest",
            checks.len()
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.verify {
        return verify(&cli.out_dir);
    }
    let Some(command) = &cli.command else {
        return Err(CliError::Input("no subcommand given (try --help)".into()));
    };
    let name = command.name();
    match command {
        Command::Analyze {
            data,
            methods,
            dump_draws,
        } => {
            let m = methods_arg(methods)?;
            let p = finish_prepare(prepare::<AnalyzeConfig>(cli, |c| {
                if let Some(m) = m {
                    c.methods = m;
                }
                Ok(())
            })?)?;
            run_with(cli, name, p, |c, out| {
                commands::analyze(c, data, *dump_draws, out)
            })
        }
        Command::Simulate {
            methods,
            replicates,
            records,
        } => {
            let m = methods_arg(methods)?;
            let r = positive("replicates", *replicates)?;
            let p = finish_prepare(prepare::<GridConfig>(cli, |c| {
                if let Some(m) = m {
                    c.methods = m;
                }
                if let Some(r) = r {
                    c.replicates = r;
                }
                Ok(())
            })?)?;
            run_with(cli, name, p, |c, out| commands::simulate(c, *records, out))
        }
        Command::WeightsCurve { replicates } => {
            let r = positive("replicates", *replicates)?;
            let p = finish_prepare(prepare::<CurveConfig>(cli, |c| {
                if let Some(r) = r {
                    c.replicates = r;
                }
                Ok(())
            })?)?;
            run_with(cli, name, p, commands::weights_curve)
        }
        Command::SampleSize {
            methods,
            replicates,
        } => {
            let m = methods_arg(methods)?;
            let r = positive("replicates", *replicates)?;
            let p = finish_prepare(prepare::<SampleSizeRun>(cli, |c| {
                if let Some(m) = m {
                    c.methods = m;
                }
                if let Some(r) = r {
                    c.search.replicates = r;
                }
                Ok(())
            })?)?;
            run_with(cli, name, p, commands::sample_size)
        }
        Command::CaseStudy { aggregate, methods } => {
            let m = methods_arg(methods)?;
            let agg = aggregate
                .as_ref()
                .map(|path| {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        CliError::Input(format!("cannot read {}: {e}", path.display()))
                    })?;
                    eqps::data::AggregateSummary::from_json(&text)
                        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
                })
                .transpose()?;
            let p = finish_prepare(prepare::<CaseStudyConfig>(cli, |c| {
                if let Some(m) = m {
                    c.methods = m;
                }
                if agg.is_some() {
                    c.aggregate = agg;
                }
                if let Some(a) = &c.aggregate {
                    a.validate()?;
                }
                Ok(())
            })?)?;
            run_with(cli, name, p, commands::case_study_cmd)
        }
        Command::Plot { inputs, reference } => {
            if cli.print_config {
                println!("{{}}");
                return Ok(());
            }
            let p = Prepared {
                config: NoConfig,
                seed: cli.seed.unwrap_or(0),
                file_hash: None,
                json: b"{}\n".to_vec(),
            };
            run_with(cli, name, p, |_, out| {
                commands::plot_cmd(inputs, *reference, out)
            })
        }
    }
}

/// Placeholder config for commands that take none.
#[derive(Default, serde::Serialize, serde::Deserialize)]
struct NoConfig;

impl RunConfig for NoConfig {
    fn paper_preset(&mut self) {}
    fn seed_mut(&mut self) -> &mut u64 {
        unreachable!("plot has no seed")
    }
    fn check(&self) -> eqps::Result<()> {
        Ok(())
    }
}

fn execute(cli: &Cli) -> u8 {
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("eqps: {e}");
            e.exit_code() as u8
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the exit
/// status. Logging is left to the caller.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    ExitCode::from(execute(&cli))
}
