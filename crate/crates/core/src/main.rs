use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bicdo::config::{ExternalSpec, RunConfig, TrainerSpec};
use bicdo::manifest::DatasetManifest;
use bicdo::orchestrator::{self, expand_distribution, store, RunError, RunHistory};
use bicdo::report::{self, grid_oracle};
use bicdo::scenarios;

const USAGE_ERROR: u8 = 64;

#[derive(Parser)]
#[command(name = "bicdo", version, about = "Per-class data-quantity optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainerKind {
    Sim,
    Micro,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Sim,
    Offset,
    Saturating,
    TwoClass,
    Oracle2,
    Oracle3,
    Micro,
}

impl Scenario {
    fn config(self) -> RunConfig {
        match self {
            Scenario::Sim => scenarios::default_sim(),
            Scenario::Offset => scenarios::offset_sim(),
            Scenario::Saturating => scenarios::saturating_sim(),
            Scenario::TwoClass => scenarios::two_class_reference(),
            Scenario::Oracle2 => scenarios::two_class_oracle(),
            Scenario::Oracle3 => scenarios::three_class_oracle(),
            Scenario::Micro => scenarios::default_micro(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Start a new run.
    Run {
        /// JSON run configuration.
        #[arg(long, conflicts_with = "scenario")]
        config: Option<PathBuf>,
        /// Built-in configuration.
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Output directory; must not hold a run already.
        #[arg(long)]
        out: PathBuf,
        /// Manifest table (CSV) or directory tree.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Picks a built-in configuration when neither --config nor --scenario is given.
        #[arg(long, value_enum)]
        trainer: Option<TrainerKind>,
        /// External trainer command, split on whitespace. `{bundle}` is replaced
        /// by the bundle directory; otherwise the directory is appended.
        #[arg(long)]
        trainer_cmd: Option<String>,
        #[arg(long)]
        timeout_secs: Option<f64>,
    },
    /// Continue an interrupted or aborted run.
    Resume {
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale the final factors up to a larger dataset.
    Expand {
        #[arg(long)]
        out: PathBuf,
        /// Anchor class; defaults to the class with the largest factor.
        #[arg(long)]
        anchor: Option<String>,
        /// Larger manifest; defaults to the run's own manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print a run summary and write plot tables.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Where to write the tables; defaults to the run directory.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Compare a simulator run against the exhaustive grid optimum.
    Oracle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Print a built-in configuration as JSON.
    Scenario { name: Scenario },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(e) => e.exit_code() as u8,
            CliError::Report(report::ReportError::Io(_)) => 1,
            CliError::Report(_) | CliError::Usage(_) => USAGE_ERROR,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { config, scenario, out, manifest, seed, iterations, trainer, trainer_cmd, timeout_secs } => {
            let mut cfg = match (config, scenario, trainer) {
                (Some(path), _, _) => RunConfig::load(&path).map_err(RunError::from)?,
                (None, Some(s), _) => s.config(),
                (None, None, Some(TrainerKind::Micro)) => scenarios::default_micro(),
                (None, None, Some(TrainerKind::Sim)) => scenarios::default_sim(),
                _ => return Err(CliError::Usage("pass --config, --scenario or --trainer sim|micro".into())),
            };
            if let Some(cmd) = trainer_cmd {
                let command: Vec<String> = cmd.split_whitespace().map(String::from).collect();
                cfg.trainer =
                    TrainerSpec::External(ExternalSpec { command, timeout_secs: timeout_secs.unwrap_or(3600.0) });
            } else if matches!(trainer, Some(TrainerKind::External)) && cfg.trainer.kind() != "external" {
                return Err(CliError::Usage("--trainer external needs --trainer-cmd".into()));
            }
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            cfg.out_dir = Some(out);
            finish(orchestrator::run(&cfg))
        }
        Command::Resume { out } => finish(orchestrator::resume(&out)),
        Command::Expand { out, anchor, manifest } => {
            let history = orchestrator::load_history(&out)?;
            let factors = final_factors(&history)?;
            let target = match manifest {
                Some(path) => DatasetManifest::ingest(&path).map_err(|e| CliError::Usage(e.to_string()))?,
                None => run_manifest(&out)?,
            };
            let availability: Vec<u64> = history
                .classes
                .iter()
                .map(|c| {
                    target
                        .class_id(c)
                        .map(|i| target.availability()[i])
                        .ok_or_else(|| CliError::Usage(format!("class {c} missing from the target manifest")))
                })
                .collect::<Result<_, _>>()?;
            let anchor = match anchor {
                Some(name) => history
                    .classes
                    .iter()
                    .position(|c| *c == name)
                    .ok_or_else(|| CliError::Usage(format!("unknown anchor class {name}")))?,
                None => argmax(&factors),
            };
            let e = expand_distribution(&factors, &availability, anchor).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("class,factor,availability,quota");
            for (c, class) in history.classes.iter().enumerate() {
                println!("{class},{},{},{}", factors[c], availability[c], e.quotas[c]);
            }
            println!("total,,{},{}", availability.iter().sum::<u64>(), e.total());
            Ok(0)
        }
        Command::Report { out, plot_dir } => {
            let history = orchestrator::load_history(&out)?;
            let summary = report::summarize(&history)?;
            report::emit_plot_data(&summary, plot_dir.as_deref().unwrap_or(&out))?;
            let status = history.status.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_else(|| "running".into());
            println!("status {status}");
            println!("iterations {}", history.records.len());
            println!("mean objective {:.6}", summary.final_mean);
            println!("objective variance {:.6e}", summary.final_variance);
            println!("samples {}", summary.total_samples);
            println!("class,factor,normalized,quota,objective");
            let last = history.last().expect("summarize checked");
            for (c, class) in summary.classes.iter().enumerate() {
                println!(
                    "{class},{:.6},{:.6},{},{:.6}",
                    summary.final_factors[c], summary.final_normalized[c], summary.final_quotas[c], last.class_means[c]
                );
            }
            Ok(0)
        }
        Command::Oracle { out, step } => {
            let history = orchestrator::load_history(&out)?;
            let TrainerSpec::Sim(sim) = &history.config.trainer else {
                return Err(CliError::Usage("the oracle needs a simulator run".into()));
            };
            let curves: Vec<_> = history
                .classes
                .iter()
                .map(|c| {
                    sim.curves
                        .iter()
                        .find(|n| n.class == *c)
                        .map(|n| n.curve)
                        .ok_or_else(|| CliError::Usage(format!("no curve for class {c}")))
                })
                .collect::<Result<_, _>>()?;
            let quotas = history.final_quotas().ok_or(report::ReportError::EmptyHistory)?.to_vec();
            let budget = quotas.iter().sum();
            let r = grid_oracle(&curves, budget, step)?.with_bicdo(&curves, &quotas);
            println!("budget {budget} grid points {}", r.evaluated);
            println!("class,oracle,bicdo");
            for (c, class) in history.classes.iter().enumerate() {
                println!("{class},{},{}", r.best_allocation[c], quotas[c]);
            }
            println!("variance,{:.6e},{:.6e}", r.best_variance, r.bicdo_variance.unwrap_or(f64::NAN));
            println!("max share gap {:.4}", r.max_share_gap().unwrap_or(f64::NAN));
            Ok(0)
        }
        Command::Scenario { name } => {
            let json = serde_json::to_string_pretty(&name.config()).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{json}");
            Ok(0)
        }
    }
}

fn finish(result: Result<RunHistory, RunError>) -> Result<u8, CliError> {
    let history = result?;
    let status = history.status.expect("finished runs carry a status");
    println!("{} after {} iterations", format!("{status:?}").to_lowercase(), history.records.len());
    if let Some(f) = history.final_factors() {
        for (class, v) in history.classes.iter().zip(f) {
            println!("{class} {v:.6}");
        }
    }
    Ok(status.exit_code() as u8)
}

fn final_factors(history: &RunHistory) -> Result<Vec<f64>, CliError> {
    history.final_factors().map(<[f64]>::to_vec).ok_or_else(|| CliError::Usage("run has no iterations".into()))
}

fn run_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    let path = dir.join(store::MANIFEST_COPY);
    DatasetManifest::ingest(&path).map_err(|e| CliError::Usage(e.to_string()))
}

fn argmax(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}
