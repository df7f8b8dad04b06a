//! `mpcpa` — config-driven experiment runner.
//!
//! Subcommands: `run` (execute one arm and persist a run directory),
//! `report` (tabulate persisted runs side by side), `audit` (privacy audits,
//! either self-contained or against a previous run's artifacts).
//!
//! Exit code 0 on success; on failure a single machine-parsable line
//! `error[<class>]: <message>` goes to stderr.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpcpa_core::config::ExperimentConfig;
use mpcpa_core::experiment::{self, Arm, RunOutput};
use mpcpa_core::protocol::{DataBundle, Pipeline};

#[derive(Parser)]
#[command(name = "mpcpa", version, about = "Multi-party privacy-computing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Path to the experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory to persist the run into; must not already hold a report.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the worker pool (parallel builds only).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one experiment arm and persists report plus artifacts.
    Run {
        #[command(flatten)]
        common: CommonRunArgs,
        /// mpcpa | fedavg | centralized:<source> | ablation-grid |
        /// gen-count-sweep:<n,..> | audit
        #[arg(long)]
        arm: String,
    },
    /// Prints a comparison table over persisted run directories.
    Report {
        /// Run directories written by `run`.
        dirs: Vec<PathBuf>,
        /// Also export the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Privacy audits: memorization scan and membership inference.
    Audit {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Audit the artifacts of an existing run directory instead of
        /// training fresh ones from the config.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = err
                .downcast_ref::<mpcpa_core::Error>()
                .map(|e| e.class())
                .unwrap_or("internal");
            eprintln!("error[{class}]: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { common, arm } => {
            let arm: Arm = arm.parse::<Arm>().map_err(anyhow::Error::from)?;
            let cfg = load_config(&common)?;
            let mut output = experiment::execute(&cfg, &arm)?;
            persist_and_summarize(&common.out, &mut output)
        }
        Command::Report { dirs, csv } => report::run(&dirs, csv.as_deref()),
        Command::Audit { common, run_dir } => {
            let cfg = load_config(&common)?;
            match run_dir {
                None => {
                    let mut output = experiment::execute(&cfg, &Arm::Audit)?;
                    persist_and_summarize(&common.out, &mut output)
                }
                Some(dir) => {
                    let mut output = audit_existing_run(&dir)?;
                    persist_and_summarize(&common.out, &mut output)
                }
            }
        }
    }
}

fn load_config(common: &CommonRunArgs) -> anyhow::Result<ExperimentConfig> {
    if let Some(n) = common.threads {
        mpcpa_core::exec::configure_threads(n);
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Audits the artifacts persisted by a previous run, under that run's own
/// config (so the rebuilt data bundle matches what the models saw).
fn audit_existing_run(dir: &PathBuf) -> anyhow::Result<RunOutput> {
    let source_report = experiment::load_report(dir)?;
    let cfg = source_report.config.clone();
    cfg.validate()?;
    let (denoisers, classifiers) = experiment::load_artifacts(dir)?;
    if denoisers.is_empty() || classifiers.len() != cfg.n_clients {
        anyhow::bail!(mpcpa_core::Error::InvalidInput(format!(
            "{} lacks the denoiser/classifier artifacts required for an audit",
            dir.display()
        )));
    }
    let schedule_spec = denoisers[0].1;
    let bundle = DataBundle::build(&cfg)?;
    let pipeline = Pipeline {
        bundle,
        denoisers: denoisers.into_iter().map(|(d, _)| d).collect(),
        schedule: schedule_spec.schedule()?,
        schedule_spec,
    };
    let started = std::time::Instant::now();
    let audit = experiment::audit_pipeline(&cfg, &pipeline, &classifiers)?;

    let mut report = source_report;
    report.arm = format!("audit:{}", dir.display());
    report.audit = Some(audit);
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    report.artifacts.clear();
    Ok(RunOutput {
        report,
        artifacts: Default::default(),
    })
}

fn persist_and_summarize(out_dir: &PathBuf, output: &mut RunOutput) -> anyhow::Result<()> {
    experiment::persist(out_dir, output)?;
    println!("run: {}", output.report.arm);
    println!("out: {}", out_dir.display());
    for row in &output.report.rows {
        println!(
            "  {:<24} val {:.4}  test {:.4}",
            row.name, row.validation, row.test
        );
    }
    if let Some(ledger) = &output.report.ledger {
        println!(
            "  messages: {} total, {} bytes",
            ledger.total, ledger.total_bytes
        );
    }
    if let Some(audit) = &output.report.audit {
        for m in &audit.memorization {
            println!(
                "  memorization client{}: min {:.4}, {} flagged of {} (delta {})",
                m.client, m.global_min_distance, m.flag_count, m.generated_count, audit.delta
            );
        }
        for a in &audit.mia {
            println!(
                "  mia client{}: best accuracy {:.4} at tau {:.4} ({} per side)",
                a.client, a.best_accuracy, a.best_tau, a.attack_size
            );
        }
    }
    Ok(())
}
