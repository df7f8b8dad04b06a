//! Experiment arms, structured run reports, and on-disk persistence.
//!
//! An arm is one way of consuming a config: the one-shot protocol, FedAvg,
//! a centralized reference, the ablation grid, a generated-count sweep, or
//! the privacy audits. Every arm yields a [`RunReport`] that echoes the
//! config and is byte-identical across re-runs with the same seed (wall
//! clock aside).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::{memorization_scan, mia_loss_threshold};
use crate::config::ExperimentConfig;
use crate::data::LabeledDataset;
use crate::diffusion::{denoiser_from_bytes, denoiser_to_bytes, ConditionalDenoiser, ScheduleSpec};
use crate::error::{Error, Result};
use crate::nn::DenseNetwork;
use crate::protocol::{
    run_centralized_with, run_fedavg_with, run_mpcpa_with, CentralSource, DataBundle,
    EnsembleModel, Ledger, LedgerSummary, Pipeline, SplitAccuracy,
};
use crate::seeds::{self, domain};

/// What to run against a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arm {
    Mpcpa,
    FedAvg,
    Centralized(CentralSource),
    AblationGrid,
    GenCountSweep(Vec<usize>),
    Audit,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Mpcpa => write!(f, "mpcpa"),
            Arm::FedAvg => write!(f, "fedavg"),
            Arm::Centralized(src) => write!(f, "centralized:{src}"),
            Arm::AblationGrid => write!(f, "ablation-grid"),
            Arm::GenCountSweep(counts) => {
                write!(f, "gen-count-sweep:")?;
                for (i, c) in counts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
            Arm::Audit => write!(f, "audit"),
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("arm `{s}`: {msg}"));
        if let Some(rest) = s.strip_prefix("centralized:") {
            let source = match rest {
                "all_original" => CentralSource::AllOriginal,
                "all_generated" => CentralSource::AllGenerated,
                other => {
                    let parse_k = |prefix: &str| -> Result<usize> {
                        other[prefix.len()..]
                            .parse()
                            .map_err(|_| bad("client index must be an integer"))
                    };
                    if other.starts_with("single_client:") {
                        CentralSource::SingleClient(parse_k("single_client:")?)
                    } else if other.starts_with("client_plus_generated:") {
                        CentralSource::ClientPlusGenerated(parse_k("client_plus_generated:")?)
                    } else {
                        return Err(bad(
                            "source must be all_original | all_generated | \
                             single_client:<k> | client_plus_generated:<k>",
                        ));
                    }
                }
            };
            return Ok(Arm::Centralized(source));
        }
        if let Some(rest) = s.strip_prefix("gen-count-sweep:") {
            let counts = rest
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| bad("counts must be comma-separated integers"))
                })
                .collect::<Result<Vec<_>>>()?;
            if counts.is_empty() {
                return Err(bad("needs at least one count"));
            }
            return Ok(Arm::GenCountSweep(counts));
        }
        match s {
            "mpcpa" => Ok(Arm::Mpcpa),
            "fedavg" => Ok(Arm::FedAvg),
            "ablation-grid" => Ok(Arm::AblationGrid),
            "audit" => Ok(Arm::Audit),
            _ => Err(bad(
                "expected mpcpa | fedavg | centralized:<source> | ablation-grid | \
                 gen-count-sweep:<n,..> | audit",
            )),
        }
    }
}

/// One method row of a report: accuracies for a named model or ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub name: String,
    pub validation: f64,
    pub test: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
}

impl ArmRow {
    fn new(name: impl Into<String>, acc: SplitAccuracy, train_size: Option<usize>) -> Self {
        Self {
            name: name.into(),
            validation: acc.validation,
            test: acc.test,
            train_size,
        }
    }
}

/// Per-client memorization-scan summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationSummary {
    pub client: usize,
    pub generated_count: usize,
    pub global_min_distance: f64,
    pub flag_count: usize,
}

/// Per-client membership-inference summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSummary {
    pub client: usize,
    pub attack_size: usize,
    pub best_accuracy: f64,
    pub best_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub delta: f64,
    pub memorization: Vec<MemorizationSummary>,
    pub mia: Vec<MiaSummary>,
}

/// Everything one run reports; serialized as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub arm: String,
    pub rows: Vec<ArmRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger: Option<LedgerSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSummary>,
    /// Informative only; excluded from determinism guarantees.
    pub wall_clock_secs: f64,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

/// Model artifacts produced by a run, kept for persistence.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub denoisers: Vec<ConditionalDenoiser>,
    pub schedule_spec: Option<ScheduleSpec>,
    pub classifiers: Vec<DenseNetwork>,
    pub global_classifier: Option<DenseNetwork>,
    pub ledger: Option<Ledger>,
    pub prediction_table: Option<String>,
}

/// A completed run ready to persist.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: RunArtifacts,
}

/// Runs one arm against the config. Pure compute; writes nothing.
pub fn execute(cfg: &ExperimentConfig, arm: &Arm) -> Result<RunOutput> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let mut out = match arm {
        Arm::Mpcpa => execute_mpcpa(cfg)?,
        Arm::FedAvg => execute_fedavg(cfg)?,
        Arm::Centralized(source) => execute_centralized(cfg, *source)?,
        Arm::AblationGrid => execute_ablation(cfg)?,
        Arm::GenCountSweep(counts) => execute_sweep(cfg, counts)?,
        Arm::Audit => execute_audit(cfg)?,
    };
    out.report.arm = arm.to_string();
    out.report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(out)
}

fn blank_report(cfg: &ExperimentConfig) -> RunReport {
    RunReport {
        arm: String::new(),
        rows: Vec::new(),
        ledger: None,
        audit: None,
        wall_clock_secs: 0.0,
        artifacts: Vec::new(),
        config: cfg.clone(),
    }
}

fn client_rows(per_client: &[SplitAccuracy], clients: &[crate::protocol::ClientState]) -> Vec<ArmRow> {
    per_client
        .iter()
        .zip(clients)
        .map(|(acc, c)| ArmRow::new(format!("client{}", c.id), *acc, Some(c.combined.len())))
        .collect()
}

fn execute_mpcpa(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let pipeline = Pipeline::build(cfg)?;
    let run = run_mpcpa_with(&pipeline, cfg)?;

    let mut report = blank_report(cfg);
    report.rows = client_rows(&run.per_client_accuracy, &run.clients);
    report.rows.push(ArmRow::new("ensemble", run.ensemble_accuracy, None));
    report.ledger = Some(run.ledger.summary());

    // Prediction table over the test split, for external audit.
    let refs: Vec<&DenseNetwork> = run.ensemble.classifiers.iter().collect();
    let preds = crate::aggregate::PredictionSet::from_classifiers(&refs, &pipeline.bundle.test)?;
    let averaged = crate::aggregate::aggregate_average(&preds, None)?;
    let mut table = Vec::new();
    crate::aggregate::write_prediction_table(&mut table, &preds, &averaged)
        .map_err(|e| Error::io("prediction table", e))?;

    let artifacts = RunArtifacts {
        denoisers: pipeline.denoisers.clone(),
        schedule_spec: Some(pipeline.schedule_spec),
        classifiers: run.clients.iter().map(|c| c.classifier.clone()).collect(),
        global_classifier: None,
        ledger: Some(run.ledger),
        prediction_table: Some(String::from_utf8(table).expect("ascii table")),
    };
    Ok(RunOutput {
        report,
        artifacts,
    })
}

fn execute_fedavg(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let bundle = DataBundle::build(cfg)?;
    let run = run_fedavg_with(bundle, cfg)?;
    let mut report = blank_report(cfg);
    report.rows = vec![ArmRow::new("fedavg_global", run.accuracy, None)];
    report.ledger = Some(run.ledger.summary());
    let artifacts = RunArtifacts {
        global_classifier: Some(run.global),
        ledger: Some(run.ledger),
        ..Default::default()
    };
    Ok(RunOutput { report, artifacts })
}

fn execute_centralized(cfg: &ExperimentConfig, source: CentralSource) -> Result<RunOutput> {
    let needs_generation = matches!(
        source,
        CentralSource::AllGenerated | CentralSource::ClientPlusGenerated(_)
    );
    let (run, artifacts) = if needs_generation {
        let pipeline = Pipeline::build(cfg)?;
        let run = run_centralized_with(&pipeline, cfg, source)?;
        let artifacts = RunArtifacts {
            denoisers: pipeline.denoisers.clone(),
            schedule_spec: Some(pipeline.schedule_spec),
            classifiers: vec![run.classifier.clone()],
            ..Default::default()
        };
        (run, artifacts)
    } else {
        let run = crate::protocol::run_centralized(cfg, source)?;
        let artifacts = RunArtifacts {
            classifiers: vec![run.classifier.clone()],
            ..Default::default()
        };
        (run, artifacts)
    };
    let mut report = blank_report(cfg);
    report.rows = vec![ArmRow::new(
        source.to_string(),
        run.accuracy,
        Some(run.train_size),
    )];
    Ok(RunOutput { report, artifacts })
}

/// Full ablation row set under shared seeds: pooled baselines, per-client
/// original-only (A) and original-plus-generated (B) rows, and the two
/// prediction-aggregation rows.
fn execute_ablation(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let pipeline = Pipeline::build(cfg)?;
    let mut rows = Vec::new();

    let all_orig = run_centralized_with(&pipeline, cfg, CentralSource::AllOriginal)?;
    rows.push(ArmRow::new(
        "all_original",
        all_orig.accuracy,
        Some(all_orig.train_size),
    ));
    if cfg.gen_count > 0 {
        let all_gen = run_centralized_with(&pipeline, cfg, CentralSource::AllGenerated)?;
        rows.push(ArmRow::new(
            "all_generated",
            all_gen.accuracy,
            Some(all_gen.train_size),
        ));
    }

    let mut a_models = Vec::with_capacity(cfg.n_clients);
    let mut b_models = Vec::with_capacity(cfg.n_clients);
    for k in 0..cfg.n_clients {
        let a = run_centralized_with(&pipeline, cfg, CentralSource::SingleClient(k))?;
        rows.push(ArmRow::new(
            format!("A{}", k + 1),
            a.accuracy,
            Some(a.train_size),
        ));
        a_models.push(a.classifier);
        let b = run_centralized_with(&pipeline, cfg, CentralSource::ClientPlusGenerated(k))?;
        rows.push(ArmRow::new(
            format!("B{}", k + 1),
            b.accuracy,
            Some(b.train_size),
        ));
        b_models.push(b.classifier);
    }

    let method = cfg.aggregation_mode()?;
    let agg_a = EnsembleModel {
        classifiers: a_models,
        method: method.clone(),
    };
    rows.push(ArmRow::new(
        "aggregate_A",
        agg_a.split_accuracy(&pipeline.bundle)?,
        None,
    ));
    let agg_b = EnsembleModel {
        classifiers: b_models.clone(),
        method,
    };
    rows.push(ArmRow::new(
        "aggregate_B",
        agg_b.split_accuracy(&pipeline.bundle)?,
        None,
    ));

    let mut report = blank_report(cfg);
    report.rows = rows;
    let artifacts = RunArtifacts {
        denoisers: pipeline.denoisers.clone(),
        schedule_spec: Some(pipeline.schedule_spec),
        classifiers: b_models,
        ..Default::default()
    };
    Ok(RunOutput { report, artifacts })
}

/// Re-runs the B arms and their aggregation at each generated-data count.
fn execute_sweep(cfg: &ExperimentConfig, counts: &[usize]) -> Result<RunOutput> {
    let pipeline = Pipeline::build(cfg)?;
    let mut rows = Vec::new();
    for &count in counts {
        let mut sub = cfg.clone();
        sub.gen_count = count;
        let mut models = Vec::with_capacity(cfg.n_clients);
        for k in 0..cfg.n_clients {
            let b = run_centralized_with(&pipeline, &sub, CentralSource::ClientPlusGenerated(k))?;
            rows.push(ArmRow::new(
                format!("B{}[n={count}]", k + 1),
                b.accuracy,
                Some(b.train_size),
            ));
            models.push(b.classifier);
        }
        let ensemble = EnsembleModel {
            classifiers: models,
            method: cfg.aggregation_mode()?,
        };
        rows.push(ArmRow::new(
            format!("aggregate_B[n={count}]"),
            ensemble.split_accuracy(&pipeline.bundle)?,
            None,
        ));
    }
    let mut report = blank_report(cfg);
    report.rows = rows;
    let artifacts = RunArtifacts {
        denoisers: pipeline.denoisers.clone(),
        schedule_spec: Some(pipeline.schedule_spec),
        ..Default::default()
    };
    Ok(RunOutput { report, artifacts })
}

/// Runs the one-shot protocol, then audits its artifacts: a memorization
/// scan of each denoiser's generated set against that client's training
/// shard, and a loss-threshold membership attack on each classifier.
fn execute_audit(cfg: &ExperimentConfig) -> Result<RunOutput> {
    if cfg.gen_count == 0 {
        return Err(Error::InvalidConfig(
            "audit arm needs gen_count >= 1 to scan generated data".into(),
        ));
    }
    let pipeline = Pipeline::build(cfg)?;
    let run = run_mpcpa_with(&pipeline, cfg)?;
    let classifiers: Vec<DenseNetwork> =
        run.clients.iter().map(|c| c.classifier.clone()).collect();
    let audit = audit_pipeline(cfg, &pipeline, &classifiers)?;

    let mut report = blank_report(cfg);
    report.rows = client_rows(&run.per_client_accuracy, &run.clients);
    report.rows.push(ArmRow::new("ensemble", run.ensemble_accuracy, None));
    report.ledger = Some(run.ledger.summary());
    report.audit = Some(audit);
    let artifacts = RunArtifacts {
        denoisers: pipeline.denoisers.clone(),
        schedule_spec: Some(pipeline.schedule_spec),
        classifiers,
        ledger: Some(run.ledger),
        ..Default::default()
    };
    Ok(RunOutput { report, artifacts })
}

/// Audits trained artifacts against the config's data bundle.
pub fn audit_pipeline(
    cfg: &ExperimentConfig,
    pipeline: &Pipeline,
    classifiers: &[DenseNetwork],
) -> Result<AuditSummary> {
    let mut memorization = Vec::with_capacity(cfg.n_clients);
    for k in 0..cfg.n_clients {
        let generated =
            pipeline.generate_from(cfg, k, crate::protocol::Consumer::Audit, cfg.gen_count)?;
        let scan = memorization_scan(&generated, &pipeline.bundle.shards[k], cfg.audit.delta)?;
        memorization.push(MemorizationSummary {
            client: k,
            generated_count: generated.len(),
            global_min_distance: scan.global_min,
            flag_count: scan.flag_count,
        });
    }

    let mut mia = Vec::with_capacity(classifiers.len());
    for (k, model) in classifiers.iter().enumerate() {
        let shard = &pipeline.bundle.shards[k];
        let size = cfg
            .audit
            .mia_size
            .min(shard.len())
            .min(pipeline.bundle.test.len());
        if size == 0 {
            return Err(Error::InvalidConfig(
                "audit.mia_size exceeds available members or non-members".into(),
            ));
        }
        let members = seeded_subset(shard, size, seeds::derive(cfg.seed, &[domain::MIA, k as u64, 0]));
        let nonmembers = seeded_subset(
            &pipeline.bundle.test,
            size,
            seeds::derive(cfg.seed, &[domain::MIA, k as u64, 1]),
        );
        let report = mia_loss_threshold(model, &members, &nonmembers, None)?;
        mia.push(MiaSummary {
            client: k,
            attack_size: size,
            best_accuracy: report.best_accuracy,
            best_tau: report.best_tau,
        });
    }

    Ok(AuditSummary {
        delta: cfg.audit.delta,
        memorization,
        mia,
    })
}

fn seeded_subset(data: &LabeledDataset, size: usize, seed: u64) -> LabeledDataset {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(size);
    data.subset(&order)
}

const REPORT_FILE: &str = "report.json";
const CONFIG_FILE: &str = "config.toml";
const LEDGER_FILE: &str = "ledger.txt";

/// Persists a run into a fresh directory. The directory must not already
/// contain a report; artifacts are written first and `report.json` last, and
/// the directory is removed again if any write fails.
pub fn persist(dir: &Path, output: &mut RunOutput) -> Result<()> {
    if dir.join(REPORT_FILE).exists() {
        return Err(Error::InvalidInput(format!(
            "{} already holds a run report",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let result = persist_inner(dir, output);
    if result.is_err() {
        let _ = std::fs::remove_file(dir.join(REPORT_FILE));
    }
    result
}

fn persist_inner(dir: &Path, output: &mut RunOutput) -> Result<()> {
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    };

    let mut paths: Vec<String> = vec![CONFIG_FILE.into()];
    write(
        CONFIG_FILE,
        output.report.config.to_toml_string().as_bytes(),
    )?;

    if let Some(spec) = &output.artifacts.schedule_spec {
        for (k, d) in output.artifacts.denoisers.iter().enumerate() {
            let name = format!("denoiser_{k}.bin");
            write(&name, &denoiser_to_bytes(d, spec))?;
            paths.push(name);
        }
    }
    for (k, c) in output.artifacts.classifiers.iter().enumerate() {
        let name = format!("classifier_{k}.bin");
        write(&name, &c.to_bytes())?;
        paths.push(name);
    }
    if let Some(global) = &output.artifacts.global_classifier {
        write("global_classifier.bin", &global.to_bytes())?;
        paths.push("global_classifier.bin".into());
    }
    if let Some(ledger) = &output.artifacts.ledger {
        write(LEDGER_FILE, ledger.to_lines().as_bytes())?;
        paths.push(LEDGER_FILE.into());
    }
    if let Some(table) = &output.artifacts.prediction_table {
        write("predictions_test.txt", table.as_bytes())?;
        paths.push("predictions_test.txt".into());
    }

    paths.push(REPORT_FILE.into());
    output.report.artifacts = paths;
    let json = serde_json::to_string_pretty(&output.report)
        .map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))?;
    write(REPORT_FILE, json.as_bytes())
}

/// Loads a persisted report.
pub fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join(REPORT_FILE);
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::CorruptArtifact(format!("{}: {e}", path.display())))
}

/// Loads the denoisers and classifiers persisted in a run directory.
pub fn load_artifacts(dir: &Path) -> Result<(Vec<(ConditionalDenoiser, ScheduleSpec)>, Vec<DenseNetwork>)> {
    let report = load_report(dir)?;
    let mut denoisers = Vec::new();
    let mut classifiers = Vec::new();
    for name in &report.artifacts {
        let path: PathBuf = dir.join(name);
        if name.starts_with("denoiser_") {
            let bytes =
                std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            denoisers.push(denoiser_from_bytes(&bytes)?);
        } else if name.starts_with("classifier_") {
            let bytes =
                std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            classifiers.push(DenseNetwork::from_bytes(&bytes)?);
        }
    }
    Ok((denoisers, classifiers))
}
