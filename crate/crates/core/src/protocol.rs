//! Client/server state machines, the message-accounted ledger, and the three
//! training arms: one-shot model exchange (MPCPA), iterative FedAvg, and
//! centralized references.
//!
//! Every model transfer is one ledger entry whose payload size is the
//! serialized artifact. A complete MPCPA run records exactly `3n` messages
//! (n denoiser uploads, n package downloads, n classifier uploads); a FedAvg
//! run records exactly `2n * iters`. No message kind can carry raw training
//! data.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    aggregate_average, aggregate_vote, label_accuracy, PredictionSet,
};
use crate::config::{AggregationMethod, ExperimentConfig};
use crate::data::{generate_mixture, partition, split, LabeledDataset};
use crate::diffusion::{
    denoiser_to_bytes, diffusion_train, sample, ConditionalDenoiser, NoiseSchedule, ScheduleSpec,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{self, accuracy, average_parameters, train_classifier, DenseNetwork};
use crate::seeds::{self, domain};

/// Party in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorId {
    Server,
    Client(usize),
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Server => write!(f, "server"),
            ActorId::Client(k) => write!(f, "client:{k}"),
        }
    }
}

/// Model-bearing message kinds; raw-data transfers do not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    DdpmUpload,
    DdpmPackage,
    ClassifierUpload,
    FedAvgBroadcast,
    FedAvgUpdate,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::DdpmUpload => "ddpm_upload",
            MessageKind::DdpmPackage => "ddpm_package",
            MessageKind::ClassifierUpload => "classifier_upload",
            MessageKind::FedAvgBroadcast => "fedavg_broadcast",
            MessageKind::FedAvgUpdate => "fedavg_update",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub sender: ActorId,
    pub receiver: ActorId,
    pub kind: MessageKind,
    pub payload_bytes: usize,
    pub round: usize,
}

/// Append-only record of every model transfer in a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    messages: Vec<Message>,
}

/// Counts by kind plus totals, consistent with the message list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub ddpm_upload: usize,
    pub ddpm_package: usize,
    pub classifier_upload: usize,
    pub fedavg_broadcast: usize,
    pub fedavg_update: usize,
    pub total: usize,
    pub total_bytes: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, message: Message) -> Result<()> {
        if message.sender == message.receiver {
            return Err(Error::InvalidInput(
                "message sender and receiver must differ".into(),
            ));
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn total(&self) -> usize {
        self.messages.len()
    }

    pub fn summary(&self) -> LedgerSummary {
        let mut s = LedgerSummary {
            ddpm_upload: 0,
            ddpm_package: 0,
            classifier_upload: 0,
            fedavg_broadcast: 0,
            fedavg_update: 0,
            total: self.messages.len(),
            total_bytes: 0,
        };
        for m in &self.messages {
            match m.kind {
                MessageKind::DdpmUpload => s.ddpm_upload += 1,
                MessageKind::DdpmPackage => s.ddpm_package += 1,
                MessageKind::ClassifierUpload => s.classifier_upload += 1,
                MessageKind::FedAvgBroadcast => s.fedavg_broadcast += 1,
                MessageKind::FedAvgUpdate => s.fedavg_update += 1,
            }
            s.total_bytes += m.payload_bytes as u64;
        }
        s
    }

    /// Line-delimited text: `sender receiver kind bytes round`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                m.sender,
                m.receiver,
                m.kind.as_str(),
                m.payload_bytes,
                m.round
            ));
        }
        out
    }
}

/// Server phase; transitions are monotone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerPhase {
    CollectingDdpm,
    Distributing,
    CollectingClassifiers,
    Done,
}

/// Central server: stores received models, enforces phase order.
#[derive(Debug, Clone)]
pub struct ServerState {
    denoisers: Vec<Option<ConditionalDenoiser>>,
    classifiers: Vec<Option<DenseNetwork>>,
    phase: ServerPhase,
}

impl ServerState {
    pub fn new(n_clients: usize) -> Self {
        Self {
            denoisers: vec![None; n_clients],
            classifiers: vec![None; n_clients],
            phase: ServerPhase::CollectingDdpm,
        }
    }

    pub fn phase(&self) -> ServerPhase {
        self.phase
    }

    pub fn receive_denoiser(&mut self, client: usize, denoiser: ConditionalDenoiser) -> Result<()> {
        if self.phase != ServerPhase::CollectingDdpm {
            return Err(Error::InvalidInput(
                "denoiser received outside the collection phase".into(),
            ));
        }
        if self.denoisers[client].is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate denoiser from client {client}"
            )));
        }
        self.denoisers[client] = Some(denoiser);
        Ok(())
    }

    /// Enters the distribution phase; requires all denoisers present.
    pub fn begin_distribution(&mut self) -> Result<()> {
        if self.phase != ServerPhase::CollectingDdpm {
            return Err(Error::InvalidInput("distribution already begun".into()));
        }
        if self.denoisers.iter().any(|d| d.is_none()) {
            return Err(Error::InvalidInput(
                "cannot distribute before all denoisers arrive".into(),
            ));
        }
        self.phase = ServerPhase::Distributing;
        Ok(())
    }

    /// The package for client k: every denoiser except k's own.
    pub fn package_for(&self, client: usize) -> Result<Vec<(usize, &ConditionalDenoiser)>> {
        if self.phase != ServerPhase::Distributing {
            return Err(Error::InvalidInput(
                "packages are only assembled in the distribution phase".into(),
            ));
        }
        Ok(self
            .denoisers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != client)
            .map(|(i, d)| (i, d.as_ref().expect("checked by begin_distribution")))
            .collect())
    }

    pub fn receive_classifier(&mut self, client: usize, classifier: DenseNetwork) -> Result<()> {
        match self.phase {
            ServerPhase::Distributing => self.phase = ServerPhase::CollectingClassifiers,
            ServerPhase::CollectingClassifiers => {}
            _ => {
                return Err(Error::InvalidInput(
                    "classifier received outside the collection phase".into(),
                ))
            }
        }
        if self.classifiers[client].is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate classifier from client {client}"
            )));
        }
        self.classifiers[client] = Some(classifier);
        Ok(())
    }

    pub fn finish(&mut self) -> Result<()> {
        if self.phase != ServerPhase::CollectingClassifiers
            || self.classifiers.iter().any(|c| c.is_none())
        {
            return Err(Error::InvalidInput(
                "cannot finish before all classifiers arrive".into(),
            ));
        }
        self.phase = ServerPhase::Done;
        Ok(())
    }

    pub fn classifiers(&self) -> Result<Vec<&DenseNetwork>> {
        self.classifiers
            .iter()
            .map(|c| {
                c.as_ref()
                    .ok_or_else(|| Error::InvalidInput("missing classifier".into()))
            })
            .collect()
    }
}

/// One client's view at the end of a run.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Local real shard.
    pub data: LabeledDataset,
    /// Locally trained denoiser.
    pub denoiser: ConditionalDenoiser,
    /// Source ids of the package received from the server (never `id`).
    pub package_sources: Vec<usize>,
    /// Generated sets tagged by source client.
    pub synthetic: Vec<(usize, LabeledDataset)>,
    /// Real-plus-synthetic training set for the classifier.
    pub combined: LabeledDataset,
    pub classifier: DenseNetwork,
}

/// Validation/test accuracy pair for one model or ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub validation: f64,
    pub test: f64,
}

/// Client shards plus the held-out evaluation splits shared by every arm.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub shards: Vec<LabeledDataset>,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
}

impl DataBundle {
    /// Pool, split, and partition exactly as dictated by the config; every
    /// arm built from the same config sees identical data.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = generate_mixture(&cfg.mixture, cfg.total_count, cfg.seed)?;
        let (train, validation, test) = split(
            &pool,
            (cfg.split.train, cfg.split.val, cfg.split.test),
            cfg.seed,
        )?;
        let shards = partition(&train, &cfg.partition_spec()?, cfg.seed)?;
        Ok(Self {
            shards,
            validation,
            test,
        })
    }
}

/// Data plus per-client denoisers; the reusable front half of every arm
/// that consumes generated samples.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub bundle: DataBundle,
    pub denoisers: Vec<ConditionalDenoiser>,
    pub schedule: NoiseSchedule,
    pub schedule_spec: ScheduleSpec,
}

/// Who the generated samples are for; keeps generation streams disjoint.
#[derive(Debug, Clone, Copy)]
pub enum Consumer {
    Client(usize),
    Central,
    Audit,
}

impl Consumer {
    fn tag(self) -> u64 {
        match self {
            Consumer::Client(k) => k as u64,
            Consumer::Central => domain::CONSUMER_CENTRAL,
            Consumer::Audit => domain::CONSUMER_AUDIT,
        }
    }
}

impl Pipeline {
    /// Trains one denoiser per client shard, in parallel when enabled.
    /// Deterministic end-to-end: client k's seed depends only on
    /// `(cfg.seed, k)`.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let bundle = DataBundle::build(cfg)?;
        Self::from_bundle(cfg, bundle)
    }

    pub fn from_bundle(cfg: &ExperimentConfig, bundle: DataBundle) -> Result<Self> {
        if bundle.shards.len() != cfg.n_clients {
            return Err(Error::InvalidConfig(format!(
                "bundle has {} shards for {} clients",
                bundle.shards.len(),
                cfg.n_clients
            )));
        }
        if let Some(k) = bundle.shards.iter().position(|s| s.is_empty()) {
            return Err(Error::InvalidConfig(format!("client {k} has no data")));
        }
        let results = exec::map_indexed(cfg.n_clients, |k| {
            let dcfg = cfg.diffusion_config(
                bundle.shards[k].len(),
                seeds::derive(cfg.seed, &[domain::DIFFUSION, k as u64]),
            );
            diffusion_train(&bundle.shards[k], &dcfg)
        });
        let mut denoisers = Vec::with_capacity(cfg.n_clients);
        for r in results {
            denoisers.push(r?.0);
        }
        let schedule_spec = ScheduleSpec {
            t_steps: cfg.diffusion.t_steps,
            beta_min: cfg.diffusion.beta_min,
            beta_max: cfg.diffusion.beta_max,
        };
        Ok(Self {
            bundle,
            denoisers,
            schedule: schedule_spec.schedule()?,
            schedule_spec,
        })
    }

    /// `gen_count` samples per class from one source denoiser, labeled by
    /// the conditioning class. The stream is keyed by (source, class,
    /// consumer) so distinct consumers draw independent sets while re-runs
    /// are bitwise reproducible.
    pub fn generate_from(
        &self,
        cfg: &ExperimentConfig,
        source: usize,
        consumer: Consumer,
        gen_count: usize,
    ) -> Result<LabeledDataset> {
        let denoiser = &self.denoisers[source];
        let mut points = Vec::with_capacity(gen_count * cfg.num_classes());
        let mut labels = Vec::with_capacity(gen_count * cfg.num_classes());
        for class in 0..cfg.num_classes() {
            let seed = seeds::derive(
                cfg.seed,
                &[
                    domain::GENERATION,
                    source as u64,
                    class as u64,
                    consumer.tag(),
                ],
            );
            for p in sample(denoiser, &self.schedule, class, gen_count, seed)? {
                points.push(p);
                labels.push(class);
            }
        }
        LabeledDataset::new(points, labels, cfg.data_dim(), cfg.num_classes())
    }

    /// Generated sets from every source except `exclude`, tagged by source.
    fn package_generation(
        &self,
        cfg: &ExperimentConfig,
        exclude: usize,
        consumer: Consumer,
    ) -> Result<Vec<(usize, LabeledDataset)>> {
        let mut out = Vec::new();
        if cfg.gen_count == 0 {
            return Ok(out);
        }
        for source in 0..cfg.n_clients {
            if source == exclude {
                continue;
            }
            out.push((source, self.generate_from(cfg, source, consumer, cfg.gen_count)?));
        }
        Ok(out)
    }

    fn denoiser_payload(&self, source: usize) -> usize {
        denoiser_to_bytes(&self.denoisers[source], &self.schedule_spec).len()
    }
}

fn split_accuracy(net: &DenseNetwork, bundle: &DataBundle) -> Result<SplitAccuracy> {
    Ok(SplitAccuracy {
        validation: accuracy(net, &bundle.validation)?,
        test: accuracy(net, &bundle.test)?,
    })
}

/// Classifiers combined by the configured prediction-aggregation method.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub classifiers: Vec<DenseNetwork>,
    pub method: AggregationMethod,
}

impl EnsembleModel {
    pub fn predict(&self, data: &LabeledDataset) -> Result<Vec<usize>> {
        let refs: Vec<&DenseNetwork> = self.classifiers.iter().collect();
        let preds = PredictionSet::from_classifiers(&refs, data)?;
        match &self.method {
            AggregationMethod::Average { weights } => {
                Ok(aggregate_average(&preds, weights.as_deref())?.labels)
            }
            AggregationMethod::Vote(mode) => aggregate_vote(&preds, mode),
        }
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        label_accuracy(&self.predict(data)?, data)
    }

    pub fn split_accuracy(&self, bundle: &DataBundle) -> Result<SplitAccuracy> {
        Ok(SplitAccuracy {
            validation: self.accuracy(&bundle.validation)?,
            test: self.accuracy(&bundle.test)?,
        })
    }
}

/// Outcome of a one-shot exchange run.
#[derive(Debug, Clone)]
pub struct MpcpaRun {
    pub clients: Vec<ClientState>,
    pub server: ServerState,
    pub ledger: Ledger,
    pub ensemble: EnsembleModel,
    pub per_client_accuracy: Vec<SplitAccuracy>,
    pub ensemble_accuracy: SplitAccuracy,
}

/// Executes the full one-shot protocol on a freshly built pipeline.
pub fn run_mpcpa(cfg: &ExperimentConfig) -> Result<MpcpaRun> {
    run_mpcpa_with(&Pipeline::build(cfg)?, cfg)
}

/// As [`run_mpcpa`], reusing an already-trained pipeline.
pub fn run_mpcpa_with(pipeline: &Pipeline, cfg: &ExperimentConfig) -> Result<MpcpaRun> {
    if let Some(k) = pipeline.bundle.shards.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidConfig(format!("client {k} has no data")));
    }
    let n = cfg.n_clients;
    let mut ledger = Ledger::new();
    let mut server = ServerState::new(n);

    // Stage 1: every client uploads its denoiser.
    for k in 0..n {
        ledger.record(Message {
            sender: ActorId::Client(k),
            receiver: ActorId::Server,
            kind: MessageKind::DdpmUpload,
            payload_bytes: pipeline.denoiser_payload(k),
            round: 0,
        })?;
        server.receive_denoiser(k, pipeline.denoisers[k].clone())?;
    }

    // Stage 2: the server sends each client the package of the others.
    server.begin_distribution()?;
    let mut package_sources: Vec<Vec<usize>> = Vec::with_capacity(n);
    for k in 0..n {
        let package = server.package_for(k)?;
        debug_assert!(package.iter().all(|(src, _)| *src != k));
        let bytes: usize = package
            .iter()
            .map(|(src, _)| pipeline.denoiser_payload(*src))
            .sum();
        ledger.record(Message {
            sender: ActorId::Server,
            receiver: ActorId::Client(k),
            kind: MessageKind::DdpmPackage,
            payload_bytes: bytes,
            round: 0,
        })?;
        package_sources.push(package.into_iter().map(|(src, _)| src).collect());
    }

    // Stage 3: clients generate, train classifiers, and upload them.
    // Client phases are independent; run them in parallel.
    let client_results = exec::map_indexed(n, |k| -> Result<ClientState> {
        let synthetic = pipeline.package_generation(cfg, k, Consumer::Client(k))?;
        let mut parts: Vec<&LabeledDataset> = vec![&pipeline.bundle.shards[k]];
        parts.extend(synthetic.iter().map(|(_, d)| d));
        let combined = LabeledDataset::concat(&parts)?;
        let ccfg = cfg.classifier_config(seeds::derive(cfg.seed, &[domain::CLASSIFIER, k as u64]));
        let (classifier, _) = train_classifier(&combined, &cfg.classifier.hidden_dims, &ccfg)?;
        Ok(ClientState {
            id: k,
            data: pipeline.bundle.shards[k].clone(),
            denoiser: pipeline.denoisers[k].clone(),
            package_sources: package_sources[k].clone(),
            synthetic,
            combined,
            classifier,
        })
    });
    let mut clients = Vec::with_capacity(n);
    for r in client_results {
        clients.push(r?);
    }

    for client in &clients {
        ledger.record(Message {
            sender: ActorId::Client(client.id),
            receiver: ActorId::Server,
            kind: MessageKind::ClassifierUpload,
            payload_bytes: client.classifier.to_bytes().len(),
            round: 0,
        })?;
        server.receive_classifier(client.id, client.classifier.clone())?;
    }
    server.finish()?;

    let ensemble = EnsembleModel {
        classifiers: clients.iter().map(|c| c.classifier.clone()).collect(),
        method: cfg.aggregation_mode()?,
    };
    let per_client_accuracy = clients
        .iter()
        .map(|c| split_accuracy(&c.classifier, &pipeline.bundle))
        .collect::<Result<Vec<_>>>()?;
    let ensemble_accuracy = ensemble.split_accuracy(&pipeline.bundle)?;

    Ok(MpcpaRun {
        clients,
        server,
        ledger,
        ensemble,
        per_client_accuracy,
        ensemble_accuracy,
    })
}

/// Outcome of an iterative FedAvg run.
#[derive(Debug, Clone)]
pub struct FedAvgRun {
    pub global: DenseNetwork,
    pub ledger: Ledger,
    pub accuracy: SplitAccuracy,
}

/// Iterative parameter averaging over the same data bundle.
///
/// Per round: the server broadcasts the global classifier (n messages), each
/// client resumes training on its shard for `local_epochs` epochs and uploads
/// its parameters (n messages), and the server replaces the global model with
/// the mean — uniform by default, shard-size weighted behind the config flag.
pub fn run_fedavg(cfg: &ExperimentConfig) -> Result<FedAvgRun> {
    run_fedavg_with(DataBundle::build(cfg)?, cfg)
}

pub fn run_fedavg_with(bundle: DataBundle, cfg: &ExperimentConfig) -> Result<FedAvgRun> {
    if let Some(k) = bundle.shards.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidConfig(format!("client {k} has no data")));
    }
    let n = cfg.n_clients;
    let mut ledger = Ledger::new();

    let mut dims = Vec::with_capacity(cfg.classifier.hidden_dims.len() + 2);
    dims.push(cfg.data_dim());
    dims.extend_from_slice(&cfg.classifier.hidden_dims);
    dims.push(cfg.num_classes());
    let mut global = DenseNetwork::init(&dims, seeds::derive(cfg.seed, &[domain::FEDAVG]))?;

    let weights: Option<Vec<f64>> = if cfg.fedavg.weighted {
        let total: usize = bundle.shards.iter().map(|s| s.len()).sum();
        Some(
            bundle
                .shards
                .iter()
                .map(|s| s.len() as f64 / total as f64)
                .collect(),
        )
    } else {
        None
    };

    for round in 0..cfg.fedavg.iters {
        let payload = global.to_bytes().len();
        for k in 0..n {
            ledger.record(Message {
                sender: ActorId::Server,
                receiver: ActorId::Client(k),
                kind: MessageKind::FedAvgBroadcast,
                payload_bytes: payload,
                round,
            })?;
        }

        let local_results = exec::map_indexed(n, |k| -> Result<DenseNetwork> {
            let mut local = global.clone();
            let ccfg = cfg.classifier_config(seeds::derive(
                cfg.seed,
                &[domain::FEDAVG, round as u64, k as u64],
            ));
            nn::train_in_place(&mut local, &bundle.shards[k], &ccfg, cfg.fedavg.local_epochs)?;
            Ok(local)
        });
        let mut locals = Vec::with_capacity(n);
        for r in local_results {
            locals.push(r?);
        }

        for (k, local) in locals.iter().enumerate() {
            ledger.record(Message {
                sender: ActorId::Client(k),
                receiver: ActorId::Server,
                kind: MessageKind::FedAvgUpdate,
                payload_bytes: local.to_bytes().len(),
                round,
            })?;
        }
        global = average_parameters(&locals, weights.as_deref())?;
    }

    let acc = split_accuracy(&global, &bundle)?;
    Ok(FedAvgRun {
        global,
        ledger,
        accuracy: acc,
    })
}

/// Training-set choice for a centralized reference run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentralSource {
    /// Pool of every client shard.
    AllOriginal,
    /// Pool of generated data from every client's denoiser.
    AllGenerated,
    /// One client's real shard only.
    SingleClient(usize),
    /// One client's real shard plus the other clients' generated data —
    /// exactly the training set of that client in the one-shot protocol.
    ClientPlusGenerated(usize),
}

impl fmt::Display for CentralSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CentralSource::AllOriginal => write!(f, "all_original"),
            CentralSource::AllGenerated => write!(f, "all_generated"),
            CentralSource::SingleClient(k) => write!(f, "single_client:{k}"),
            CentralSource::ClientPlusGenerated(k) => write!(f, "client_plus_generated:{k}"),
        }
    }
}

/// Outcome of a centralized reference run; no ledger, nothing is transferred.
#[derive(Debug, Clone)]
pub struct CentralizedRun {
    pub classifier: DenseNetwork,
    pub accuracy: SplitAccuracy,
    pub train_size: usize,
}

/// Trains one classifier on the pooled requested source.
///
/// Sources involving generated data train the same per-client denoisers the
/// one-shot protocol would; `SingleClient(k)` and `ClientPlusGenerated(k)`
/// reuse client k's classifier seed, so they reproduce that client's
/// protocol classifier bit for bit under a shared config.
pub fn run_centralized(cfg: &ExperimentConfig, source: CentralSource) -> Result<CentralizedRun> {
    match source {
        CentralSource::AllOriginal | CentralSource::SingleClient(_) => {
            let bundle = DataBundle::build(cfg)?;
            run_centralized_from_bundle(&bundle, None, cfg, source)
        }
        _ => {
            let pipeline = Pipeline::build(cfg)?;
            run_centralized_with(&pipeline, cfg, source)
        }
    }
}

/// As [`run_centralized`], reusing a trained pipeline.
pub fn run_centralized_with(
    pipeline: &Pipeline,
    cfg: &ExperimentConfig,
    source: CentralSource,
) -> Result<CentralizedRun> {
    run_centralized_from_bundle(&pipeline.bundle, Some(pipeline), cfg, source)
}

fn run_centralized_from_bundle(
    bundle: &DataBundle,
    pipeline: Option<&Pipeline>,
    cfg: &ExperimentConfig,
    source: CentralSource,
) -> Result<CentralizedRun> {
    let check_client = |k: usize| -> Result<()> {
        if k >= cfg.n_clients {
            return Err(Error::InvalidInput(format!(
                "client {k} out of range for {} clients",
                cfg.n_clients
            )));
        }
        Ok(())
    };
    let need_pipeline = || -> Result<&Pipeline> {
        pipeline.ok_or_else(|| {
            Error::InvalidInput("generated sources need a trained pipeline".into())
        })
    };

    let (train_set, seed_tags): (LabeledDataset, Vec<u64>) = match source {
        CentralSource::AllOriginal => {
            let parts: Vec<&LabeledDataset> = bundle.shards.iter().collect();
            (
                LabeledDataset::concat(&parts)?,
                vec![domain::CLASSIFIER, domain::CONSUMER_CENTRAL, 0],
            )
        }
        CentralSource::AllGenerated => {
            let p = need_pipeline()?;
            if cfg.gen_count == 0 {
                return Err(Error::InvalidConfig(
                    "all_generated needs gen_count >= 1".into(),
                ));
            }
            let sets = (0..cfg.n_clients)
                .map(|src| p.generate_from(cfg, src, Consumer::Central, cfg.gen_count))
                .collect::<Result<Vec<_>>>()?;
            let parts: Vec<&LabeledDataset> = sets.iter().collect();
            (
                LabeledDataset::concat(&parts)?,
                vec![domain::CLASSIFIER, domain::CONSUMER_CENTRAL, 1],
            )
        }
        CentralSource::SingleClient(k) => {
            check_client(k)?;
            (
                bundle.shards[k].clone(),
                vec![domain::CLASSIFIER, k as u64],
            )
        }
        CentralSource::ClientPlusGenerated(k) => {
            check_client(k)?;
            let p = need_pipeline()?;
            let synthetic = p.package_generation(cfg, k, Consumer::Client(k))?;
            let mut parts: Vec<&LabeledDataset> = vec![&bundle.shards[k]];
            parts.extend(synthetic.iter().map(|(_, d)| d));
            (
                LabeledDataset::concat(&parts)?,
                vec![domain::CLASSIFIER, k as u64],
            )
        }
    };

    let ccfg = cfg.classifier_config(seeds::derive(cfg.seed, &seed_tags));
    let (classifier, _) = train_classifier(&train_set, &cfg.classifier.hidden_dims, &ccfg)?;
    let acc = split_accuracy(&classifier, bundle)?;
    Ok(CentralizedRun {
        classifier,
        accuracy: acc,
        train_size: train_set.len(),
    })
}
