//! Configuration-driven experiments: data loading, per-seed runs of any
//! method, ablation sweeps and report merging. Every output file is written
//! from in-order results, so output trees do not depend on thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bce_only, local_training, pooled_participant, unify_participants, MethodId};
use crate::client::{ClassifierLoss, Fusion, LambdaMode, TrainHyper};
use crate::data::{
    generate_synthetic, load_feature_csv, standardize, train_test_split, write_feature_file, HospitalDataset,
    HospitalFiles, HospitalSpec, ModalitySpec, SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fmt::float;
use crate::loss::LossSchedule;
use crate::metrics::{self, RunSummary, SummaryRow};
use crate::nn::Activation;
use crate::prototype::PrototypeWeighting;
use crate::seed::{derive, TAG_SPLIT};
use crate::server::{evaluate, run_training, Aggregation, ExtractorTemplate, GlobalTemplate, Participant, RoundPolicy, RoundRow, ServerState};
use crate::trace::{audit, Trace};
use crate::types::{ClassLabel, ModalityId};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Proximal coefficient used with `fed_prox_meta` when none is configured.
pub const DEFAULT_PROX_MU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityConfig {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub mixing_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HospitalConfig {
    pub id: usize,
    /// Modality names held by this hospital.
    pub modalities: Vec<String>,
    /// Synthetic class-0 / class-1 sample counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<[usize; 2]>,
    /// Feature file per modality name, for precomputed features.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub modalities: Vec<ModalityConfig>,
    pub hospitals: Vec<HospitalConfig>,
    pub latent_dim: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    /// Seed of the synthetic dataset itself; run seeds only drive splits,
    /// initialization and shuffles.
    pub data_seed: u64,
    /// Train on these modalities only; hospitals left with none are dropped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modality_subset: Option<Vec<String>>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        TopologyConfig {
            modalities: spec
                .modalities
                .iter()
                .map(|m| ModalityConfig { name: m.name.clone(), dim: m.observed_dim, mixing_seed: m.mixing_seed })
                .collect(),
            hospitals: spec
                .hospitals
                .iter()
                .enumerate()
                .map(|(h, hs)| HospitalConfig {
                    id: h + 1,
                    modalities: hs.modalities.iter().map(|&k| spec.modalities[k].name.clone()).collect(),
                    counts: Some(hs.counts),
                    files: BTreeMap::new(),
                })
                .collect(),
            latent_dim: spec.latent_dim,
            class_separation: spec.class_separation,
            noise_sigma: spec.noise_sigma,
            data_seed: 0,
            modality_subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub hidden_activation: Activation,
    pub embed_activation: Activation,
    pub classifier_hidden: Vec<usize>,
    pub classifier_activation: Activation,
    pub fusion: Fusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32],
            embed_dim: 16,
            hidden_activation: Activation::Relu,
            embed_activation: Activation::Relu,
            classifier_hidden: vec![16],
            classifier_activation: Activation::Relu,
            fusion: Fusion::Concat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: u32,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub alpha: f64,
    pub t0: i64,
    pub aggregation: Aggregation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prox_mu: Option<f64>,
    pub warm_local: bool,
    pub freeze_classifier_rounds: u32,
    pub classifier_loss: ClassifierLoss,
    /// Constant lambda instead of the schedule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub weighted_prototypes: bool,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 100,
            local_epochs: 3,
            lr: 0.001,
            batch_size: 32,
            beta: 0.25,
            alpha: 0.05,
            t0: 30,
            aggregation: Aggregation::FedAvg,
            prox_mu: None,
            warm_local: false,
            freeze_classifier_rounds: 0,
            classifier_loss: ClassifierLoss::Dynamic,
            lambda: None,
            weighted_prototypes: false,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fraction: 0.8 }
    }
}

/// Either a number of seeds (`0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    /// Parses `"a..b"` (inclusive), `"a,b,c"` or a single seed.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("--seeds {text:?}: expected N, A..B or a comma list"));
        let text = text.trim();
        if let Some((a, b)) = text.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            return Ok(Seeds::List((a..=b).collect()));
        }
        let list = text.split(',').map(|s| s.trim().parse::<u64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        Ok(Seeds::List(list))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: MethodId,
    pub seeds: Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { method: MethodId::FedMM, seeds: Seeds::Count(20), out_dir: None, trace: false }
    }
}

/// The full experiment description. Omitted keys take their defaults, so
/// `{}` is the default synthetic experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub run: RunConfig,
}

/// Hospitals after applying the modality subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTopology {
    pub names: Vec<String>,
    pub active: BTreeSet<ModalityId>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("key `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative feature-file paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for h in &mut cfg.topology.hospitals {
            for f in h.files.values_mut() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let cfg = |msg: String| Err(Error::Config(msg));
        if t.rounds == 0 {
            return cfg("train.rounds must be >= 1".into());
        }
        if t.local_epochs == 0 {
            return cfg("train.local_epochs must be >= 1".into());
        }
        if t.batch_size == 0 {
            return cfg("train.batch_size must be >= 1".into());
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return cfg(format!("train.lr must be a finite value >= 0, got {}", t.lr));
        }
        if !(t.beta >= 0.0 && t.beta.is_finite()) {
            return cfg(format!("train.beta must be a finite value >= 0, got {}", t.beta));
        }
        if !(t.alpha > 0.0 && t.alpha.is_finite()) {
            return cfg(format!("train.alpha must be > 0, got {}", t.alpha));
        }
        if t.prox_mu.is_some_and(|mu| !(mu >= 0.0 && mu.is_finite())) {
            return cfg("train.prox_mu must be >= 0".into());
        }
        if t.lambda.is_some_and(|l| !(0.0..=1.0).contains(&l)) {
            return cfg("train.lambda must be in [0, 1]".into());
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return cfg(format!("split.fraction must be in (0, 1), got {}", self.split.fraction));
        }
        let m = &self.model;
        if m.embed_dim == 0 {
            return cfg("model.embed_dim must be >= 1".into());
        }
        if m.hidden.contains(&0) || m.classifier_hidden.contains(&0) {
            return cfg("model hidden widths must be >= 1".into());
        }
        if let Seeds::List(v) = &self.run.seeds {
            if v.is_empty() {
                return cfg("run.seeds must not be empty".into());
            }
            if v.iter().collect::<BTreeSet<_>>().len() != v.len() {
                return cfg("run.seeds contains duplicates".into());
            }
        }
        if self.run.seeds == Seeds::Count(0) {
            return cfg("run.seeds must be >= 1".into());
        }
        self.resolve_topology().map(|_| ())
    }

    pub fn resolve_topology(&self) -> Result<ResolvedTopology> {
        let top = &self.topology;
        if top.modalities.is_empty() {
            return Err(Error::Config("topology.modalities must not be empty".into()));
        }
        let names: Vec<String> = top.modalities.iter().map(|m| m.name.clone()).collect();
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return Err(Error::Config("topology.modalities has duplicate names".into()));
        }
        if let Some(m) = top.modalities.iter().find(|m| m.dim == 0) {
            return Err(Error::Config(format!("topology.modalities: {} has dim 0", m.name)));
        }
        let lookup = |name: &str, key: &str| {
            names
                .iter()
                .position(|n| n == name)
                .map(ModalityId)
                .ok_or_else(|| Error::Config(format!("{key}: unknown modality {name:?}")))
        };
        if top.hospitals.is_empty() {
            return Err(Error::Config("topology.hospitals must not be empty".into()));
        }
        let mut ids = BTreeSet::new();
        let mut held = BTreeSet::new();
        let mut synthetic = 0;
        for h in &top.hospitals {
            let key = format!("topology.hospitals[id={}]", h.id);
            if h.id == 0 || !ids.insert(h.id) {
                return Err(Error::Config(format!("{key}: ids must be unique and >= 1")));
            }
            if h.modalities.is_empty() {
                return Err(Error::Config(format!("{key}.modalities must not be empty")));
            }
            for name in &h.modalities {
                held.insert(lookup(name, &format!("{key}.modalities"))?);
            }
            match (h.counts, h.files.is_empty()) {
                (Some(_), true) => synthetic += 1,
                (None, false) => {
                    let declared: BTreeSet<&String> = h.files.keys().collect();
                    let mask: BTreeSet<&String> = h.modalities.iter().collect();
                    if declared != mask {
                        return Err(Error::Config(format!("{key}.files must name exactly its modalities")));
                    }
                }
                _ => return Err(Error::Config(format!("{key}: give exactly one of counts or files"))),
            }
        }
        if synthetic != 0 && synthetic != top.hospitals.len() {
            return Err(Error::Config("topology.hospitals: mixing counts and files is not supported".into()));
        }
        for (k, name) in names.iter().enumerate() {
            if !held.contains(&ModalityId(k)) {
                return Err(Error::Config(format!("topology.modalities: {name} is held by no hospital")));
            }
        }
        let active = match &top.modality_subset {
            None => held,
            Some(subset) => {
                let active = subset
                    .iter()
                    .map(|n| lookup(n, "topology.modality_subset"))
                    .collect::<Result<BTreeSet<_>>>()?;
                if active.is_empty() {
                    return Err(Error::Config("topology.modality_subset must not be empty".into()));
                }
                active
            }
        };
        Ok(ResolvedTopology { names, active })
    }

    pub fn is_synthetic(&self) -> bool {
        self.topology.hospitals.iter().all(|h| h.counts.is_some())
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let top = &self.topology;
        let resolved = self.resolve_topology()?;
        let hospitals = top
            .hospitals
            .iter()
            .map(|h| {
                let counts = h.counts.ok_or_else(|| {
                    Error::Config(format!("topology.hospitals[id={}] has no counts; data must be synthetic", h.id))
                })?;
                let modalities = h.modalities.iter().map(|n| resolved.names.iter().position(|x| x == n).unwrap()).collect();
                Ok(HospitalSpec { modalities, counts })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = SyntheticSpec {
            latent_dim: top.latent_dim,
            modalities: top
                .modalities
                .iter()
                .map(|m| ModalitySpec { name: m.name.clone(), observed_dim: m.dim, mixing_seed: m.mixing_seed })
                .collect(),
            class_separation: top.class_separation,
            noise_sigma: top.noise_sigma,
            hospitals,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Loads every hospital (synthetic or from files), relabels them with the
    /// configured ids and applies the modality subset.
    pub fn load_hospitals(&self) -> Result<Vec<HospitalDataset<f64>>> {
        let resolved = self.resolve_topology()?;
        let mut hospitals = if self.is_synthetic() {
            let data = generate_synthetic(&self.synthetic_spec()?, self.topology.data_seed)?;
            data.hospitals
                .into_iter()
                .zip(&self.topology.hospitals)
                .map(|(mut ds, h)| {
                    ds.hospital = h.id;
                    ds
                })
                .collect()
        } else {
            let decl: Vec<HospitalFiles> = self
                .topology
                .hospitals
                .iter()
                .map(|h| HospitalFiles {
                    hospital: h.id,
                    files: h
                        .files
                        .iter()
                        .map(|(n, p)| (ModalityId(resolved.names.iter().position(|x| x == n).unwrap()), p.clone()))
                        .collect(),
                })
                .collect();
            let dims = self.topology.modalities.iter().enumerate().map(|(k, m)| (ModalityId(k), m.dim)).collect();
            load_feature_csv(&decl, &dims)?
        };
        hospitals.sort_by_key(|h| h.hospital);
        Ok(hospitals.into_iter().filter_map(|h| h.restrict(&resolved.active)).collect())
    }

    pub fn template(&self) -> Result<GlobalTemplate> {
        let resolved = self.resolve_topology()?;
        let modalities = resolved
            .active
            .iter()
            .map(|&m| {
                (
                    m,
                    ExtractorTemplate {
                        input_dim: self.topology.modalities[m.0].dim,
                        hidden: self.model.hidden.clone(),
                        hidden_activation: self.model.hidden_activation,
                        embed_activation: self.model.embed_activation,
                    },
                )
            })
            .collect();
        Ok(GlobalTemplate {
            modalities,
            embed_dim: self.model.embed_dim,
            classifier_hidden: self.model.classifier_hidden.clone(),
            classifier_activation: self.model.classifier_activation,
            fusion: self.model.fusion,
        })
    }

    pub fn prox_mu(&self) -> f64 {
        match (self.train.prox_mu, self.train.aggregation) {
            (Some(mu), _) => mu,
            (None, Aggregation::FedProxMeta) => DEFAULT_PROX_MU,
            (None, _) => 0.0,
        }
    }

    pub fn hyper(&self) -> Result<TrainHyper<f64>> {
        let t = &self.train;
        let hyper = TrainHyper {
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            schedule: LossSchedule::new(t.alpha, t.t0, t.beta, self.model.embed_dim)?,
            lambda: t.lambda.map_or(LambdaMode::Scheduled, LambdaMode::Fixed),
            prox_mu: self.prox_mu(),
            freeze_classifier_rounds: t.freeze_classifier_rounds,
            classifier_loss: t.classifier_loss,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    /// The config with every default written out, as echoed in manifests.
    pub fn resolved_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["train"]["prox_mu"] = serde_json::json!(self.prox_mu());
        v["run"]["seeds"] = serde_json::json!(self.run.seeds.resolve());
        v
    }
}

type Split = (usize, HospitalDataset<f64>, HospitalDataset<f64>);

/// Per-seed train/test splits, standardized with train statistics.
pub fn prepare_splits(cfg: &ExperimentConfig, hospitals: &[HospitalDataset<f64>], seed: u64) -> Result<Vec<Split>> {
    hospitals
        .iter()
        .map(|ds| {
            let spec = SplitSpec { train_fraction: cfg.split.fraction, seed: derive(seed, &[TAG_SPLIT, ds.hospital as u64]) };
            let (train, test) = train_test_split(ds, &spec)?;
            if cfg.train.standardize {
                let (train, test, _) = standardize(&train, &test)?;
                Ok((ds.hospital, train, test))
            } else {
                Ok((ds.hospital, train, test))
            }
        })
        .collect()
}

/// Final test scores of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalScores {
    pub hospital: String,
    pub scores: Vec<f64>,
    pub labels: Vec<ClassLabel>,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub method: MethodId,
    /// Round rows with their hospital label.
    pub rows: Vec<(String, RoundRow)>,
    pub finals: Vec<FinalScores>,
    pub trace: Option<Trace>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

fn hospital_label(method: MethodId, id: usize) -> String {
    match method {
        MethodId::CentralizedFusion => "pooled".into(),
        _ => id.to_string(),
    }
}

/// Runs one method for one seed: fresh split, fresh initialization.
pub fn run_seed(
    cfg: &ExperimentConfig,
    method: MethodId,
    hospitals: &[HospitalDataset<f64>],
    seed: u64,
    with_trace: bool,
) -> Result<SeedOutcome> {
    let template = cfg.template()?;
    let hyper = cfg.hyper()?;
    let rounds = cfg.train.rounds;
    let splits = prepare_splits(cfg, hospitals, seed)?;
    let mut notes = BTreeMap::new();
    let mut trace = None;
    let init = |splits: &[Split]| -> Result<Vec<Participant<f64>>> {
        splits
            .iter()
            .map(|(id, train, test)| {
                let model = template.init_local_model(&train.mask(), *id, seed)?;
                Ok(Participant { id: *id, train: train.clone(), test: test.clone(), model })
            })
            .collect()
    };
    let (participants, rows) = match method {
        MethodId::FedMM => {
            let mut ps = init(&splits)?;
            let mut state = ServerState::new(template.clone(), seed, cfg.train.aggregation, RoundPolicy::FEDMM)?;
            state.warm_local = cfg.train.warm_local;
            if cfg.train.weighted_prototypes {
                state.prototype_weighting = PrototypeWeighting::BySampleCount;
            }
            if with_trace {
                state.trace = Some(Trace::new(ps.iter().map(|p| (p.id, p.mask())).collect()));
            }
            let rows = run_training(&mut state, &mut ps, &hyper, rounds, seed)?;
            trace = state.trace;
            (ps, rows)
        }
        MethodId::LocalTraining => {
            let mut ps = init(&splits)?;
            let rows = local_training(&mut ps, rounds, &hyper, seed)?;
            (ps, rows)
        }
        MethodId::MultiFedAvg => {
            let (mut ps, filled) = unify_participants(&template, &splits, seed)?;
            let names = &cfg.resolve_topology()?.names;
            let filled: BTreeMap<String, Vec<String>> = filled
                .into_iter()
                .map(|(id, ms)| (id.to_string(), ms.iter().map(|m| names[m.0].clone()).collect()))
                .collect();
            notes.insert("zero_filled_modalities".into(), serde_json::json!(filled));
            let mut state = ServerState::new(template.clone(), seed, cfg.train.aggregation, RoundPolicy::UNIFIED)?;
            let rows = run_training(&mut state, &mut ps, &bce_only(&hyper), rounds, seed)?;
            (ps, rows)
        }
        MethodId::CentralizedFusion => {
            let (p, ex_train, ex_test) = pooled_participant(&template, &splits, seed)?;
            notes.insert("excluded_train_samples".into(), serde_json::json!(ex_train));
            notes.insert("excluded_test_samples".into(), serde_json::json!(ex_test));
            notes.insert("pooled_train_samples".into(), serde_json::json!(p.train.len()));
            let mut ps = vec![p];
            let rows = local_training(&mut ps, rounds, &hyper, seed)?;
            (ps, rows)
        }
    };
    notes.insert(
        "epochs_per_client".into(),
        serde_json::json!(u64::from(rounds) * cfg.train.local_epochs as u64),
    );
    let finals = participants
        .iter()
        .map(|p| {
            let (accuracy, auc, scores) = evaluate(p)?;
            Ok(FinalScores { hospital: hospital_label(method, p.id), scores, labels: p.test.labels.clone(), accuracy, auc })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = rows.into_iter().map(|r| (hospital_label(method, r.client), r)).collect();
    Ok(SeedOutcome { seed, method, rows, finals, trace, notes })
}

/// Worker count from `FEDMM_THREADS` (unset or 0 = all cores).
pub fn thread_count() -> Result<usize> {
    match std::env::var("FEDMM_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("FEDMM_THREADS must be a non-negative integer, got {v:?}"))),
    }
}

fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every seed in parallel and returns outcomes in seed-list order.
pub fn run_seeds(cfg: &ExperimentConfig, method: MethodId, seeds: &[u64], with_trace: bool) -> Result<Vec<SeedOutcome>> {
    let hospitals = cfg.load_hospitals()?;
    with_pool(|| seeds.par_iter().map(|&s| run_seed(cfg, method, &hospitals, s, with_trace)).collect())?
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn runs_of(outcomes: &[SeedOutcome]) -> Vec<RunSummary> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.finals.iter().map(|f| RunSummary {
                method: o.method.name().into(),
                hospital: f.hospital.clone(),
                seed: o.seed,
                accuracy: f.accuracy,
                auc: f.auc,
            })
        })
        .collect()
}

pub fn runs_csv(runs: &[RunSummary]) -> String {
    let mut s = String::from("method,hospital,seed,accuracy,auc\n");
    for r in runs {
        s.push_str(&format!("{},{},{},{},{}\n", r.method, r.hospital, r.seed, float(r.accuracy), float(r.auc)));
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("method,hospital,count,mean_accuracy,std_accuracy,mean_auc,std_auc\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.hospital,
            r.count,
            float(r.mean_accuracy),
            float(r.std_accuracy),
            float(r.mean_auc),
            float(r.std_auc)
        ));
    }
    s
}

fn rounds_csv(outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from("round,method,hospital,seed,lambda,loss_bce,loss_l2,test_accuracy,test_auc\n");
    for o in outcomes {
        for (h, r) in &o.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.round,
                o.method,
                h,
                o.seed,
                float(r.lambda),
                float(r.loss_bce),
                float(r.loss_l2),
                float(r.test_accuracy),
                float(r.test_auc)
            ));
        }
    }
    s
}

/// ROC over the final test scores of every seed, pooled per hospital.
fn roc_csvs(outcomes: &[SeedOutcome]) -> Result<BTreeMap<String, String>> {
    let mut pooled: BTreeMap<String, (Vec<f64>, Vec<ClassLabel>)> = BTreeMap::new();
    for o in outcomes {
        for f in &o.finals {
            let e = pooled.entry(f.hospital.clone()).or_default();
            e.0.extend_from_slice(&f.scores);
            e.1.extend_from_slice(&f.labels);
        }
    }
    let mut out = BTreeMap::new();
    for (h, (scores, labels)) in pooled {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in metrics::roc_curve(&scores, &labels)? {
            s.push_str(&format!("{},{},{}\n", float(p.fpr), float(p.tpr), float(p.threshold)));
        }
        out.insert(h, s);
    }
    Ok(out)
}

fn trace_csv(outcomes: &[SeedOutcome]) -> Option<String> {
    if outcomes.iter().all(|o| o.trace.is_none()) {
        return None;
    }
    let mut s = String::from("seed,round,direction,client_id,payload_kind,modality,payload_bytes\n");
    for o in outcomes {
        for e in o.trace.iter().flat_map(Trace::events) {
            s.push_str(&format!(
                "{},{},{:?},{},{:?},{},{}\n",
                o.seed, e.round, e.direction, e.client_id, e.payload_kind, e.modality.0, e.payload_bytes
            ));
        }
    }
    Some(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: RunStatus,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    fn new(command: &str, cfg: &ExperimentConfig, seeds: Vec<u64>) -> Self {
        Manifest {
            tool: "fedmm".into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            status: RunStatus::Running,
            config: cfg.resolved_json(),
            seeds,
            outputs: Vec::new(),
            notes: BTreeMap::new(),
            error: None,
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_text(&dir.join("manifest.json"), &body)
    }
}

/// Results of a `train` invocation.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub runs: Vec<RunSummary>,
    pub summary: Vec<SummaryRow>,
    pub trace_violations: usize,
    pub outcomes: Vec<SeedOutcome>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `cfg.run.method` for every configured seed and writes `rounds.csv`,
/// `runs.csv`, `summary.csv`, one ROC file per hospital, the optional
/// `trace.csv` and `manifest.json` into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    create_dir(out)?;
    let seeds = cfg.run.seeds.resolve();
    let method = cfg.run.method;
    let mut manifest = Manifest::new("train", cfg, seeds.clone());
    manifest.write(out)?;
    let result = train_outputs(cfg, method, &seeds, out, &mut manifest);
    if let Err(e) = &result {
        for name in &manifest.outputs {
            let _ = std::fs::remove_file(out.join(name));
        }
        manifest.outputs.clear();
        manifest.status = RunStatus::Failed;
        manifest.error = Some(e.to_string());
        manifest.write(out)?;
    }
    result
}

fn train_outputs(
    cfg: &ExperimentConfig,
    method: MethodId,
    seeds: &[u64],
    out: &Path,
    manifest: &mut Manifest,
) -> Result<TrainOutcome> {
    let outcomes = run_seeds(cfg, method, seeds, cfg.run.trace)?;
    let runs = runs_of(&outcomes);
    let summary = metrics::summarize(&runs);
    let mut files: Vec<(String, String)> = vec![
        ("rounds.csv".into(), rounds_csv(&outcomes)),
        ("runs.csv".into(), runs_csv(&runs)),
        ("summary.csv".into(), summary_csv(&summary)),
    ];
    for (h, body) in roc_csvs(&outcomes)? {
        files.push((format!("roc_{}_{h}.csv", method.name()), body));
    }
    let mut trace_violations = 0;
    if let Some(body) = trace_csv(&outcomes) {
        files.push(("trace.csv".into(), body));
        for t in outcomes.iter().filter_map(|o| o.trace.as_ref()) {
            trace_violations += audit(&t.events(), t.masks()).violations.len();
        }
        manifest.notes.insert("trace_violations".into(), serde_json::json!(trace_violations));
    }
    for (name, body) in &files {
        manifest.outputs.push(name.clone());
        write_text(&out.join(name), body)?;
    }
    if let Some(first) = outcomes.first() {
        manifest.notes.extend(first.notes.clone());
    }
    manifest.status = RunStatus::Complete;
    manifest.write(out)?;
    Ok(TrainOutcome { runs, summary, trace_violations, outcomes })
}

/// Writes one feature file per (hospital, modality) of the synthetic topology
/// plus a manifest whose config reads the data back from those files.
pub fn cmd_generate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let spec = cfg.synthetic_spec()?;
    create_dir(out)?;
    let data = generate_synthetic(&spec, seed)?;
    let mut gen_cfg = cfg.clone();
    gen_cfg.topology.data_seed = seed;
    let mut manifest = Manifest::new("generate", &gen_cfg, vec![seed]);
    let mut written = Vec::new();
    let mut file_topology = cfg.topology.clone();
    for (ds, h) in data.hospitals.iter().zip(file_topology.hospitals.iter_mut()) {
        h.counts = None;
        for m in ds.mask() {
            let name = &spec.modalities[m.0].name;
            let file = format!("h{}_{name}.csv", h.id);
            let mut relabeled = ds.clone();
            relabeled.hospital = h.id;
            write_feature_file(&out.join(&file), &relabeled, m, name)?;
            manifest.outputs.push(file.clone());
            h.files.insert(name.clone(), PathBuf::from(&file));
            written.push(out.join(file));
        }
    }
    manifest.notes.insert("file_topology".into(), serde_json::to_value(&file_topology).expect("serializes"));
    manifest.status = RunStatus::Complete;
    manifest.write(out)?;
    Ok(written)
}

pub const SWEEP_KEYS: [&str; 3] = ["train.t0", "model.fusion", "topology.modality_subset"];

/// Modality names from a subset value: `A+B`, a single name, or one
/// character per modality (`AB`).
fn parse_subset(value: &str, names: &[String]) -> Result<Vec<String>> {
    if value.contains('+') {
        return Ok(value.split('+').map(str::to_string).collect());
    }
    if names.iter().any(|n| n == value) {
        return Ok(vec![value.to_string()]);
    }
    let chars: Vec<String> = value.chars().map(String::from).collect();
    if chars.iter().all(|c| names.contains(c)) {
        return Ok(chars);
    }
    Err(Error::Config(format!("topology.modality_subset: cannot read {value:?} as modality names {names:?}")))
}

/// The config with one sweep key set to `value`.
pub fn apply_sweep(cfg: &ExperimentConfig, key: &str, value: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let bad = |what: &str| Error::Config(format!("{key}={value}: {what}"));
    match key {
        "train.t0" => c.train.t0 = value.parse().map_err(|_| bad("expected an integer round"))?,
        "model.fusion" => {
            c.model.fusion = serde_json::from_value(serde_json::json!(value)).map_err(|_| bad("expected concat or mean"))?
        }
        "topology.modality_subset" => {
            let names: Vec<String> = cfg.topology.modalities.iter().map(|m| m.name.clone()).collect();
            c.topology.modality_subset = Some(parse_subset(value, &names)?);
        }
        _ => {
            return Err(Error::Config(format!("unknown sweep key {key:?}; valid keys: {}", SWEEP_KEYS.join(", "))))
        }
    }
    c.validate()?;
    Ok(c)
}

/// Parses `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--sweep {spec:?}: expected key=v1,v2,...")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if !SWEEP_KEYS.contains(&key) {
        return Err(Error::Config(format!("unknown sweep key {key:?}; valid keys: {}", SWEEP_KEYS.join(", "))));
    }
    if values.is_empty() {
        return Err(Error::Config(format!("--sweep {spec:?}: no values")));
    }
    Ok((key.to_string(), values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: String,
    pub hospital: String,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Re-runs `cmd_train` once per sweep value into `out/<key leaf>=<value>` and
/// writes the combined `sweep.csv`.
pub fn cmd_ablation(cfg: &ExperimentConfig, key: &str, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    let configs = values.iter().map(|v| apply_sweep(cfg, key, v)).collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let leaf = key.rsplit('.').next().unwrap_or(key);
    let mut rows = Vec::new();
    for (value, c) in values.iter().zip(&configs) {
        let result = cmd_train(c, &out.join(format!("{leaf}={value}")))?;
        rows.extend(result.summary.into_iter().map(|s| SweepRow {
            sweep_value: value.clone(),
            hospital: s.hospital,
            mean_auc: s.mean_auc,
            std_auc: s.std_auc,
            mean_acc: s.mean_accuracy,
            std_acc: s.std_accuracy,
        }));
    }
    let mut body = String::from("sweep_value,hospital,mean_auc,std_auc,mean_acc,std_acc\n");
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sweep_value,
            r.hospital,
            float(r.mean_auc),
            float(r.std_auc),
            float(r.mean_acc),
            float(r.std_acc)
        ));
    }
    write_text(&out.join("sweep.csv"), &body)?;
    Ok(rows)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunSummary>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { file: path.display().to_string(), line: 1, msg: format!("{other:?}") },
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Parse {
                file: path.display().to_string(),
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Merges the `runs.csv` of every input directory and writes the
/// re-summarized table to `out`.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one input directory".into()));
    }
    let mut runs = Vec::new();
    for dir in inputs {
        runs.extend(read_runs(&dir.join("runs.csv"))?);
    }
    let summary = metrics::summarize(&runs);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &summary_csv(&summary))?;
    Ok(summary)
}
