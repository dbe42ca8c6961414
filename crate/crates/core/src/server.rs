//! Central coordinator: broadcasts global extractors and prototypes, runs the
//! clients, then aggregates extractors and prototypes per modality over the
//! clients that hold that modality.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{client_update, evaluate_client, ClientReport, Fusion, HospitalDataset, LocalModel, TrainHyper};
use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::metrics;
use crate::nn::{weighted_sum_params, Activation, Mlp};
use crate::prototype::{aggregate_prototypes, PrototypeSet, PrototypeWeighting};
use crate::scalar::Scalar;
use crate::seed::{client_round_seed, derive, TAG_CLASSIFIER, TAG_EXTRACTOR};
use crate::trace::{Direction, PayloadKind, Trace, TraceEvent};
use crate::types::ModalityId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorTemplate {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub embed_activation: Activation,
}

/// Architecture shared by every client. Extractors of one modality must be
/// shape-identical everywhere for weight aggregation to make sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTemplate {
    pub modalities: BTreeMap<ModalityId, ExtractorTemplate>,
    pub embed_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub classifier_activation: Activation,
    pub fusion: Fusion,
}

impl GlobalTemplate {
    fn extractor_template(&self, m: ModalityId) -> Result<&ExtractorTemplate> {
        self.modalities
            .get(&m)
            .ok_or_else(|| Error::Config(format!("modality {m} is not in the model template")))
    }

    /// Initial extractor for `m`. Seeded by modality only, so every method
    /// and client starts modality `m` from the same weights.
    pub fn init_extractor<T: Scalar>(&self, m: ModalityId, base_seed: u64) -> Result<Mlp<T>> {
        let t = self.extractor_template(m)?;
        let mut sizes = vec![t.input_dim];
        sizes.extend_from_slice(&t.hidden);
        sizes.push(self.embed_dim);
        let mut acts = vec![t.hidden_activation; t.hidden.len()];
        acts.push(t.embed_activation);
        Mlp::init(&sizes, &acts, derive(base_seed, &[TAG_EXTRACTOR, m.0 as u64]))
    }

    pub fn init_classifier<T: Scalar>(&self, modalities: usize, client_id: usize, base_seed: u64) -> Result<Mlp<T>> {
        let mut sizes = vec![self.fusion.fused_dim(self.embed_dim, modalities)];
        sizes.extend_from_slice(&self.classifier_hidden);
        sizes.push(1);
        let mut acts = vec![self.classifier_activation; self.classifier_hidden.len()];
        acts.push(Activation::Sigmoid);
        Mlp::init(&sizes, &acts, derive(base_seed, &[TAG_CLASSIFIER, client_id as u64]))
    }

    pub fn init_local_model<T: Scalar>(
        &self,
        mask: &BTreeSet<ModalityId>,
        client_id: usize,
        base_seed: u64,
    ) -> Result<LocalModel<T>> {
        if mask.is_empty() {
            return Err(Error::Config(format!("client {client_id} has no modalities")));
        }
        let extractors = mask
            .iter()
            .map(|&m| Ok((m, self.init_extractor(m, base_seed)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let classifier = self.init_classifier(mask.len(), client_id, base_seed)?;
        LocalModel::new(extractors, classifier, self.fusion)
    }

    pub fn input_dims(&self) -> BTreeMap<ModalityId, usize> {
        self.modalities.iter().map(|(&m, t)| (m, t.input_dim)).collect()
    }
}

/// Extractor aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean over the reporting clients.
    #[default]
    FedAvg,
    /// Mean weighted by train sample counts.
    FedAvgWeighted,
    /// FedAvg on the server; the proximal term lives in the client update.
    FedProxMeta,
}

fn aggregation_weights<T: Scalar>(method: Aggregation, counts: &[usize]) -> Vec<T> {
    match method {
        Aggregation::FedAvg | Aggregation::FedProxMeta => {
            let w = T::one() / T::of(counts.len() as f64);
            vec![w; counts.len()]
        }
        Aggregation::FedAvgWeighted => {
            let total = T::of(counts.iter().sum::<usize>() as f64);
            counts.iter().map(|&c| T::of(c as f64) / total).collect()
        }
    }
}

/// Aggregates modality `m` over every report that carries it, in report order
/// (callers pass reports by ascending client id).
pub fn aggregate_extractors<T: Scalar>(
    method: Aggregation,
    reports: &[&ClientReport<T>],
    m: ModalityId,
) -> Result<Mlp<T>> {
    let owners: Vec<(&Mlp<T>, usize)> = reports
        .iter()
        .filter_map(|r| r.extractors.get(&m).map(|e| (e, r.train_sample_count)))
        .collect();
    if owners.is_empty() {
        return Err(Error::Aggregation(format!("no client reported modality {m}")));
    }
    let counts: Vec<usize> = owners.iter().map(|(_, c)| *c).collect();
    let weights = aggregation_weights::<T>(method, &counts);
    let items: Vec<(&Mlp<T>, T)> = owners.iter().map(|(e, _)| *e).zip(weights).collect();
    weighted_sum_params(&items)
}

/// A client together with its data splits and current local model.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant<T> {
    pub id: usize,
    pub train: HospitalDataset<T>,
    pub test: HospitalDataset<T>,
    pub model: LocalModel<T>,
}

impl<T: Scalar> Participant<T> {
    pub fn mask(&self) -> BTreeSet<ModalityId> {
        self.model.extractors.keys().copied().collect()
    }
}

/// What the server exchanges each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPolicy {
    pub share_extractors: bool,
    pub share_classifier: bool,
    pub share_prototypes: bool,
}

impl RoundPolicy {
    pub const FEDMM: RoundPolicy =
        RoundPolicy { share_extractors: true, share_classifier: false, share_prototypes: true };
    pub const UNIFIED: RoundPolicy =
        RoundPolicy { share_extractors: true, share_classifier: true, share_prototypes: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats<T> {
    pub round: u32,
    pub client_loss: BTreeMap<usize, LossBreakdown<T>>,
}

#[derive(Debug, Clone)]
pub struct ServerState<T> {
    /// Number of completed rounds.
    pub round: u32,
    pub template: GlobalTemplate,
    pub global_extractors: BTreeMap<ModalityId, Mlp<T>>,
    pub global_classifier: Option<Mlp<T>>,
    pub prototypes: Option<PrototypeSet<T>>,
    pub aggregation: Aggregation,
    pub prototype_weighting: PrototypeWeighting,
    pub policy: RoundPolicy,
    /// Clients keep training their own extractors instead of reloading the
    /// global ones after round 1.
    pub warm_local: bool,
    pub history: Vec<RoundStats<T>>,
    pub trace: Option<Trace>,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(template: GlobalTemplate, base_seed: u64, aggregation: Aggregation, policy: RoundPolicy) -> Result<Self> {
        let global_extractors = template
            .modalities
            .keys()
            .map(|&m| Ok((m, template.init_extractor(m, base_seed)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(ServerState {
            round: 0,
            template,
            global_extractors,
            global_classifier: None,
            prototypes: None,
            aggregation,
            prototype_weighting: PrototypeWeighting::Unweighted,
            policy,
            warm_local: false,
            history: Vec::new(),
            trace: None,
        })
    }

    fn record(&mut self, event: TraceEvent) -> Result<()> {
        match self.trace.as_mut() {
            Some(t) => t.record(event),
            None => Ok(()),
        }
    }
}

fn check_participants<T: Scalar>(state: &ServerState<T>, participants: &[Participant<T>]) -> Result<()> {
    if participants.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    if participants.windows(2).any(|w| w[0].id >= w[1].id) {
        return Err(Error::Config("clients must be ordered by ascending id".into()));
    }
    if state.policy.share_extractors {
        for &m in state.template.modalities.keys() {
            if !participants.iter().any(|p| p.model.extractors.contains_key(&m)) {
                return Err(Error::Config(format!("modality {m} is owned by no client")));
            }
        }
    }
    Ok(())
}

/// Runs one synchronous round with every client participating. Returns the
/// client reports in client order.
pub fn run_round<T: Scalar>(
    state: &mut ServerState<T>,
    participants: &mut [Participant<T>],
    hyper: &TrainHyper<T>,
    base_seed: u64,
) -> Result<Vec<ClientReport<T>>> {
    check_participants(state, participants)?;
    let round = state.round + 1;
    let policy = state.policy;

    // (1) broadcast
    let protos = if policy.share_prototypes { state.prototypes.clone() } else { None };
    if let Some(p) = &protos {
        if p.round_produced != state.round {
            return Err(Error::Protocol(format!(
                "prototypes from round {} offered in round {round}",
                p.round_produced
            )));
        }
    }
    let reload = !state.warm_local || round == 1;
    for idx in 0..participants.len() {
        let id = participants[idx].id;
        for m in participants[idx].mask() {
            if policy.share_extractors && reload {
                let global = state.global_extractors[&m].clone();
                let bytes = global.num_params() * T::BYTES;
                participants[idx].model.extractors.insert(m, global);
                state.record(TraceEvent {
                    round,
                    direction: Direction::Broadcast,
                    client_id: id,
                    modality: m,
                    payload_kind: PayloadKind::ExtractorWeights,
                    payload_bytes: bytes,
                })?;
            }
            if let Some(p) = &protos {
                let bytes = p.for_modality(m).values().map(|v| v.len() * T::BYTES).sum();
                state.record(TraceEvent {
                    round,
                    direction: Direction::Broadcast,
                    client_id: id,
                    modality: m,
                    payload_kind: PayloadKind::Prototypes,
                    payload_bytes: bytes,
                })?;
            }
        }
        if policy.share_classifier {
            if let Some(c) = &state.global_classifier {
                participants[idx].model.classifier = c.clone();
            }
        }
    }

    // (2) local updates
    let globals = if hyper.prox_mu > T::zero() { Some(&state.global_extractors) } else { None };
    let results: Vec<Result<(LocalModel<T>, ClientReport<T>)>> = participants
        .par_iter()
        .map(|p| {
            client_update(
                &p.model,
                &p.train,
                protos.as_ref(),
                round,
                hyper,
                globals,
                client_round_seed(base_seed, round, p.id),
            )
        })
        .collect();
    let mut reports = Vec::with_capacity(participants.len());
    for (p, result) in participants.iter_mut().zip(results) {
        let (model, report) = result?;
        p.model = model;
        reports.push(report);
    }

    // (3) aggregation
    if policy.share_extractors {
        for report in &reports {
            for (m, e) in &report.extractors {
                let template = state.global_extractors.get(m).ok_or_else(|| {
                    Error::Protocol(format!("client {} uploaded unknown modality {m}", report.client_id))
                })?;
                if !template.same_shape(e) {
                    return Err(Error::Protocol(format!(
                        "client {} modality {m}: extractor shape differs from the global template",
                        report.client_id
                    )));
                }
                let weight_bytes = e.num_params() * T::BYTES;
                state.record(TraceEvent {
                    round,
                    direction: Direction::Upload,
                    client_id: report.client_id,
                    modality: *m,
                    payload_kind: PayloadKind::ExtractorWeights,
                    payload_bytes: weight_bytes,
                })?;
                if policy.share_prototypes {
                    let mean_bytes = report.class_means[m]
                        .values()
                        .map(|c| c.mean.len() * T::BYTES + std::mem::size_of::<u64>())
                        .sum();
                    state.record(TraceEvent {
                        round,
                        direction: Direction::Upload,
                        client_id: report.client_id,
                        modality: *m,
                        payload_kind: PayloadKind::ClassMeans,
                        payload_bytes: mean_bytes,
                    })?;
                }
            }
        }
        let refs: Vec<&ClientReport<T>> = reports.iter().collect();
        let modalities: Vec<ModalityId> = state.global_extractors.keys().copied().collect();
        let mut next_protos = PrototypeSet::new(round);
        for m in modalities {
            let merged = aggregate_extractors(state.aggregation, &refs, m)?;
            state.global_extractors.insert(m, merged);
            if policy.share_prototypes {
                let means: Vec<_> = reports.iter().filter_map(|r| r.class_means.get(&m)).collect();
                let agg = aggregate_prototypes(&means, state.prototype_weighting)?;
                for (class, proto) in agg.prototypes {
                    next_protos.insert(m, class, proto);
                }
                next_protos.missing.extend(agg.absent.into_iter().map(|c| (m, c)));
            }
        }
        if policy.share_prototypes {
            state.prototypes = Some(next_protos);
        }
    }
    if policy.share_classifier {
        let items: Vec<(&Mlp<T>, usize)> =
            participants.iter().map(|p| (&p.model.classifier, p.train.len())).collect();
        let counts: Vec<usize> = items.iter().map(|(_, c)| *c).collect();
        let weights = aggregation_weights::<T>(state.aggregation, &counts);
        let weighted: Vec<(&Mlp<T>, T)> = items.iter().map(|(c, _)| *c).zip(weights).collect();
        state.global_classifier = Some(weighted_sum_params(&weighted)?);
    }

    // (4) bookkeeping
    state.round = round;
    state.history.push(RoundStats {
        round,
        client_loss: reports.iter().map(|r| (r.client_id, r.loss)).collect(),
    });
    Ok(reports)
}

/// One per-round, per-client log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u32,
    pub client: usize,
    pub lambda: f64,
    /// `(1 - lambda) * BCE`, averaged over the round's samples.
    pub loss_bce: f64,
    /// `lambda * L2`, averaged over the round's samples.
    pub loss_l2: f64,
    pub test_accuracy: f64,
    pub test_auc: f64,
}

/// Test metrics of a participant's current model.
pub fn evaluate<T: Scalar>(p: &Participant<T>) -> Result<(f64, f64, Vec<T>)> {
    let (scores, labels) = evaluate_client(&p.model, &p.test)?;
    let acc = metrics::accuracy(&scores, &labels, T::of(0.5))?;
    let auc = metrics::auc(&scores, &labels)?;
    Ok((acc, auc, scores))
}

pub(crate) fn round_row<T: Scalar>(round: u32, p: &Participant<T>, lambda: T, loss: &LossBreakdown<T>) -> Result<RoundRow> {
    let (acc, auc, _) = evaluate(p)?;
    Ok(RoundRow {
        round,
        client: p.id,
        lambda: lambda.as_f64(),
        loss_bce: loss.weighted_bce().as_f64(),
        loss_l2: loss.weighted_l2().as_f64(),
        test_accuracy: acc,
        test_auc: auc,
    })
}

/// Runs `rounds` rounds, evaluating every client on its test split after each.
pub fn run_training<T: Scalar>(
    state: &mut ServerState<T>,
    participants: &mut [Participant<T>],
    hyper: &TrainHyper<T>,
    rounds: u32,
    base_seed: u64,
) -> Result<Vec<RoundRow>> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    let mut log = Vec::with_capacity(rounds as usize * participants.len());
    for _ in 0..rounds {
        let reports = run_round(state, participants, hyper, base_seed)?;
        let lambda = hyper.lambda_at(state.round);
        let rows = participants
            .par_iter()
            .zip(reports.par_iter())
            .map(|(p, r)| round_row(state.round, p, lambda, &r.loss))
            .collect::<Result<Vec<_>>>()?;
        log.extend(rows);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::LambdaMode;
    use crate::loss::LossSchedule;
    use crate::types::ClassLabel;

    fn report(client_id: usize, count: usize, value: f64) -> ClientReport<f64> {
        let mut e = Mlp::<f64>::init(&[2, 2], &[Activation::Identity], 0).unwrap();
        for b in e.param_blocks_mut() {
            b.fill(value);
        }
        ClientReport {
            client_id,
            round: 1,
            extractors: BTreeMap::from([(ModalityId(0), e)]),
            class_means: BTreeMap::new(),
            train_sample_count: count,
            loss: LossBreakdown::default(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let a = report(1, 100, 1.0);
        let one = aggregate_extractors(Aggregation::FedAvg, &[&a], ModalityId(0)).unwrap();
        assert_eq!(one, a.extractors[&ModalityId(0)]);

        let b = report(2, 200, 3.0);
        let mid = aggregate_extractors(Aggregation::FedAvg, &[&a, &b], ModalityId(0)).unwrap();
        assert!(mid.param_blocks().iter().all(|blk| blk.iter().all(|&v| v == 2.0)));

        let c = report(3, 700, 10.0);
        let w = aggregate_extractors(Aggregation::FedAvgWeighted, &[&a, &b, &c], ModalityId(0)).unwrap();
        let manual = 0.0 + 0.1 * 1.0 + 0.2 * 3.0 + 0.7 * 10.0;
        assert!(w.param_blocks().iter().all(|blk| blk.iter().all(|&v| v == manual)));

        assert!(matches!(
            aggregate_extractors(Aggregation::FedAvg, &[&a], ModalityId(1)),
            Err(Error::Aggregation(_))
        ));
    }

    fn template() -> GlobalTemplate {
        let ext = ExtractorTemplate {
            input_dim: 3,
            hidden: vec![4],
            hidden_activation: Activation::Relu,
            embed_activation: Activation::Identity,
        };
        GlobalTemplate {
            modalities: BTreeMap::from([(ModalityId(0), ext.clone()), (ModalityId(1), ext)]),
            embed_dim: 2,
            classifier_hidden: vec![3],
            classifier_activation: Activation::Relu,
            fusion: Fusion::Concat,
        }
    }

    fn participant(id: usize, mods: &[usize], n: usize, t: &GlobalTemplate) -> Participant<f64> {
        let labels: Vec<ClassLabel> =
            (0..n).map(|i| if i % 2 == 0 { ClassLabel::NEGATIVE } else { ClassLabel::POSITIVE }).collect();
        let features: BTreeMap<ModalityId, Vec<Vec<f64>>> = mods
            .iter()
            .map(|&m| {
                let rows = (0..n)
                    .map(|i| (0..3).map(|j| ((i * 3 + j + m + id) % 7) as f64 / 7.0 - 0.4 + labels[i].value() as f64).collect())
                    .collect();
                (ModalityId(m), rows)
            })
            .collect();
        let ds = HospitalDataset::new(id, (0..n).map(|i| format!("{id}-{i:03}")).collect(), labels, features).unwrap();
        let mask = ds.mask();
        Participant { id, train: ds.clone(), test: ds, model: t.init_local_model(&mask, id, 0).unwrap() }
    }

    fn hyper(lr: f64) -> TrainHyper<f64> {
        TrainHyper {
            local_epochs: 2,
            batch_size: 4,
            lr,
            schedule: LossSchedule::new(0.05, 30, 0.25, 2).unwrap(),
            lambda: LambdaMode::Scheduled,
            prox_mu: 0.0,
            freeze_classifier_rounds: 0,
            classifier_loss: Default::default(),
        }
    }

    fn table1(t: &GlobalTemplate) -> Vec<Participant<f64>> {
        vec![participant(1, &[0], 10, t), participant(2, &[0, 1], 12, t), participant(3, &[1], 8, t)]
    }

    #[test]
    fn single_client_global_equals_client_weights() {
        let t = template();
        let mut ps = vec![participant(1, &[0, 1], 10, &t)];
        let mut state = ServerState::new(t, 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        run_round(&mut state, &mut ps, &hyper(0.1), 3).unwrap();
        assert_eq!(state.global_extractors, ps[0].model.extractors);
    }

    #[test]
    fn zero_lr_keeps_globals_and_builds_prototypes() {
        let t = template();
        let mut ps = table1(&t);
        let mut state = ServerState::new(t, 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        let before = state.global_extractors.clone();
        run_round(&mut state, &mut ps, &hyper(0.0), 3).unwrap();
        assert_eq!(state.global_extractors, before);
        let protos = state.prototypes.as_ref().unwrap();
        assert_eq!(protos.round_produced, 1);
        // modality 0 prototype = mean of clients 1 and 2 class means
        let m0 = ModalityId(0);
        let c1 = crate::client::embedding_class_means(&ps[0].model, &ps[0].train).unwrap();
        let c2 = crate::client::embedding_class_means(&ps[1].model, &ps[1].train).unwrap();
        let expect =
            aggregate_prototypes(&[&c1[&m0], &c2[&m0]], PrototypeWeighting::Unweighted).unwrap();
        assert_eq!(protos.get(m0, ClassLabel::NEGATIVE).unwrap(), expect.prototypes[&ClassLabel::NEGATIVE].as_slice());
    }

    #[test]
    fn partitions_follow_masks() {
        let t = template();
        let mut ps = table1(&t);
        let mut state = ServerState::new(t, 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        state.trace = Some(Trace::new(ps.iter().map(|p| (p.id, p.mask())).collect()));
        let reports = run_round(&mut state, &mut ps, &hyper(0.1), 1).unwrap();
        let owners = |m: usize| -> Vec<usize> {
            reports.iter().filter(|r| r.extractors.contains_key(&ModalityId(m))).map(|r| r.client_id).collect()
        };
        assert_eq!(owners(0), vec![1, 2]);
        assert_eq!(owners(1), vec![2, 3]);
        run_round(&mut state, &mut ps, &hyper(0.1), 1).unwrap();
        let audit = state.trace.as_ref().unwrap().audit();
        assert!(audit.is_clean(), "{:?}", audit.violations);
        assert_eq!(audit.extractor_uploads[&(2, ModalityId(0))], 2);
    }

    #[test]
    fn broadcast_overwrites_extractors() {
        let t = template();
        let mut ps = table1(&t);
        let mut state = ServerState::new(t, 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        run_round(&mut state, &mut ps, &hyper(0.1), 1).unwrap();
        let globals = state.global_extractors.clone();
        // lr 0: after the round each owner still holds exactly the broadcast weights
        run_round(&mut state, &mut ps, &hyper(0.0), 1).unwrap();
        for p in &ps {
            for (m, e) in &p.model.extractors {
                assert_eq!(e, &globals[m]);
            }
        }
    }

    #[test]
    fn stale_prototypes_are_rejected() {
        let t = template();
        let mut ps = table1(&t);
        let mut state = ServerState::new(t, 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        run_round(&mut state, &mut ps, &hyper(0.1), 1).unwrap();
        state.prototypes.as_mut().unwrap().round_produced = 0;
        assert!(matches!(run_round(&mut state, &mut ps, &hyper(0.1), 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn shape_divergence_is_protocol_error() {
        let t = template();
        let mut ps = table1(&t);
        let mut state = ServerState::new(t.clone(), 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        // a global template with a different hidden width than the clients'
        let wide = Mlp::init(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 1).unwrap();
        state.global_extractors.insert(ModalityId(0), wide);
        state.warm_local = true;
        state.round = 1;
        let err = run_round(&mut state, &mut ps, &hyper(0.1), 1).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("client 1")), "{err}");
    }

    #[test]
    fn run_training_logs_every_client_each_round() {
        let t = template();
        let mut ps = table1(&t);
        let mut state = ServerState::new(t, 0, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
        let log = run_training(&mut state, &mut ps, &hyper(0.1), 1, 0).unwrap();
        assert_eq!(log.len(), 3);
        assert!(matches!(run_training(&mut state, &mut ps, &hyper(0.1), 0, 0), Err(Error::Config(_))));
    }
}
