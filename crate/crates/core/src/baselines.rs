//! Comparison methods: independent local training, a unified zero-filled
//! model averaged with FedAvg, and single-site training on pooled multimodal
//! data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{client_update, HospitalDataset, LambdaMode, LocalModel, TrainHyper};
use crate::data::pool;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::client_round_seed;
use crate::server::{round_row, GlobalTemplate, Participant, RoundRow};
use crate::types::ModalityId;

/// Hospital id used for the pooled centralized participant.
pub const POOLED_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "fedmm")]
    FedMM,
    #[serde(rename = "local")]
    LocalTraining,
    #[serde(rename = "multi-fedavg")]
    MultiFedAvg,
    #[serde(rename = "centralized")]
    CentralizedFusion,
}

impl MethodId {
    pub const ALL: [MethodId; 4] =
        [MethodId::FedMM, MethodId::LocalTraining, MethodId::MultiFedAvg, MethodId::CentralizedFusion];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::FedMM => "fedmm",
            MethodId::LocalTraining => "local",
            MethodId::MultiFedAvg => "multi-fedavg",
            MethodId::CentralizedFusion => "centralized",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected fedmm, local, multi-fedavg or centralized")))
    }
}

/// Baselines train on BCE alone.
pub fn bce_only<T: Scalar>(hyper: &TrainHyper<T>) -> TrainHyper<T> {
    TrainHyper { lambda: LambdaMode::Fixed(T::zero()), ..hyper.clone() }
}

/// Trains each participant on its own data, without prototypes or any
/// exchange, for `rounds` x `local_epochs` epochs. The per-round seeds match
/// the federated loop, so a single-client federation with the L2 term off
/// reproduces this exactly.
pub fn local_training<T: Scalar>(
    participants: &mut [Participant<T>],
    rounds: u32,
    hyper: &TrainHyper<T>,
    base_seed: u64,
) -> Result<Vec<RoundRow>> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    let hyper = bce_only(hyper);
    let lambda = T::zero();
    let per_client = participants
        .par_iter_mut()
        .map(|p| {
            let mut rows = Vec::with_capacity(rounds as usize);
            for round in 1..=rounds {
                let (model, report) =
                    client_update(&p.model, &p.train, None, round, &hyper, None, client_round_seed(base_seed, round, p.id))?;
                p.model = model;
                rows.push(round_row(round, p, lambda, &report.loss)?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    // interleave into (round, client) order, as the federated loop logs
    let mut log = Vec::with_capacity(rounds as usize * participants.len());
    for r in 0..rounds as usize {
        log.extend(per_client.iter().map(|rows| rows[r].clone()));
    }
    Ok(log)
}

/// Unified all-modality participants for Multi-FedAvg: every absent modality
/// is zero-filled at the input, every client gets every extractor, and all
/// clients start from one shared classifier. Returns the participants and the
/// zero-filled modalities per client.
pub fn unify_participants<T: Scalar>(
    template: &GlobalTemplate,
    splits: &[(usize, HospitalDataset<T>, HospitalDataset<T>)],
    base_seed: u64,
) -> Result<(Vec<Participant<T>>, BTreeMap<usize, Vec<ModalityId>>)> {
    let dims = template.input_dims();
    let all: BTreeSet<ModalityId> = dims.keys().copied().collect();
    let mut filled = BTreeMap::new();
    let mut out = Vec::with_capacity(splits.len());
    for (id, train, test) in splits {
        let (train, absent) = train.zero_filled(&dims);
        let (test, _) = test.zero_filled(&dims);
        let mut model: LocalModel<T> = template.init_local_model(&all, *id, base_seed)?;
        model.classifier = template.init_classifier(all.len(), POOLED_ID, base_seed)?;
        filled.insert(*id, absent);
        out.push(Participant { id: *id, train, test, model });
    }
    Ok((out, filled))
}

/// The pooled centralized participant: the union of all fully multimodal
/// train and test samples. Returns it with the number of excluded
/// (single-modality) train and test samples.
pub fn pooled_participant<T: Scalar>(
    template: &GlobalTemplate,
    splits: &[(usize, HospitalDataset<T>, HospitalDataset<T>)],
    base_seed: u64,
) -> Result<(Participant<T>, usize, usize)> {
    let all: BTreeSet<ModalityId> = template.modalities.keys().copied().collect();
    let mut trains = Vec::new();
    let mut tests = Vec::new();
    let (mut excluded_train, mut excluded_test) = (0, 0);
    for (_, train, test) in splits {
        if train.mask() == all {
            trains.push(train.clone());
            tests.push(test.clone());
        } else {
            excluded_train += train.len();
            excluded_test += test.len();
        }
    }
    if trains.is_empty() {
        return Err(Error::Data("no hospital holds every modality; centralized fusion has no samples".into()));
    }
    let train = pool(POOLED_ID, &trains)?;
    let test = pool(POOLED_ID, &tests)?;
    let model = template.init_local_model(&all, POOLED_ID, base_seed)?;
    Ok((Participant { id: POOLED_ID, train, test, model }, excluded_train, excluded_test))
}
