//! Class-mean embeddings and their cross-client aggregation into prototypes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{ClassLabel, ModalityId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMean<T> {
    pub mean: Vec<T>,
    pub count: usize,
}

/// Per-class mean embeddings for one modality on one client. Classes without
/// samples are absent.
pub type ClassMeans<T> = BTreeMap<ClassLabel, ClassMean<T>>;

/// Global per-(modality, class) prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet<T> {
    entries: BTreeMap<(ModalityId, ClassLabel), Vec<T>>,
    /// Round whose aggregation produced this set.
    pub round_produced: u32,
    /// (modality, class) pairs that no client could report.
    pub missing: Vec<(ModalityId, ClassLabel)>,
}

impl<T: Scalar> PrototypeSet<T> {
    pub fn new(round_produced: u32) -> Self {
        PrototypeSet { entries: BTreeMap::new(), round_produced, missing: Vec::new() }
    }

    pub fn insert(&mut self, modality: ModalityId, class: ClassLabel, proto: Vec<T>) {
        self.entries.insert((modality, class), proto);
    }

    pub fn get(&self, modality: ModalityId, class: ClassLabel) -> Option<&[T]> {
        self.entries.get(&(modality, class)).map(Vec::as_slice)
    }

    pub fn modalities(&self) -> Vec<ModalityId> {
        let mut out: Vec<ModalityId> = self.entries.keys().map(|(m, _)| *m).collect();
        out.dedup();
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ModalityId, ClassLabel), &Vec<T>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every prototype of `modality` as a class map.
    pub fn for_modality(&self, modality: ModalityId) -> BTreeMap<ClassLabel, &[T]> {
        self.entries
            .iter()
            .filter(|((m, _), _)| *m == modality)
            .map(|((_, c), v)| (*c, v.as_slice()))
            .collect()
    }
}

/// Per-class arithmetic mean of embeddings, summed in input order.
pub fn class_mean_embeddings<T: Scalar>(embeddings: &[Vec<T>], labels: &[ClassLabel]) -> Result<ClassMeans<T>> {
    if embeddings.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut sums: BTreeMap<ClassLabel, (Vec<T>, usize)> = BTreeMap::new();
    for (h, &label) in embeddings.iter().zip(labels) {
        if h.len() != dim {
            return Err(Error::Shape(format!("embedding length {} differs from {dim}", h.len())));
        }
        let entry = sums.entry(label).or_insert_with(|| (vec![T::zero(); dim], 0));
        for (s, &v) in entry.0.iter_mut().zip(h) {
            *s += v;
        }
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(label, (sum, count))| {
            let n = T::of(count as f64);
            (label, ClassMean { mean: sum.into_iter().map(|s| s / n).collect(), count })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeWeighting {
    /// Plain mean over reporting clients.
    #[default]
    Unweighted,
    /// Mean weighted by each client's per-class sample count.
    BySampleCount,
}

/// Aggregated class prototypes for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPrototypes<T> {
    pub prototypes: BTreeMap<ClassLabel, Vec<T>>,
    /// Classes no client reported.
    pub absent: Vec<ClassLabel>,
}

/// Cross-client prototype for each class, averaging only over the clients that
/// reported that class. `reports` must be in ascending client-id order.
pub fn aggregate_prototypes<T: Scalar>(
    reports: &[&ClassMeans<T>],
    weighting: PrototypeWeighting,
) -> Result<AggregatedPrototypes<T>> {
    if reports.is_empty() {
        return Err(Error::Aggregation("no class-mean reports to aggregate".into()));
    }
    let mut prototypes = BTreeMap::new();
    let mut absent = Vec::new();
    for class in ClassLabel::ALL {
        let contributors: Vec<&ClassMean<T>> = reports.iter().filter_map(|r| r.get(&class)).collect();
        let Some(first) = contributors.first() else {
            absent.push(class);
            continue;
        };
        let dim = first.mean.len();
        let mut sum = vec![T::zero(); dim];
        let mut denom = T::zero();
        for c in &contributors {
            if c.mean.len() != dim {
                return Err(Error::Shape(format!(
                    "class {class} means have lengths {dim} and {}",
                    c.mean.len()
                )));
            }
            let w = match weighting {
                PrototypeWeighting::Unweighted => T::one(),
                PrototypeWeighting::BySampleCount => T::of(c.count as f64),
            };
            for (s, &v) in sum.iter_mut().zip(&c.mean) {
                *s += w * v;
            }
            denom += w;
        }
        if !(denom > T::zero()) {
            return Err(Error::Aggregation(format!("class {class} has zero total weight")));
        }
        prototypes.insert(class, sum.into_iter().map(|s| s / denom).collect());
    }
    Ok(AggregatedPrototypes { prototypes, absent })
}
