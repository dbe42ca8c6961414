//! Per-hospital datasets: synthetic generation, CSV ingestion, splitting and
//! standardization.

mod feature_csv;
mod synthetic;

pub use feature_csv::{load_feature_csv, read_feature_file, write_feature_file, HospitalFiles};
pub use synthetic::{generate_synthetic, HospitalSpec, ModalitySpec, SyntheticData, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{ClassLabel, ModalityId};

/// One hospital's samples. Each present modality holds one feature row per
/// sample, aligned with `sample_ids`; the set of present modalities is the
/// hospital's modality mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalDataset<T> {
    pub hospital: usize,
    pub sample_ids: Vec<String>,
    pub labels: Vec<ClassLabel>,
    pub features: BTreeMap<ModalityId, Vec<Vec<T>>>,
}

impl<T: Scalar> HospitalDataset<T> {
    pub fn new(
        hospital: usize,
        sample_ids: Vec<String>,
        labels: Vec<ClassLabel>,
        features: BTreeMap<ModalityId, Vec<Vec<T>>>,
    ) -> Result<Self> {
        let ds = HospitalDataset { hospital, sample_ids, labels, features };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Data(format!("hospital {} has an empty modality mask", self.hospital)));
        }
        if self.labels.len() != self.sample_ids.len() {
            return Err(Error::Data(format!(
                "hospital {}: {} labels for {} samples",
                self.hospital,
                self.labels.len(),
                self.sample_ids.len()
            )));
        }
        for (m, rows) in &self.features {
            if rows.len() != self.sample_ids.len() {
                return Err(Error::Data(format!(
                    "hospital {} modality {m}: {} rows for {} samples",
                    self.hospital,
                    rows.len(),
                    self.sample_ids.len()
                )));
            }
            let width = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != width) {
                return Err(Error::Data(format!(
                    "hospital {} modality {m}: ragged feature rows",
                    self.hospital
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn mask(&self) -> BTreeSet<ModalityId> {
        self.features.keys().copied().collect()
    }

    pub fn has_modality(&self, m: ModalityId) -> bool {
        self.features.contains_key(&m)
    }

    /// Feature dimension of a present modality.
    pub fn width(&self, m: ModalityId) -> Option<usize> {
        self.features.get(&m).and_then(|rows| rows.first()).map(Vec::len)
    }

    /// Per-modality input rows for one sample, ascending modality order.
    pub fn sample(&self, index: usize) -> Vec<(ModalityId, &[T])> {
        self.features.iter().map(|(&m, rows)| (m, rows[index].as_slice())).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0, 0];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        HospitalDataset {
            hospital: self.hospital,
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            features: self
                .features
                .iter()
                .map(|(&m, rows)| (m, indices.iter().map(|&i| rows[i].clone()).collect()))
                .collect(),
        }
    }

    /// Keeps only the listed modalities. Returns `None` if none remain.
    pub fn restrict(&self, keep: &BTreeSet<ModalityId>) -> Option<Self> {
        let features: BTreeMap<_, _> = self
            .features
            .iter()
            .filter(|(m, _)| keep.contains(m))
            .map(|(&m, rows)| (m, rows.clone()))
            .collect();
        if features.is_empty() {
            return None;
        }
        Some(HospitalDataset { features, ..self.clone() })
    }

    /// Adds all-zero rows for every modality in `dims` the hospital lacks.
    /// Returns the filled dataset and the modalities that were filled.
    pub fn zero_filled(&self, dims: &BTreeMap<ModalityId, usize>) -> (Self, Vec<ModalityId>) {
        let mut out = self.clone();
        let mut filled = Vec::new();
        for (&m, &d) in dims {
            if !out.features.contains_key(&m) {
                out.features.insert(m, vec![vec![T::zero(); d]; self.len()]);
                filled.push(m);
            }
        }
        (out, filled)
    }

    pub fn cast<U: Scalar>(&self) -> HospitalDataset<U> {
        HospitalDataset {
            hospital: self.hospital,
            sample_ids: self.sample_ids.clone(),
            labels: self.labels.clone(),
            features: self
                .features
                .iter()
                .map(|(&m, rows)| {
                    (m, rows.iter().map(|r| r.iter().map(|v| U::of(v.as_f64())).collect()).collect())
                })
                .collect(),
        }
    }
}

/// Concatenates datasets that share a modality mask. The result is tagged with
/// `hospital` and sample ids are kept as-is.
pub fn pool<T: Scalar>(hospital: usize, parts: &[HospitalDataset<T>]) -> Result<HospitalDataset<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Data("nothing to pool".into()))?;
    let mask = first.mask();
    let mut out = HospitalDataset {
        hospital,
        sample_ids: Vec::new(),
        labels: Vec::new(),
        features: mask.iter().map(|&m| (m, Vec::new())).collect(),
    };
    for part in parts {
        if part.mask() != mask {
            return Err(Error::Data("cannot pool datasets with different modality masks".into()));
        }
        out.sample_ids.extend(part.sample_ids.iter().cloned());
        out.labels.extend(part.labels.iter().copied());
        for (m, rows) in &part.features {
            out.features.get_mut(m).expect("mask checked").extend(rows.iter().cloned());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Stratified random split. Per class, `floor(fraction * n)` samples go to
/// train and the rest to test. Both halves keep the original sample order.
pub fn train_test_split<T: Scalar>(
    data: &HospitalDataset<T>,
    split: &SplitSpec,
) -> Result<(HospitalDataset<T>, HospitalDataset<T>)> {
    if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {}",
            split.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in ClassLabel::ALL {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "hospital {} has {} samples of class {class}; need at least 2",
                data.hospital,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = ((split.train_fraction * idx.len() as f64).floor() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Per-feature mean and scale fitted on a train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats<T> {
    pub mean: Vec<T>,
    /// Divisor applied after centering; 1 for near-constant features.
    pub scale: Vec<T>,
}

pub const STD_FLOOR: f64 = 1e-12;

/// z-scores every modality with statistics from `train` only.
pub fn standardize<T: Scalar>(
    train: &HospitalDataset<T>,
    test: &HospitalDataset<T>,
) -> Result<(HospitalDataset<T>, HospitalDataset<T>, BTreeMap<ModalityId, FeatureStats<T>>)> {
    if train.is_empty() {
        return Err(Error::Data(format!("hospital {} has an empty train split", train.hospital)));
    }
    let mut stats = BTreeMap::new();
    for (&m, rows) in &train.features {
        let d = rows[0].len();
        let n = T::of(rows.len() as f64);
        let mut mean = vec![T::zero(); d];
        for r in rows {
            for (acc, &v) in mean.iter_mut().zip(r) {
                *acc += v;
            }
        }
        for v in mean.iter_mut() {
            *v = *v / n;
        }
        let mut var = vec![T::zero(); d];
        for r in rows {
            for ((acc, &v), &mu) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd < T::of(STD_FLOOR) {
                    T::one()
                } else {
                    sd
                }
            })
            .collect();
        stats.insert(m, FeatureStats { mean, scale });
    }
    let apply = |ds: &HospitalDataset<T>| -> Result<HospitalDataset<T>> {
        let mut out = ds.clone();
        for (m, rows) in out.features.iter_mut() {
            let s = stats.get(m).ok_or_else(|| {
                Error::Data(format!("modality {m} missing from the train split"))
            })?;
            for r in rows.iter_mut() {
                for ((v, &mu), &sc) in r.iter_mut().zip(&s.mean).zip(&s.scale) {
                    *v = (*v - mu) / sc;
                }
            }
        }
        Ok(out)
    };
    let train_out = apply(train)?;
    let test_out = apply(test)?;
    Ok((train_out, test_out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n0: usize, n1: usize) -> HospitalDataset<f64> {
        let n = n0 + n1;
        let labels = (0..n).map(|i| if i < n0 { ClassLabel::NEGATIVE } else { ClassLabel::POSITIVE }).collect();
        let ids = (0..n).map(|i| format!("s{i:04}")).collect();
        let rows = (0..n).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        HospitalDataset::new(1, ids, labels, BTreeMap::from([(ModalityId(0), rows)])).unwrap()
    }

    #[test]
    fn split_sizes_are_stratified() {
        let ds = toy(5, 5);
        let (train, test) = train_test_split(&ds, &SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        assert_eq!(train.class_counts(), [4, 4]);
        assert_eq!(test.class_counts(), [1, 1]);
    }

    #[test]
    fn split_is_seeded() {
        let ds = toy(20, 13);
        let a = train_test_split(&ds, &SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        let b = train_test_split(&ds, &SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
        let c = train_test_split(&ds, &SplitSpec { train_fraction: 0.8, seed: 2 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.sample_ids, c.0.sample_ids);
        assert_eq!(a.0.len(), c.0.len());
    }

    #[test]
    fn split_union_and_disjointness() {
        for seed in 0..20 {
            let ds = toy(7 + seed as usize, 3 + 2 * seed as usize);
            let (train, test) = train_test_split(&ds, &SplitSpec { train_fraction: 0.8, seed }).unwrap();
            let a: BTreeSet<_> = train.sample_ids.iter().collect();
            let b: BTreeSet<_> = test.sample_ids.iter().collect();
            assert!(a.is_disjoint(&b));
            let all: BTreeSet<_> = ds.sample_ids.iter().collect();
            let union: BTreeSet<_> = a.union(&b).copied().collect();
            assert_eq!(union, all);
        }
    }

    #[test]
    fn split_rejects_tiny_class() {
        let ds = toy(5, 1);
        let err = train_test_split(&ds, &SplitSpec { train_fraction: 0.8, seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let mut train = toy(3, 3);
        for r in train.features.get_mut(&ModalityId(0)).unwrap() {
            r.push(7.0); // constant feature
        }
        let mut test = train.clone();
        for r in test.features.get_mut(&ModalityId(0)).unwrap() {
            r[0] += 10.0;
        }
        let (tr, te, stats) = standardize(&train, &test).unwrap();
        let rows = &tr.features[&ModalityId(0)];
        for j in 0..3 {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-10);
        }
        assert!(rows.iter().all(|r| r[2] == 0.0));
        assert_eq!(stats[&ModalityId(0)].scale[2], 1.0);
        let shifted: f64 =
            te.features[&ModalityId(0)].iter().map(|r| r[0]).sum::<f64>() / te.len() as f64;
        assert!(shifted > 1.0);
    }

    #[test]
    fn zero_fill_adds_missing_modalities_only() {
        let ds = toy(2, 2);
        let dims = BTreeMap::from([(ModalityId(0), 2), (ModalityId(1), 3)]);
        let (filled, which) = ds.zero_filled(&dims);
        assert_eq!(which, vec![ModalityId(1)]);
        assert_eq!(filled.features[&ModalityId(0)], ds.features[&ModalityId(0)]);
        assert!(filled.features[&ModalityId(1)].iter().all(|r| r == &vec![0.0; 3]));
        assert_eq!(filled.labels, ds.labels);
    }
}
