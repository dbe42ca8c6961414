//! Linear-Gaussian multimodal generator.
//!
//! Each sample draws a latent `z ~ N(mu_y, I)` with the two class means
//! `class_separation` apart along the diagonal direction. Modality `k` observes
//! `A_k z + N(0, noise_sigma^2 I)`, where `A_k` is a fixed random matrix with
//! entries `N(0, 1) / sqrt(latent_dim)`. Hospitals holding several modalities
//! observe all of them from the same latent draw.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::HospitalDataset;
use crate::error::{Error, Result};
use crate::seed::{derive, TAG_HOSPITAL};
use crate::types::{ClassLabel, ModalityId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub observed_dim: usize,
    pub mixing_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalSpec {
    /// Indices into [`SyntheticSpec::modalities`].
    pub modalities: Vec<usize>,
    /// Sample counts for class 0 and class 1.
    pub counts: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub modalities: Vec<ModalitySpec>,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub hospitals: Vec<HospitalSpec>,
}

impl Default for SyntheticSpec {
    /// Three hospitals, two modalities: modality A only, both, modality B only.
    fn default() -> Self {
        SyntheticSpec {
            latent_dim: 8,
            modalities: vec![
                ModalitySpec { name: "A".into(), observed_dim: 16, mixing_seed: 101 },
                ModalitySpec { name: "B".into(), observed_dim: 16, mixing_seed: 202 },
            ],
            class_separation: 2.0,
            noise_sigma: 1.0,
            hospitals: vec![
                HospitalSpec { modalities: vec![0], counts: [199, 210] },
                HospitalSpec { modalities: vec![0, 1], counts: [315, 285] },
                HospitalSpec { modalities: vec![1], counts: [203, 219] },
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        if let Some(m) = self.modalities.iter().find(|m| m.observed_dim == 0) {
            return Err(Error::Config(format!("modality {} has observed_dim 0", m.name)));
        }
        if !(self.class_separation >= 0.0) || !self.class_separation.is_finite() {
            return Err(Error::Config("class_separation must be a finite value >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be a finite value >= 0".into()));
        }
        if self.hospitals.is_empty() {
            return Err(Error::Config("at least one hospital is required".into()));
        }
        for (h, spec) in self.hospitals.iter().enumerate() {
            if spec.modalities.is_empty() {
                return Err(Error::Config(format!("hospital {} has no modalities", h + 1)));
            }
            if let Some(&bad) = spec.modalities.iter().find(|&&m| m >= self.modalities.len()) {
                return Err(Error::Config(format!("hospital {} references modality {bad}", h + 1)));
            }
        }
        for (k, m) in self.modalities.iter().enumerate() {
            if !self.hospitals.iter().any(|h| h.modalities.contains(&k)) {
                return Err(Error::Config(format!("modality {} is held by no hospital", m.name)));
            }
        }
        Ok(())
    }

    fn class_mean(&self, label: ClassLabel) -> Vec<f64> {
        let half = 0.5 * self.class_separation / (self.latent_dim as f64).sqrt();
        let sign = if label.is_positive() { 1.0 } else { -1.0 };
        vec![sign * half; self.latent_dim]
    }

    /// Row-major `[observed_dim x latent_dim]` mixing matrix of modality `k`.
    pub fn mixing_matrix(&self, k: usize) -> Vec<f64> {
        let m = &self.modalities[k];
        let mut rng = ChaCha8Rng::seed_from_u64(m.mixing_seed);
        let scale = 1.0 / (self.latent_dim as f64).sqrt();
        (0..m.observed_dim * self.latent_dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub hospitals: Vec<HospitalDataset<f64>>,
    /// Latent draw per hospital per sample, for audits.
    pub latents: Vec<Vec<Vec<f64>>>,
    /// Mixing matrix per modality, row-major `[observed x latent]`.
    pub mixing: Vec<Vec<f64>>,
}

/// Generates every hospital's dataset. Hospital ids are 1-based; sample ids
/// are `h<hospital>-<index>` zero-padded so lexical and generation order agree.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mixing: Vec<Vec<f64>> = (0..spec.modalities.len()).map(|k| spec.mixing_matrix(k)).collect();
    let means = [spec.class_mean(ClassLabel::NEGATIVE), spec.class_mean(ClassLabel::POSITIVE)];
    let mut hospitals = Vec::with_capacity(spec.hospitals.len());
    let mut latents = Vec::with_capacity(spec.hospitals.len());
    for (h, hs) in spec.hospitals.iter().enumerate() {
        let hospital = h + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[TAG_HOSPITAL, hospital as u64]));
        let mut labels: Vec<ClassLabel> = std::iter::repeat_n(ClassLabel::NEGATIVE, hs.counts[0])
            .chain(std::iter::repeat_n(ClassLabel::POSITIVE, hs.counts[1]))
            .collect();
        labels.shuffle(&mut rng);
        let mut mask = hs.modalities.clone();
        mask.sort_unstable();
        mask.dedup();
        let mut features: BTreeMap<ModalityId, Vec<Vec<f64>>> =
            mask.iter().map(|&k| (ModalityId(k), Vec::with_capacity(labels.len()))).collect();
        let mut zs = Vec::with_capacity(labels.len());
        for label in &labels {
            let z: Vec<f64> = means[label.index()]
                .iter()
                .map(|&mu| mu + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            for &k in &mask {
                let dim = spec.modalities[k].observed_dim;
                let a = &mixing[k];
                let x: Vec<f64> = (0..dim)
                    .map(|r| {
                        let row = &a[r * spec.latent_dim..(r + 1) * spec.latent_dim];
                        let clean: f64 = row.iter().zip(&z).map(|(w, v)| w * v).sum();
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        clean + spec.noise_sigma * eps
                    })
                    .collect();
                features.get_mut(&ModalityId(k)).expect("mask entry").push(x);
            }
            zs.push(z);
        }
        let width = (labels.len().max(1) as f64).log10() as usize + 1;
        let ids = (0..labels.len()).map(|i| format!("h{hospital}-{i:0width$}")).collect();
        hospitals.push(HospitalDataset::new(hospital, ids, labels, features)?);
        latents.push(zs);
    }
    Ok(SyntheticData { hospitals, latents, mixing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_and_counts() {
        let data = generate_synthetic(&SyntheticSpec::default(), 0).unwrap();
        assert_eq!(data.hospitals.len(), 3);
        assert_eq!(data.hospitals[0].mask().into_iter().collect::<Vec<_>>(), vec![ModalityId(0)]);
        assert_eq!(data.hospitals[1].mask().len(), 2);
        assert_eq!(data.hospitals[2].mask().into_iter().collect::<Vec<_>>(), vec![ModalityId(1)]);
        assert_eq!(data.hospitals[0].class_counts(), [199, 210]);
        assert_eq!(data.hospitals[1].class_counts(), [315, 285]);
        assert_eq!(data.hospitals[2].class_counts(), [203, 219]);
        assert_eq!(data.hospitals[1].width(ModalityId(1)), Some(16));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&spec, 4).unwrap());
        assert_ne!(
            generate_synthetic(&spec, 4).unwrap().hospitals[0],
            generate_synthetic(&spec, 5).unwrap().hospitals[0]
        );
    }

    #[test]
    fn views_share_one_latent_without_noise() {
        let spec = SyntheticSpec { noise_sigma: 0.0, ..SyntheticSpec::default() };
        let data = generate_synthetic(&spec, 9).unwrap();
        let h2 = &data.hospitals[1];
        for i in 0..h2.len() {
            let z = &data.latents[1][i];
            for k in 0..2 {
                let x = &h2.features[&ModalityId(k)][i];
                for (r, &xv) in x.iter().enumerate() {
                    let row = &data.mixing[k][r * 8..(r + 1) * 8];
                    let expect: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                    assert!((xv - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut spec = SyntheticSpec::default();
        spec.hospitals[1].modalities = vec![0];
        spec.hospitals[2].modalities = vec![0];
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Config(_))));
        let spec = SyntheticSpec { class_separation: -1.0, ..SyntheticSpec::default() };
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Config(_))));
    }
}
