//! One hospital: per-modality extractors feeding a local fusion classifier.
//!
//! Only extractor weights and per-class mean embeddings ever leave the client.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::data::HospitalDataset;
use crate::error::{Error, Result};
use crate::loss::{bce_loss, dynamic_loss_at, lambda_weight, DynamicLoss, LossBreakdown, LossSchedule};
use crate::nn::{ForwardTrace, Gradients, Mlp};
use crate::prototype::{class_mean_embeddings, ClassMeans, PrototypeSet};
use crate::scalar::Scalar;
use crate::types::{ClassLabel, ModalityId};

/// How per-modality embeddings are combined before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Concatenation in ascending modality order.
    #[default]
    Concat,
    /// Element-wise mean.
    Mean,
}

impl Fusion {
    pub fn fused_dim(self, embed_dim: usize, modalities: usize) -> usize {
        match self {
            Fusion::Concat => embed_dim * modalities,
            Fusion::Mean => embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel<T> {
    pub extractors: BTreeMap<ModalityId, Mlp<T>>,
    pub classifier: Mlp<T>,
    pub fusion: Fusion,
}

/// Everything produced by one forward pass over a sample.
#[derive(Debug, Clone)]
pub struct SampleForward<T> {
    pub pred: T,
    pub embeddings: BTreeMap<ModalityId, Vec<T>>,
    pub extractor_traces: BTreeMap<ModalityId, ForwardTrace<T>>,
    pub classifier_trace: ForwardTrace<T>,
}

impl<T: Scalar> LocalModel<T> {
    pub fn new(extractors: BTreeMap<ModalityId, Mlp<T>>, classifier: Mlp<T>, fusion: Fusion) -> Result<Self> {
        let model = LocalModel { extractors, classifier, fusion };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embed_dim()?;
        if let Some((m, e)) = self.extractors.iter().find(|(_, e)| e.output_dim() != d) {
            return Err(Error::Shape(format!(
                "extractor {m} outputs {} but embed_dim is {d}",
                e.output_dim()
            )));
        }
        let fused = self.fusion.fused_dim(d, self.extractors.len());
        if self.classifier.input_dim() != fused {
            return Err(Error::Shape(format!(
                "classifier expects {} inputs, fused embedding has {fused}",
                self.classifier.input_dim()
            )));
        }
        if self.classifier.output_dim() != 1 {
            return Err(Error::Shape("classifier must have a single output".into()));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> Result<usize> {
        self.extractors
            .values()
            .next()
            .map(Mlp::output_dim)
            .ok_or_else(|| Error::Config("model has no extractors".into()))
    }

    pub fn modalities(&self) -> Vec<ModalityId> {
        self.extractors.keys().copied().collect()
    }

    fn check_sample(&self, sample: &[(ModalityId, &[T])]) -> Result<()> {
        let given: Vec<ModalityId> = sample.iter().map(|(m, _)| *m).collect();
        if given != self.modalities() {
            return Err(Error::Shape(format!(
                "sample modalities {given:?} do not match model modalities {:?}",
                self.modalities()
            )));
        }
        Ok(())
    }

    fn fuse(&self, embeddings: &BTreeMap<ModalityId, Vec<T>>) -> Vec<T> {
        match self.fusion {
            Fusion::Concat => embeddings.values().flat_map(|h| h.iter().copied()).collect(),
            Fusion::Mean => {
                let d = embeddings.values().next().map_or(0, Vec::len);
                let mut out = vec![T::zero(); d];
                for h in embeddings.values() {
                    for (o, &v) in out.iter_mut().zip(h) {
                        *o += v;
                    }
                }
                let n = T::of(embeddings.len() as f64);
                out.into_iter().map(|v| v / n).collect()
            }
        }
    }

    /// Extracts each modality's embedding, fuses them, and classifies.
    pub fn forward(&self, sample: &[(ModalityId, &[T])]) -> Result<SampleForward<T>> {
        self.check_sample(sample)?;
        let mut embeddings = BTreeMap::new();
        let mut extractor_traces = BTreeMap::new();
        for &(m, x) in sample {
            let (h, trace) = self.extractors[&m].forward(x)?;
            embeddings.insert(m, h);
            extractor_traces.insert(m, trace);
        }
        let fused = self.fuse(&embeddings);
        let (out, classifier_trace) = self.classifier.forward(&fused)?;
        Ok(SampleForward { pred: out[0], embeddings, extractor_traces, classifier_trace })
    }

    /// Prediction only.
    pub fn predict(&self, sample: &[(ModalityId, &[T])]) -> Result<T> {
        self.check_sample(sample)?;
        let mut embeddings = BTreeMap::new();
        for &(m, x) in sample {
            embeddings.insert(m, self.extractors[&m].predict(x)?);
        }
        Ok(self.classifier.predict(&self.fuse(&embeddings))?[0])
    }

    /// Backpropagates one sample's loss into extractor and classifier
    /// gradients. Embedding gradients from the classifier path and from the
    /// prototype term are summed per modality.
    pub fn backward(
        &self,
        fwd: &SampleForward<T>,
        loss: &DynamicLoss<T>,
    ) -> Result<(BTreeMap<ModalityId, Gradients<T>>, Gradients<T>)> {
        self.backward_parts(fwd, loss.dloss_dpred, None, &loss.dloss_dh)
    }

    /// Backward pass with the classifier driven by `classifier_dpred`. When
    /// `path_scale` is set, the gradient reaching the embeddings through the
    /// classifier is multiplied by it before the prototype gradients are added.
    pub fn backward_parts(
        &self,
        fwd: &SampleForward<T>,
        classifier_dpred: T,
        path_scale: Option<T>,
        dloss_dh: &BTreeMap<ModalityId, Vec<T>>,
    ) -> Result<(BTreeMap<ModalityId, Gradients<T>>, Gradients<T>)> {
        let (cls_grads, mut fused_grad) = self.classifier.backward(&fwd.classifier_trace, &[classifier_dpred])?;
        if let Some(s) = path_scale {
            for g in fused_grad.iter_mut() {
                *g *= s;
            }
        }
        let d = self.embed_dim()?;
        let n = T::of(self.extractors.len() as f64);
        let mut ext_grads = BTreeMap::new();
        for (pos, (m, extractor)) in self.extractors.iter().enumerate() {
            let from_classifier: Vec<T> = match self.fusion {
                Fusion::Concat => fused_grad[pos * d..(pos + 1) * d].to_vec(),
                Fusion::Mean => fused_grad.iter().map(|&g| g / n).collect(),
            };
            let grad_h: Vec<T> = match dloss_dh.get(m) {
                Some(extra) => from_classifier.iter().zip(extra).map(|(&a, &b)| a + b).collect(),
                None => from_classifier,
            };
            let (g, _) = extractor.backward(&fwd.extractor_traces[m], &grad_h)?;
            ext_grads.insert(*m, g);
        }
        Ok((ext_grads, cls_grads))
    }
}

/// Forward pass of a model on one sample (the fusion prediction).
pub fn local_predict<T: Scalar>(model: &LocalModel<T>, sample: &[(ModalityId, &[T])]) -> Result<SampleForward<T>> {
    model.forward(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode<T> {
    /// Sigmoid schedule over rounds.
    Scheduled,
    /// Constant lambda, for baselines and ablations.
    Fixed(T),
}

/// Objective seen by the local classifier. Extractors always train on the
/// dynamic loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierLoss {
    /// The same lambda-weighted loss as the extractors.
    #[default]
    Dynamic,
    /// Plain BCE, independent of lambda.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper<T> {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: T,
    pub schedule: LossSchedule<T>,
    pub lambda: LambdaMode<T>,
    /// Proximal coefficient; 0 disables the term.
    pub prox_mu: T,
    /// The classifier is held fixed for rounds `1..=freeze_classifier_rounds`.
    pub freeze_classifier_rounds: u32,
    pub classifier_loss: ClassifierLoss,
}

impl<T: Scalar> TrainHyper<T> {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr < T::zero() || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be a finite value >= 0, got {}", self.lr)));
        }
        if self.prox_mu < T::zero() {
            return Err(Error::Config("prox_mu must be >= 0".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, round: u32) -> T {
        match self.lambda {
            LambdaMode::Scheduled => lambda_weight(round as i64, &self.schedule),
            LambdaMode::Fixed(v) => v,
        }
    }
}

/// A client's per-round upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport<T> {
    pub client_id: usize,
    pub round: u32,
    pub extractors: BTreeMap<ModalityId, Mlp<T>>,
    pub class_means: BTreeMap<ModalityId, ClassMeans<T>>,
    pub train_sample_count: usize,
    /// Mean per-sample loss over the round's local epochs.
    pub loss: LossBreakdown<T>,
}

fn check_data<T: Scalar>(model: &LocalModel<T>, data: &HospitalDataset<T>) -> Result<()> {
    let mask: Vec<ModalityId> = data.mask().into_iter().collect();
    if mask != model.modalities() {
        return Err(Error::Shape(format!(
            "hospital {} holds modalities {mask:?} but its model has {:?}",
            data.hospital,
            model.modalities()
        )));
    }
    for (m, e) in &model.extractors {
        if data.width(*m).is_some_and(|w| w != e.input_dim()) {
            return Err(Error::Shape(format!(
                "hospital {} modality {m} has width {:?}, extractor expects {}",
                data.hospital,
                data.width(*m),
                e.input_dim()
            )));
        }
    }
    Ok(())
}

/// Class means of every modality's embeddings over a whole dataset.
pub fn embedding_class_means<T: Scalar>(
    model: &LocalModel<T>,
    data: &HospitalDataset<T>,
) -> Result<BTreeMap<ModalityId, ClassMeans<T>>> {
    let mut out = BTreeMap::new();
    for (m, extractor) in &model.extractors {
        let rows = data
            .features
            .get(m)
            .ok_or_else(|| Error::Shape(format!("hospital {} lacks modality {m}", data.hospital)))?;
        let embeddings = rows.iter().map(|x| extractor.predict(x)).collect::<Result<Vec<_>>>()?;
        out.insert(*m, class_mean_embeddings(&embeddings, &data.labels)?);
    }
    Ok(out)
}

/// One round of local training.
///
/// Runs `local_epochs` passes of minibatch SGD over a seeded shuffle (the last
/// partial batch is kept). Each batch step uses the mean per-sample gradient
/// of the dynamic loss through the classifier and every extractor. With
/// `prox_mu > 0` and global extractors given, `mu (w - w_global)` is added to
/// extractor gradients. Class means in the report come from a full pass over
/// `data` with the updated extractors.
pub fn client_update<T: Scalar>(
    model: &LocalModel<T>,
    data: &HospitalDataset<T>,
    protos: Option<&PrototypeSet<T>>,
    round: u32,
    hyper: &TrainHyper<T>,
    global_extractors: Option<&BTreeMap<ModalityId, Mlp<T>>>,
    seed: u64,
) -> Result<(LocalModel<T>, ClientReport<T>)> {
    hyper.validate()?;
    if round == 0 {
        return Err(Error::Config("rounds are numbered from 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Data(format!("hospital {} has an empty train split", data.hospital)));
    }
    check_data(model, data)?;
    if let Some(set) = protos {
        for m in model.modalities() {
            for class in ClassLabel::ALL {
                let needed = data.labels.contains(&class);
                if needed && set.get(m, class).is_none() {
                    return Err(Error::Protocol(format!(
                        "hospital {}: no prototype for modality {m}, class {class}",
                        data.hospital
                    )));
                }
            }
        }
    }

    let lambda = hyper.lambda_at(round);
    let train_classifier = round > hyper.freeze_classifier_rounds;
    let use_prox = hyper.prox_mu > T::zero() && global_extractors.is_some();
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(data.len() * hyper.local_epochs);

    for _epoch in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let mut ext_acc: BTreeMap<ModalityId, Gradients<T>> =
                model.extractors.iter().map(|(m, e)| (*m, Gradients::zeros_like(e))).collect();
            let mut cls_acc = Gradients::zeros_like(&model.classifier);
            for &i in batch {
                let sample = data.sample(i);
                let fwd = model.forward(&sample)?;
                let label = data.labels[i];
                let loss = dynamic_loss_at(lambda, &fwd.embeddings, protos, fwd.pred, label, &hyper.schedule)?;
                let (ext_g, cls_g) = match hyper.classifier_loss {
                    ClassifierLoss::Dynamic => model.backward(&fwd, &loss)?,
                    ClassifierLoss::Bce => {
                        let (_, dbce) = bce_loss(fwd.pred, label);
                        model.backward_parts(&fwd, dbce, Some(T::one() - lambda), &loss.dloss_dh)?
                    }
                };
                for (m, g) in &ext_g {
                    ext_acc.get_mut(m).expect("same modalities").add_assign(g)?;
                }
                cls_acc.add_assign(&cls_g)?;
                losses.push(loss.breakdown);
            }
            let inv = T::one() / T::of(batch.len() as f64);
            for (m, g) in ext_acc.iter_mut() {
                g.scale(inv);
                if use_prox {
                    let global = global_extractors
                        .and_then(|ge| ge.get(m))
                        .ok_or_else(|| Error::Protocol(format!("no global extractor for {m}")))?;
                    let drift = model.extractors[m].difference(global)?;
                    g.add_scaled(&drift, hyper.prox_mu)?;
                }
            }
            cls_acc.scale(inv);
            for (m, g) in &ext_acc {
                model.extractors.get_mut(m).expect("same modalities").sgd_step(g, hyper.lr)?;
            }
            if train_classifier {
                model.classifier.sgd_step(&cls_acc, hyper.lr)?;
            }
        }
    }

    if !model.extractors.values().all(Mlp::is_finite) || !model.classifier.is_finite() {
        return Err(Error::Numeric(format!(
            "hospital {}: non-finite weights after round {round}",
            data.hospital
        )));
    }

    let class_means = embedding_class_means(&model, data)?;
    let report = ClientReport {
        client_id: data.hospital,
        round,
        extractors: model.extractors.clone(),
        class_means,
        train_sample_count: data.len(),
        loss: LossBreakdown::mean(&losses),
    };
    Ok((model, report))
}

/// Scores every test sample, in dataset order.
pub fn evaluate_client<T: Scalar>(model: &LocalModel<T>, data: &HospitalDataset<T>) -> Result<(Vec<T>, Vec<ClassLabel>)> {
    if data.is_empty() {
        return Err(Error::Data(format!("hospital {} has an empty test split", data.hospital)));
    }
    check_data(model, data)?;
    let scores = (0..data.len())
        .map(|i| model.predict(&data.sample(i)))
        .collect::<Result<Vec<T>>>()?;
    Ok((scores, data.labels.clone()))
}
