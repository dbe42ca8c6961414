//! The two-term training objective for feature extractors.
//!
//! For a sample with true label `y`, prediction `p` and per-modality embeddings
//! `h_k`, the loss at round `t` is
//!
//! ```text
//! lambda(t) * sum_k (beta / D) * ||h_k - proto(k, y)||_2  +  (1 - lambda(t)) * BCE(p, y)
//! lambda(t) = 1 / (1 + exp(-alpha * (t - t0)))
//! ```
//!
//! Early rounds lean on the supervised BCE term; after `t0` the prototype
//! alignment term dominates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;
use crate::types::{ClassLabel, ModalityId};

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-12;

/// Below this distance the L2 gradient is taken to be zero.
pub const L2_GRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule<T> {
    pub alpha: T,
    pub t0: i64,
    pub beta: T,
    pub embed_dim: usize,
}

impl<T: Scalar> LossSchedule<T> {
    pub fn new(alpha: T, t0: i64, beta: T, embed_dim: usize) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        if !(beta > T::zero()) {
            return Err(Error::Config(format!("beta must be > 0, got {beta}")));
        }
        if embed_dim == 0 {
            return Err(Error::Config("embed_dim must be >= 1".into()));
        }
        Ok(LossSchedule { alpha, t0, beta, embed_dim })
    }

    /// The `beta / D` factor in front of the L2 distance.
    pub fn l2_scale(&self) -> T {
        self.beta / T::of(self.embed_dim as f64)
    }
}

/// `1 / (1 + exp(-alpha (t - t0)))`. Exactly 0.5 at `t == t0`.
pub fn lambda_weight<T: Scalar>(t: i64, schedule: &LossSchedule<T>) -> T {
    let shift = T::of((t - schedule.t0) as f64);
    T::one() / (T::one() + (-schedule.alpha * shift).exp())
}

/// Binary cross-entropy and its derivative with respect to the prediction.
pub fn bce_loss<T: Scalar>(pred: T, label: ClassLabel) -> (T, T) {
    let eps = T::of(BCE_EPS);
    let p = pred.max(eps).min(T::one() - eps);
    let one = T::one();
    if label.is_positive() {
        (-p.ln(), -one / p)
    } else {
        (-(one - p).ln(), one / (one - p))
    }
}

fn check_len<T>(h: &[T], proto: &[T], embed_dim: usize) -> Result<()> {
    if h.len() != proto.len() || h.len() != embed_dim {
        return Err(Error::Shape(format!(
            "embedding length {} / prototype length {} / embed_dim {}",
            h.len(),
            proto.len(),
            embed_dim
        )));
    }
    Ok(())
}

/// `(beta / D) * ||h - proto||_2` (unsquared) and its gradient in `h`.
pub fn l2_prototype_term<T: Scalar>(h: &[T], proto: &[T], schedule: &LossSchedule<T>) -> Result<(T, Vec<T>)> {
    check_len(h, proto, schedule.embed_dim)?;
    let diff: Vec<T> = h.iter().zip(proto).map(|(&a, &b)| a - b).collect();
    let norm = diff.iter().map(|&d| d * d).sum::<T>().sqrt();
    let scale = schedule.l2_scale();
    let grad = if norm < T::of(L2_GRAD_EPS) {
        vec![T::zero(); diff.len()]
    } else {
        diff.iter().map(|&d| scale * d / norm).collect()
    };
    Ok((scale * norm, grad))
}

/// Per-sample loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    /// Sum over modalities of `(beta/D) * ||h - proto||`, before lambda weighting.
    pub l2_term: T,
    pub bce_term: T,
    pub lambda_used: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn compose(lambda: T, l2_term: T, bce_term: T) -> Self {
        LossBreakdown {
            l2_term,
            bce_term,
            lambda_used: lambda,
            total: lambda * l2_term + (T::one() - lambda) * bce_term,
        }
    }

    /// Lambda-weighted L2 contribution to `total`.
    pub fn weighted_l2(&self) -> T {
        self.lambda_used * self.l2_term
    }

    /// `(1 - lambda)`-weighted BCE contribution to `total`.
    pub fn weighted_bce(&self) -> T {
        (T::one() - self.lambda_used) * self.bce_term
    }

    /// Field-wise mean. Returns the default for an empty input.
    pub fn mean<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a LossBreakdown<T>>,
    {
        let mut acc = LossBreakdown::default();
        let mut n = 0usize;
        for b in items {
            acc.l2_term += b.l2_term;
            acc.bce_term += b.bce_term;
            acc.lambda_used += b.lambda_used;
            acc.total += b.total;
            n += 1;
        }
        if n > 0 {
            let inv = T::one() / T::of(n as f64);
            acc.l2_term *= inv;
            acc.bce_term *= inv;
            acc.lambda_used *= inv;
            acc.total *= inv;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicLoss<T> {
    pub breakdown: LossBreakdown<T>,
    pub dloss_dpred: T,
    pub dloss_dh: BTreeMap<ModalityId, Vec<T>>,
}

/// Dynamic loss at round `t` using the scheduled lambda.
pub fn dynamic_loss<T: Scalar>(
    t: i64,
    embeddings: &BTreeMap<ModalityId, Vec<T>>,
    protos: Option<&PrototypeSet<T>>,
    pred: T,
    label: ClassLabel,
    schedule: &LossSchedule<T>,
) -> Result<DynamicLoss<T>> {
    dynamic_loss_at(lambda_weight(t, schedule), embeddings, protos, pred, label, schedule)
}

/// Dynamic loss with an explicit lambda.
///
/// Each modality is pulled toward the prototype of the sample's own class.
/// Without prototypes the L2 part and its gradients are exactly zero.
pub fn dynamic_loss_at<T: Scalar>(
    lambda: T,
    embeddings: &BTreeMap<ModalityId, Vec<T>>,
    protos: Option<&PrototypeSet<T>>,
    pred: T,
    label: ClassLabel,
    schedule: &LossSchedule<T>,
) -> Result<DynamicLoss<T>> {
    let (bce, dbce) = bce_loss(pred, label);
    let mut l2_total = T::zero();
    let mut dloss_dh = BTreeMap::new();
    for (&modality, h) in embeddings {
        let grad = match protos {
            Some(set) => {
                let proto = set.get(modality, label).ok_or_else(|| {
                    Error::Protocol(format!("no prototype for modality {modality}, class {label}"))
                })?;
                let (l2, g) = l2_prototype_term(h, proto, schedule)?;
                l2_total += l2;
                g.into_iter().map(|v| lambda * v).collect()
            }
            None => {
                if h.len() != schedule.embed_dim {
                    return Err(Error::Shape(format!(
                        "embedding for {modality} has length {}, expected {}",
                        h.len(),
                        schedule.embed_dim
                    )));
                }
                vec![T::zero(); h.len()]
            }
        };
        dloss_dh.insert(modality, grad);
    }
    Ok(DynamicLoss {
        breakdown: LossBreakdown::compose(lambda, l2_total, bce),
        dloss_dpred: (T::one() - lambda) * dbce,
        dloss_dh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::central_difference;
    use proptest::prelude::*;

    fn default_schedule(d: usize) -> LossSchedule<f64> {
        LossSchedule::new(0.05, 30, 0.25, d).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let s = default_schedule(2);
        assert_eq!(lambda_weight(30, &s), 0.5);
        // 1 / (1 + e^{-3.5}) and 1 / (1 + e^{1.5})
        assert!((lambda_weight(100, &s) - 0.970_687_769_248_643_6).abs() < 1e-12);
        assert!((lambda_weight(0, &s) - 0.182_425_523_806_356_35).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation() {
        assert!(LossSchedule::new(0.0, 30, 0.25, 4).is_err());
        assert!(LossSchedule::new(0.05, 30, -1.0, 4).is_err());
        assert!(LossSchedule::new(0.05, 30, 0.25, 0).is_err());
    }

    #[test]
    fn bce_examples() {
        let (l, _) = bce_loss(0.5, ClassLabel::POSITIVE);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = bce_loss(0.9_f64, ClassLabel::POSITIVE);
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-12);
        let (l, _) = bce_loss(0.999_999_9, ClassLabel::POSITIVE);
        assert!(l < 1e-6);
        // clamped: bounded by -ln(eps)
        let (l, d) = bce_loss(0.0, ClassLabel::POSITIVE);
        assert!(l <= -(BCE_EPS.ln()) + 1e-9 && d.is_finite());
        let (l, _) = bce_loss(1.0_f64, ClassLabel::NEGATIVE);
        assert!(l.is_finite());
    }

    #[test]
    fn l2_examples() {
        let s = default_schedule(2);
        let (l, g) = l2_prototype_term(&[1.0, 1.0], &[1.0, 1.0], &s).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let (l, _) = l2_prototype_term(&[3.0, 4.0], &[0.0, 0.0], &s).unwrap();
        assert!((l - 0.625).abs() < 1e-15);
        assert!(matches!(l2_prototype_term(&[1.0], &[1.0, 2.0], &s), Err(Error::Shape(_))));
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let s = default_schedule(4);
        let proto = [0.3, -0.2, 1.1, 0.0];
        let h = [1.0, 0.4, -0.5, 0.25];
        let (_, g) = l2_prototype_term(&h, &proto, &s).unwrap();
        let fd = central_difference(&h, |v| l2_prototype_term(v, &proto, &s).unwrap().0, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() / a.abs().max(1e-8) < 1e-4);
        }
    }

    fn one_modality_protos(proto: Vec<f64>) -> PrototypeSet<f64> {
        let mut set = PrototypeSet::new(1);
        set.insert(ModalityId(0), ClassLabel::POSITIVE, proto.clone());
        set.insert(ModalityId(0), ClassLabel::NEGATIVE, proto);
        set
    }

    #[test]
    fn dynamic_loss_without_prototypes() {
        let s = default_schedule(2);
        let emb = BTreeMap::from([(ModalityId(0), vec![0.5, -0.5])]);
        let out = dynamic_loss(10, &emb, None, 0.7, ClassLabel::POSITIVE, &s).unwrap();
        let lambda = lambda_weight(10, &s);
        let (bce, _) = bce_loss(0.7, ClassLabel::POSITIVE);
        assert_eq!(out.breakdown.total, (1.0 - lambda) * bce);
        assert_eq!(out.breakdown.l2_term, 0.0);
        assert_eq!(out.breakdown.lambda_used, lambda);
        assert!(out.dloss_dh[&ModalityId(0)].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dynamic_loss_composed_example() {
        let s = default_schedule(2);
        let protos = one_modality_protos(vec![0.2, 0.4]);
        let emb = BTreeMap::from([(ModalityId(0), vec![0.2, 0.4])]);
        let out = dynamic_loss(30, &emb, Some(&protos), 0.5, ClassLabel::POSITIVE, &s).unwrap();
        assert!((out.breakdown.total - 0.346_573_590_279_972_6).abs() < 1e-12);
    }

    #[test]
    fn dynamic_loss_late_rounds_are_l2_dominated() {
        let s = default_schedule(2);
        let out = dynamic_loss(100, &BTreeMap::new(), None, 0.5, ClassLabel::POSITIVE, &s).unwrap();
        assert!(1.0 - out.breakdown.lambda_used < 0.04);
    }

    #[test]
    fn dynamic_loss_missing_prototype_is_protocol_error() {
        let s = default_schedule(2);
        let protos = one_modality_protos(vec![0.0, 0.0]);
        let emb = BTreeMap::from([(ModalityId(1), vec![0.2, 0.4])]);
        let err = dynamic_loss(1, &emb, Some(&protos), 0.5, ClassLabel::POSITIVE, &s).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn uses_prototype_of_true_class() {
        let s = default_schedule(2);
        let mut protos = PrototypeSet::new(1);
        protos.insert(ModalityId(0), ClassLabel::NEGATIVE, vec![0.0, 0.0]);
        protos.insert(ModalityId(0), ClassLabel::POSITIVE, vec![3.0, 4.0]);
        let emb = BTreeMap::from([(ModalityId(0), vec![0.0, 0.0])]);
        let neg = dynamic_loss_at(1.0, &emb, Some(&protos), 0.5, ClassLabel::NEGATIVE, &s).unwrap();
        let pos = dynamic_loss_at(1.0, &emb, Some(&protos), 0.5, ClassLabel::POSITIVE, &s).unwrap();
        assert_eq!(neg.breakdown.l2_term, 0.0);
        assert!((pos.breakdown.l2_term - 0.625).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lambda_is_monotone(a in -500i64..500, b in -500i64..500, alpha in 0.001f64..2.0, t0 in -50i64..150) {
            let s = LossSchedule::new(alpha, t0, 0.25, 4).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let l = lambda_weight(lo, &s);
            let h = lambda_weight(hi, &s);
            prop_assert!(l <= h);
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn breakdown_decomposes_exactly(
            h in proptest::collection::vec(-3.0f64..3.0, 3),
            p in proptest::collection::vec(-3.0f64..3.0, 3),
            pred in 0.01f64..0.99,
            t in 0i64..120,
            positive in any::<bool>(),
        ) {
            let s = LossSchedule::new(0.05, 30, 0.25, 3).unwrap();
            let mut set = PrototypeSet::new(0);
            set.insert(ModalityId(0), ClassLabel::NEGATIVE, p.clone());
            set.insert(ModalityId(0), ClassLabel::POSITIVE, p);
            let label = if positive { ClassLabel::POSITIVE } else { ClassLabel::NEGATIVE };
            let emb = BTreeMap::from([(ModalityId(0), h)]);
            let out = dynamic_loss(t, &emb, Some(&set), pred, label, &s).unwrap();
            let b = out.breakdown;
            prop_assert_eq!(b.total, b.lambda_used * b.l2_term + (1.0 - b.lambda_used) * b.bce_term);
            prop_assert!(b.bce_term >= 0.0 && b.l2_term >= 0.0);
        }
    }
}
