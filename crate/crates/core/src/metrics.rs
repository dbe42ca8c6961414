//! Accuracy, ROC and AUC for binary scores, plus cross-seed summaries.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::ClassLabel;

fn check_inputs<T>(scores: &[T], labels: &[ClassLabel]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Metric("no scores".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

fn class_totals(labels: &[ClassLabel]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Fraction of samples where `score >= threshold` matches a positive label.
/// A score exactly at the threshold predicts class 1.
pub fn accuracy<T: Scalar>(scores: &[T], labels: &[ClassLabel], threshold: T) -> Result<f64> {
    check_inputs(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, l)| (s >= threshold) == l.is_positive())
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

fn total_cmp<T: Scalar>(a: T, b: T) -> Ordering {
    a.as_f64().total_cmp(&b.as_f64())
}

/// Mann-Whitney AUC: `(#(pos > neg) + 0.5 #(pos == neg)) / (P N)`, computed
/// from tie-averaged ranks.
pub fn auc<T: Scalar>(scores: &[T], labels: &[ClassLabel]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_totals(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| total_cmp(scores[a], scores[b]));
    // Sum of 1-based ranks of positives, averaging ranks within tie groups.
    // Doubled to stay in integers.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j, average (i + 1 + j) / 2
        let avg_x2 = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k].is_positive()).count() as u128;
        rank_sum_x2 += avg_x2 * positives;
        i = j;
    }
    let p = pos as u128;
    // U = R - P(P+1)/2 ; doubled
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC curve from thresholds at every distinct score, highest first. The
/// first point is `(0, 0)` at threshold `+inf`; the last is `(1, 1)`.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[ClassLabel]) -> Result<Vec<RocPoint>> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_totals(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| total_cmp(scores[b], scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s.as_f64(),
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
        .sum()
}

/// Final test metrics of one (method, hospital, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub hospital: String,
    pub seed: u64,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub hospital: String,
    pub count: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
}

/// Mean and sample standard deviation (n - 1). A single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups runs by (method, hospital); rows come out sorted by that key and
/// values within a group are taken in (seed, input) order.
pub fn summarize(runs: &[RunSummary]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.method.clone(), r.hospital.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, hospital), mut rs)| {
            rs.sort_by_key(|r| r.seed);
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let aucs: Vec<f64> = rs.iter().map(|r| r.auc).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_auc, std_auc) = mean_std(&aucs);
            SummaryRow { method, hospital, count: rs.len(), mean_accuracy, std_accuracy, mean_auc, std_auc }
        })
        .collect()
}
