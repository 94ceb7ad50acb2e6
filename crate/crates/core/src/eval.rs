//! Scoring, record-level vote aggregation and the two baseline
//! multi-class schemes (one-vs-all and a balanced class hierarchy).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::SegmentDataset;
use crate::error::{Error, Result};
use crate::features::{FeatureLayout, FeatureVector};
use crate::model::{argmax_lowest, LinearUnit, MultiClassModel};
use crate::rng::{derive_seed, Stream};
use crate::trainer::{check_classes, train_split, BinaryFit, TrainConfig};

/// Anything that maps a feature vector to a class in `1..=class_count()`.
pub trait SegmentClassifier: Sync {
    fn class_count(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<usize>;
}

impl SegmentClassifier for MultiClassModel {
    fn class_count(&self) -> usize {
        self.q
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        MultiClassModel::predict(self, x)
    }
}

pub fn predict_all<C: SegmentClassifier + ?Sized>(
    model: &C,
    vectors: &[FeatureVector],
) -> Result<Vec<usize>> {
    vectors.par_iter().map(|fv| model.predict(&fv.values)).collect()
}

fn true_labels(vectors: &[FeatureVector]) -> Result<Vec<usize>> {
    vectors
        .iter()
        .map(|fv| fv.label.ok_or_else(|| Error::Unlabeled(fv.record_id.clone())))
        .collect()
}

/// Fraction of labeled segments classified correctly.
pub fn segment_accuracy<C: SegmentClassifier + ?Sized>(
    model: &C,
    vectors: &[FeatureVector],
) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let truth = true_labels(vectors)?;
    let predicted = predict_all(model, vectors)?;
    Ok(fraction_equal(&truth, &predicted))
}

fn fraction_equal(a: &[usize], b: &[usize]) -> f64 {
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    hits as f64 / a.len() as f64
}

/// Plurality vote over one record's segment predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDecision {
    pub record_id: String,
    pub predicted_class: usize,
    /// Share of segments that voted for the predicted class.
    pub probability: f64,
    /// Vote share of every class, index 0 is class 1.
    pub per_class_fractions: Vec<f64>,
    pub segments: usize,
}

impl RecordDecision {
    /// Ties go to the lowest class index.
    pub fn from_predictions(record_id: &str, predictions: &[usize], q: usize) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::EmptyPartition);
        }
        let mut counts = vec![0.0; q];
        for &p in predictions {
            if p == 0 || p > q {
                return Err(Error::ClassOutOfRange { index: p, q });
            }
            counts[p - 1] += 1.0;
        }
        let n = predictions.len() as f64;
        let winner = argmax_lowest(&counts);
        Ok(Self {
            record_id: record_id.to_string(),
            predicted_class: winner + 1,
            probability: counts[winner] / n,
            per_class_fractions: counts.iter().map(|c| c / n).collect(),
            segments: predictions.len(),
        })
    }
}

/// Classifies every segment of one record and takes the plurality.
pub fn aggregate_record<C: SegmentClassifier + ?Sized>(
    model: &C,
    segments: &[FeatureVector],
) -> Result<RecordDecision> {
    let first = segments.first().ok_or(Error::EmptyPartition)?;
    let predictions = predict_all(model, segments)?;
    RecordDecision::from_predictions(&first.record_id, &predictions, model.class_count())
}

/// Fraction of records whose plurality decision matches the record label.
pub fn record_accuracy<C: SegmentClassifier + ?Sized>(
    model: &C,
    vectors: &[FeatureVector],
) -> Result<f64> {
    Ok(evaluate(model, vectors)?.record_accuracy)
}

/// Groups per-segment predictions by record id (sorted by id).
pub fn aggregate_records(
    vectors: &[FeatureVector],
    predictions: &[usize],
    q: usize,
) -> Result<Vec<RecordDecision>> {
    if vectors.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: predictions.len(),
        });
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (fv, &p) in vectors.iter().zip(predictions) {
        groups.entry(fv.record_id.as_str()).or_default().push(p);
    }
    groups
        .iter()
        .map(|(id, preds)| RecordDecision::from_predictions(id, preds, q))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub q: usize,
    /// `counts[t][p]`: true class `t + 1` predicted as `p + 1`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            counts: vec![vec![0; q]; q],
        }
    }

    pub fn from_pairs(q: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let mut m = Self::new(q);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for c in [truth, predicted] {
            if c == 0 || c > self.q {
                return Err(Error::ClassOutOfRange { index: c, q: self.q });
            }
        }
        self.counts[truth - 1][predicted - 1] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..self.q).map(|i| self.counts[i][i]).sum();
        hits as f64 / self.total() as f64
    }
}

/// Record decision paired with the record's true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub true_class: usize,
    #[serde(flatten)]
    pub decision: RecordDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub segments: usize,
    pub segment_accuracy: f64,
    pub record_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub records: Vec<RecordOutcome>,
}

/// Segment and record accuracy of `model` on labeled vectors.
pub fn evaluate<C: SegmentClassifier + ?Sized>(
    model: &C,
    vectors: &[FeatureVector],
) -> Result<Evaluation> {
    if vectors.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let q = model.class_count();
    let truth = true_labels(vectors)?;
    let predicted = predict_all(model, vectors)?;
    let confusion = ConfusionMatrix::from_pairs(q, &truth, &predicted)?;
    let labels = crate::datagen::record_labels(vectors)?;
    let records: Vec<RecordOutcome> = aggregate_records(vectors, &predicted, q)?
        .into_iter()
        .map(|decision| RecordOutcome {
            true_class: labels[&decision.record_id],
            decision,
        })
        .collect();
    let record_hits = records
        .iter()
        .filter(|r| r.true_class == r.decision.predicted_class)
        .count();
    Ok(Evaluation {
        segments: vectors.len(),
        segment_accuracy: fraction_equal(&truth, &predicted),
        record_accuracy: record_hits as f64 / records.len() as f64,
        confusion,
        records,
    })
}

/// One unit per class against all others; the largest raw activation wins.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAllModel {
    pub q: usize,
    pub units: Vec<LinearUnit>,
    pub fits: Vec<BinaryFit>,
    pub feature_layout: FeatureLayout,
}

pub fn train_one_vs_all(
    dataset: &SegmentDataset,
    q: usize,
    cfg: &TrainConfig,
) -> Result<OneVsAllModel> {
    cfg.validate()?;
    check_classes(dataset, q)?;
    let fits: Vec<BinaryFit> = (1..=q)
        .into_par_iter()
        .map(|k| {
            let unit_cfg = cfg.reseeded(derive_seed(cfg.seed, Stream::OneVsAll, k as u64, 0));
            train_split(dataset, |c| c == k, |c| c != k, &unit_cfg)
        })
        .collect::<Result<_>>()?;
    Ok(OneVsAllModel {
        q,
        units: fits.iter().map(|f| f.unit.clone()).collect(),
        fits,
        feature_layout: dataset.layout.clone(),
    })
}

impl SegmentClassifier for OneVsAllModel {
    fn class_count(&self) -> usize {
        self.q
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        let activations: Vec<f64> = self
            .units
            .iter()
            .map(|u| u.activation(x))
            .collect::<Result<_>>()?;
        Ok(argmax_lowest(&activations) + 1)
    }
}

/// Internal node separating classes `lo..=mid` (+1) from `mid+1..=hi` (-1).
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyNode {
    pub lo: usize,
    pub mid: usize,
    pub hi: usize,
    pub unit: LinearUnit,
    pub fit: BinaryFit,
}

/// Balanced binary tree over contiguous class ranges; `q - 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub q: usize,
    pub nodes: BTreeMap<(usize, usize), HierarchyNode>,
    pub feature_layout: FeatureLayout,
}

/// The left child takes the first `ceil(n / 2)` classes of the range.
pub fn split_point(lo: usize, hi: usize) -> usize {
    let n = hi - lo + 1;
    lo + n.div_ceil(2) - 1
}

fn collect_ranges(lo: usize, hi: usize, out: &mut Vec<(usize, usize)>) {
    if lo >= hi {
        return;
    }
    out.push((lo, hi));
    let mid = split_point(lo, hi);
    collect_ranges(lo, mid, out);
    collect_ranges(mid + 1, hi, out);
}

/// Node seeds come from the pair stream keyed by the range bounds, so for
/// two classes the single node equals the `(1, 2)` pair unit.
pub fn train_hierarchical(
    dataset: &SegmentDataset,
    q: usize,
    cfg: &TrainConfig,
) -> Result<HierarchicalModel> {
    cfg.validate()?;
    check_classes(dataset, q)?;
    let mut ranges = Vec::new();
    collect_ranges(1, q, &mut ranges);
    let nodes: Vec<HierarchyNode> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mid = split_point(lo, hi);
            let node_cfg = cfg.reseeded(derive_seed(cfg.seed, Stream::Pair, lo as u64, hi as u64));
            let fit = train_split(
                dataset,
                |c| (lo..=mid).contains(&c),
                |c| (mid + 1..=hi).contains(&c),
                &node_cfg,
            )?;
            Ok(HierarchyNode {
                lo,
                mid,
                hi,
                unit: fit.unit.clone(),
                fit,
            })
        })
        .collect::<Result<_>>()?;
    Ok(HierarchicalModel {
        q,
        nodes: nodes.into_iter().map(|n| ((n.lo, n.hi), n)).collect(),
        feature_layout: dataset.layout.clone(),
    })
}

impl SegmentClassifier for HierarchicalModel {
    fn class_count(&self) -> usize {
        self.q
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        let (mut lo, mut hi) = (1, self.q);
        while lo < hi {
            let node = self
                .nodes
                .get(&(lo, hi))
                .ok_or_else(|| Error::MalformedModel(format!("no node for classes {lo}..={hi}")))?;
            if node.unit.activation(x)? >= 0.0 {
                hi = node.mid;
            } else {
                lo = node.mid + 1;
            }
        }
        Ok(lo)
    }
}
