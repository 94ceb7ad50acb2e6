//! Pairwise-coupled network: one threshold unit per class pair, superposed
//! into one group score per class by a fixed +1/-1 coupling matrix.
//!
//! Classes are 1-based. For the pair `(lo, hi)` the unit outputs +1 for
//! class `lo` and -1 for class `hi`; class `i` adds the outputs of the pairs
//! it leads and subtracts the outputs of the pairs where it is the higher
//! class. The predicted class is the argmax of the group scores, with ties
//! going to the lowest class index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureLayout;

/// An unordered class pair stored as `lo < hi`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassPair {
    pub lo: usize,
    pub hi: usize,
}

impl ClassPair {
    pub fn new(lo: usize, hi: usize, q: usize) -> Result<Self> {
        if lo == 0 || lo >= hi || hi > q {
            return Err(Error::InvalidPair { lo, hi, q });
        }
        Ok(Self { lo, hi })
    }
}

/// All pairs of `1..=q` in lexicographic order.
pub fn class_pairs(q: usize) -> impl Iterator<Item = ClassPair> {
    (1..=q).flat_map(move |lo| (lo + 1..=q).map(move |hi| ClassPair { lo, hi }))
}

/// Number of pairwise classifiers for `q` classes: q(q-1)/2.
pub fn classifier_count(q: usize) -> Result<usize> {
    if q < 2 {
        return Err(Error::TooFewClasses(q));
    }
    Ok(q * (q - 1) / 2)
}

/// Weight connecting pair unit `(a, b)` to the group score of `class`.
pub fn coupling_weight(class: usize, pair: (usize, usize), q: usize) -> Result<i8> {
    if class == 0 || class > q {
        return Err(Error::ClassOutOfRange { index: class, q });
    }
    let (a, b) = pair;
    ClassPair::new(a, b, q)?;
    Ok(if class == a {
        1
    } else if class == b {
        -1
    } else {
        0
    })
}

/// Threshold unit over a subset of the input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearUnit {
    /// Zero-based positions into the full feature vector, strictly ascending.
    pub feature_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearUnit {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.feature_indices.len() {
            return Err(Error::MalformedClassifier(format!(
                "{} weights for {} features",
                self.weights.len(),
                self.feature_indices.len()
            )));
        }
        if self.feature_indices.is_empty() {
            return Err(Error::MalformedClassifier("no selected features".into()));
        }
        if self.feature_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedClassifier(
                "feature indices must be distinct and ascending".into(),
            ));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::MalformedClassifier("non-finite weight".into()));
        }
        Ok(())
    }

    /// `w . x[indices] + bias`.
    pub fn activation(&self, x: &[f64]) -> Result<f64> {
        if let Some(&last) = self.feature_indices.last() {
            if last >= x.len() {
                return Err(Error::FeatureOutOfRange {
                    index: last,
                    len: x.len(),
                });
            }
        }
        let dot: f64 = self
            .feature_indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| w * x[i])
            .sum();
        Ok(dot + self.bias)
    }

    /// Hard threshold output; a zero activation maps to +1.
    pub fn output(&self, x: &[f64]) -> Result<i8> {
        Ok(threshold(self.activation(x)?))
    }
}

pub fn threshold(activation: f64) -> i8 {
    if activation >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseClassifier {
    pub class_lo: usize,
    pub class_hi: usize,
    #[serde(flatten)]
    pub unit: LinearUnit,
}

impl PairwiseClassifier {
    pub fn pair(&self) -> ClassPair {
        ClassPair {
            lo: self.class_lo,
            hi: self.class_hi,
        }
    }
}

/// Output of the unit for pair `(class_lo, class_hi)`: +1 favours `class_lo`.
pub fn pair_output(classifier: &PairwiseClassifier, x: &[f64]) -> Result<i8> {
    classifier.unit.output(x)
}

/// How pair units feed the group scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoringMode {
    /// Hard +1/-1 outputs.
    #[default]
    Threshold,
    /// Raw activations; diagnostics only.
    Margin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores {
    pub scores: Vec<f64>,
    /// `votes[i - 1]` counts the pairs won by class `i`.
    pub votes: Vec<usize>,
    /// 1-based winning class.
    pub winner: usize,
}

impl GroupScores {
    /// Superposes per-pair outputs, given in `class_pairs(q)` order.
    pub fn from_pair_outputs(q: usize, outputs: &[f64]) -> Result<Self> {
        let expected = classifier_count(q)?;
        if outputs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: outputs.len(),
            });
        }
        let mut scores = vec![0.0; q];
        let mut votes = vec![0usize; q];
        for (pair, &out) in class_pairs(q).zip(outputs) {
            scores[pair.lo - 1] += out;
            scores[pair.hi - 1] -= out;
            if out >= 0.0 {
                votes[pair.lo - 1] += 1;
            } else {
                votes[pair.hi - 1] += 1;
            }
        }
        let winner = argmax_lowest(&scores) + 1;
        Ok(Self {
            scores,
            votes,
            winner,
        })
    }
}

/// Index of the maximum, earliest index on ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-pair record of how a classifier was fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub class_lo: usize,
    pub class_hi: usize,
    pub n_features: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub epochs_used: usize,
    /// Selection was scored on training rows because the holdout was empty.
    pub validation_fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub bba_corrected: bool,
    pub training_records: Vec<String>,
    pub pairs: Vec<PairDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassModel {
    pub q: usize,
    pub classifiers: BTreeMap<ClassPair, PairwiseClassifier>,
    pub feature_layout: FeatureLayout,
    pub trained_on: String,
    pub metadata: TrainingMetadata,
}

impl MultiClassModel {
    pub fn new(
        q: usize,
        classifiers: Vec<PairwiseClassifier>,
        feature_layout: FeatureLayout,
        trained_on: impl Into<String>,
    ) -> Result<Self> {
        let expected = classifier_count(q)?;
        let mut map = BTreeMap::new();
        for c in classifiers {
            let pair = ClassPair::new(c.class_lo, c.class_hi, q)?;
            c.unit.validate()?;
            if let Some(&last) = c.unit.feature_indices.last() {
                if last >= feature_layout.len() {
                    return Err(Error::FeatureOutOfRange {
                        index: last,
                        len: feature_layout.len(),
                    });
                }
            }
            if map.insert(pair, c).is_some() {
                return Err(Error::MalformedModel(format!(
                    "duplicate classifier for pair ({}, {})",
                    pair.lo, pair.hi
                )));
            }
        }
        if map.len() != expected {
            return Err(Error::MalformedModel(format!(
                "{} classifiers for q = {q}, expected {expected}",
                map.len()
            )));
        }
        Ok(Self {
            q,
            classifiers: map,
            feature_layout,
            trained_on: trained_on.into(),
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn with_metadata(mut self, metadata: TrainingMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn n_features(&self) -> usize {
        self.feature_layout.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Hard outputs of every pair unit, in lexicographic pair order.
    pub fn pair_outputs(&self, x: &[f64]) -> Result<Vec<i8>> {
        self.check_input(x)?;
        self.classifiers.values().map(|c| pair_output(c, x)).collect()
    }

    pub fn group_scores(&self, x: &[f64]) -> Result<GroupScores> {
        self.group_scores_with(x, ScoringMode::Threshold)
    }

    pub fn group_scores_with(&self, x: &[f64], mode: ScoringMode) -> Result<GroupScores> {
        self.check_input(x)?;
        let outputs = self
            .classifiers
            .values()
            .map(|c| match mode {
                ScoringMode::Threshold => c.unit.output(x).map(f64::from),
                ScoringMode::Margin => c.unit.activation(x),
            })
            .collect::<Result<Vec<f64>>>()?;
        GroupScores::from_pair_outputs(self.q, &outputs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.group_scores(x)?.winner)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            class_indexing: "one-based".into(),
            feature_indexing: "zero-based".into(),
            q: self.q,
            trained_on: self.trained_on.clone(),
            feature_layout: self.feature_layout.clone(),
            pairs: self.classifiers.values().cloned().collect(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != FORMAT_TAG || doc.version != FORMAT_VERSION {
            return Err(Error::MalformedModel(format!(
                "unsupported format {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.class_indexing != "one-based" || doc.feature_indexing != "zero-based" {
            return Err(Error::MalformedModel("unsupported indexing convention".into()));
        }
        Ok(Self::new(doc.q, doc.pairs, doc.feature_layout, doc.trained_on)?
            .with_metadata(doc.metadata))
    }
}

const FORMAT_TAG: &str = "pairnet-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    class_indexing: String,
    feature_indexing: String,
    q: usize,
    trained_on: String,
    feature_layout: FeatureLayout,
    pairs: Vec<PairwiseClassifier>,
    metadata: TrainingMetadata,
}
