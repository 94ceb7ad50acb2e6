//! Fitting the pair units.
//!
//! Each unit is a perceptron trained with the pocket-with-ratchet rule: the
//! ordinary perceptron update runs over seed-shuffled epochs, and a copy of
//! the best weights seen so far (by training accuracy) is kept aside and
//! only replaced on strict improvement. Training accuracy of the current
//! weights is only measured once their run of consecutive correct
//! classifications beats the run that earned the pocket its place.
//!
//! Features are chosen per pair by greedy forward selection scored on a
//! stratified holdout. Inputs are standardised internally; the returned
//! weights act on raw feature values.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::datagen::SegmentDataset;
use crate::error::{Error, Result};
use crate::model::{
    class_pairs, threshold, ClassPair, LinearUnit, MultiClassModel, PairDiagnostics,
    PairwiseClassifier, TrainingMetadata,
};
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Maximum perceptron epochs per fit.
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Consecutive non-improving feature additions tolerated.
    pub selection_patience: usize,
    /// Cap on selected features per unit.
    pub max_features: usize,
    /// Share of each class held out to score feature subsets.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1.0,
            seed: 1,
            selection_patience: 2,
            max_features: 58,
            validation_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_features == 0 {
            return Err(Error::InvalidConfig("max_features must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    /// Reads the fields from a flat key=value file; missing keys keep their
    /// defaults and unknown keys are an error.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Consumes this config's keys from `kv`, leaving any others.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.take("epochs")?.unwrap_or(d.epochs),
            learning_rate: kv.take("learning_rate")?.unwrap_or(d.learning_rate),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            selection_patience: kv
                .take("selection_patience")?
                .unwrap_or(d.selection_patience),
            max_features: kv.take("max_features")?.unwrap_or(d.max_features),
            validation_fraction: kv
                .take("validation_fraction")?
                .unwrap_or(d.validation_fraction),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "epochs = {}\nlearning_rate = {}\nseed = {}\nselection_patience = {}\n\
             max_features = {}\nvalidation_fraction = {}\n",
            self.epochs,
            self.learning_rate,
            self.seed,
            self.selection_patience,
            self.max_features,
            self.validation_fraction
        )
    }

    pub(crate) fn reseeded(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Dense row-major matrix with +1/-1 targets.
#[derive(Debug, Clone)]
struct Labeled {
    cols: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Labeled {
    fn from_classes<R: AsRef<[f64]>>(positives: &[R], negatives: &[R]) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::EmptyClass("positive"));
        }
        if negatives.is_empty() {
            return Err(Error::EmptyClass("negative"));
        }
        let cols = positives[0].as_ref().len();
        if cols == 0 {
            return Err(Error::ZeroDimensional);
        }
        let n = positives.len() + negatives.len();
        let mut x = Vec::with_capacity(n * cols);
        let mut y = Vec::with_capacity(n);
        for (rows, target) in [(positives, 1.0), (negatives, -1.0)] {
            for row in rows {
                let row = row.as_ref();
                if row.len() != cols {
                    return Err(Error::RaggedRows {
                        first: cols,
                        other: row.len(),
                    });
                }
                x.extend_from_slice(row);
                y.push(target);
            }
        }
        Ok(Self { cols, x, y })
    }

    fn rows(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }

    fn subset(&self, rows: &[usize]) -> Self {
        let mut x = Vec::with_capacity(rows.len() * self.cols);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.y[r]);
        }
        Self {
            cols: self.cols,
            x,
            y,
        }
    }

    fn columns(&self, cols: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.rows() * cols.len());
        for r in 0..self.rows() {
            let row = self.row(r);
            x.extend(cols.iter().map(|&c| row[c]));
        }
        Self {
            cols: cols.len(),
            x,
            y: self.y.clone(),
        }
    }

    fn accuracy(&self, weights: &[f64], bias: f64) -> f64 {
        let errors = self.errors_below(weights, bias, usize::MAX);
        1.0 - errors as f64 / self.rows() as f64
    }

    /// Misclassification count; stops counting at `limit`.
    fn errors_below(&self, weights: &[f64], bias: f64, limit: usize) -> usize {
        let mut errors = 0;
        for r in 0..self.rows() {
            if f64::from(threshold(dot(weights, self.row(r)) + bias)) != self.y[r] {
                errors += 1;
                if errors >= limit {
                    break;
                }
            }
        }
        errors
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of one pocket perceptron run, in raw feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct PocketFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    pub epochs_used: usize,
    /// Pocket training accuracy at the end of each epoch.
    pub accuracy_history: Vec<f64>,
}

/// Trains a pocket perceptron separating `positives` (+1) from `negatives`
/// (-1). Deterministic given `cfg.seed`.
pub fn pocket_train<R: AsRef<[f64]>>(
    positives: &[R],
    negatives: &[R],
    cfg: &TrainConfig,
) -> Result<PocketFit> {
    cfg.validate()?;
    let data = Labeled::from_classes(positives, negatives)?;
    Ok(fit_pocket(&data, cfg))
}

fn fit_pocket(data: &Labeled, cfg: &TrainConfig) -> PocketFit {
    let n = data.rows();
    let d = data.cols;

    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in scale.iter_mut().zip(data.row(r)).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    }
    let z = Labeled {
        cols: d,
        x: (0..n)
            .flat_map(|r| {
                data.row(r)
                    .iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect::<Vec<_>>()
            })
            .collect(),
        y: data.y.clone(),
    };

    let mut rng = stream_rng(cfg.seed, Stream::Pair, 0, 0);
    let mut order: Vec<usize> = (0..n).collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut pocket_w = w.clone();
    let mut pocket_b = b;
    let mut pocket_errors = z.errors_below(&w, b, usize::MAX);
    let mut pocket_run = 0usize;
    let mut run = 0usize;
    let mut current_checked = true;
    let mut current_in_pocket = true;
    let mut history = Vec::new();
    let mut epochs_used = 0;

    for _ in 0..cfg.epochs {
        epochs_used += 1;
        order.shuffle(&mut rng);
        let mut mistakes = 0;
        for &i in &order {
            let xi = z.row(i);
            let yi = z.y[i];
            if f64::from(threshold(dot(&w, xi) + b)) == yi {
                run += 1;
                if run > pocket_run && !current_checked {
                    current_checked = true;
                    let errors = z.errors_below(&w, b, pocket_errors);
                    if errors < pocket_errors {
                        pocket_errors = errors;
                        pocket_w.clone_from(&w);
                        pocket_b = b;
                        pocket_run = run;
                        current_in_pocket = true;
                    }
                }
            } else {
                mistakes += 1;
                let step = cfg.learning_rate * yi;
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj += step * xj;
                }
                b += step;
                if current_in_pocket {
                    // the pocket's run is the full streak of its weights
                    pocket_run = pocket_run.max(run);
                    current_in_pocket = false;
                }
                run = 0;
                current_checked = false;
            }
        }
        if mistakes == 0 && !current_checked {
            current_checked = true;
            let errors = z.errors_below(&w, b, pocket_errors);
            if errors < pocket_errors {
                pocket_errors = errors;
                pocket_w.clone_from(&w);
                pocket_b = b;
                pocket_run = run;
                current_in_pocket = true;
            }
        }
        history.push(1.0 - pocket_errors as f64 / n as f64);
        if pocket_errors == 0 {
            break;
        }
    }
    if !current_checked {
        let errors = z.errors_below(&w, b, pocket_errors);
        if errors < pocket_errors {
            pocket_errors = errors;
            pocket_w.clone_from(&w);
            pocket_b = b;
            if let Some(last) = history.last_mut() {
                *last = 1.0 - pocket_errors as f64 / n as f64;
            }
        }
    }

    let weights: Vec<f64> = pocket_w.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let bias = pocket_b - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    let train_accuracy = data.accuracy(&weights, bias);
    PocketFit {
        weights,
        bias,
        train_accuracy,
        epochs_used,
        accuracy_history: history,
    }
}

/// One accepted greedy addition.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    /// Zero-based feature position.
    pub feature: usize,
    pub validation_accuracy: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    /// Weights over the selected features, in raw feature space.
    pub unit: LinearUnit,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub epochs_used: usize,
    /// The holdout was empty, so subsets were scored on the fit rows.
    pub validation_fallback: bool,
    pub steps: Vec<SelectionStep>,
}

/// Fit and validation rows for subset scoring.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    fit: Labeled,
    validation: Labeled,
    pub fallback: bool,
}

impl HoldoutSplit {
    /// Stratified split: each class sends `round(validation_fraction * n)`
    /// seed-shuffled rows to validation.
    pub fn new<R: AsRef<[f64]>>(
        positives: &[R],
        negatives: &[R],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let all = Labeled::from_classes(positives, negatives)?;
        let mut rng = stream_rng(cfg.seed, Stream::Holdout, 0, 0);
        let mut fit_rows = Vec::new();
        let mut val_rows = Vec::new();
        let classes = [
            ("positive", 0..positives.len()),
            ("negative", positives.len()..all.rows()),
        ];
        for (side, range) in classes {
            let mut idx: Vec<usize> = range.collect();
            idx.shuffle(&mut rng);
            let n_val = (cfg.validation_fraction * idx.len() as f64).round() as usize;
            if n_val >= idx.len() {
                return Err(Error::EmptyFitSide {
                    side,
                    fraction: cfg.validation_fraction,
                });
            }
            let (val, fit) = idx.split_at(n_val);
            val_rows.extend_from_slice(val);
            fit_rows.extend_from_slice(fit);
        }
        fit_rows.sort_unstable();
        val_rows.sort_unstable();
        let fit = all.subset(&fit_rows);
        let fallback = val_rows.is_empty();
        let validation = if fallback {
            fit.clone()
        } else {
            all.subset(&val_rows)
        };
        Ok(Self {
            fit,
            validation,
            fallback,
        })
    }

    /// Fits a unit on the given feature columns and scores it on the
    /// validation rows. Returns `(fit, validation accuracy)`.
    pub fn score_subset(&self, features: &[usize], cfg: &TrainConfig) -> (PocketFit, f64) {
        let fit_data = self.fit.columns(features);
        let fit = fit_pocket(&fit_data, cfg);
        let val = self.validation.columns(features).accuracy(&fit.weights, fit.bias);
        (fit, val)
    }

    pub fn n_features(&self) -> usize {
        self.fit.cols
    }
}

/// Greedy bottom-up feature search around [`pocket_train`].
pub fn forward_select<R: AsRef<[f64]>>(
    positives: &[R],
    negatives: &[R],
    cfg: &TrainConfig,
) -> Result<BinaryFit> {
    let split = HoldoutSplit::new(positives, negatives, cfg)?;
    Ok(select_on_split(&split, cfg))
}

fn select_on_split(split: &HoldoutSplit, cfg: &TrainConfig) -> BinaryFit {
    let total = split.n_features();
    let mut selected: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(Vec<usize>, PocketFit, f64)> = None;
    let mut stale = 0;

    while selected.len() < cfg.max_features.min(total) {
        let candidates: Vec<usize> = (0..total).filter(|f| !selected.contains(f)).collect();
        let scored: Vec<(usize, Vec<usize>, PocketFit, f64)> = candidates
            .par_iter()
            .map(|&f| {
                let mut subset = selected.clone();
                subset.push(f);
                subset.sort_unstable();
                let (fit, acc) = split.score_subset(&subset, cfg);
                (f, subset, fit, acc)
            })
            .collect();
        // candidates ascend, so strict > keeps the lowest index on ties
        let mut pick = 0;
        for (k, s) in scored.iter().enumerate() {
            if s.3 > scored[pick].3 {
                pick = k;
            }
        }
        let (feature, subset, fit, acc) = scored.into_iter().nth(pick).expect("candidates");
        selected = subset.clone();

        let improved = best.as_ref().is_none_or(|(_, _, b)| acc > *b);
        if improved {
            best = Some((subset, fit, acc));
            stale = 0;
        } else {
            stale += 1;
        }
        let best_acc = best.as_ref().map_or(acc, |b| b.2);
        steps.push(SelectionStep {
            feature,
            validation_accuracy: acc,
            best_so_far: best_acc,
        });
        // nothing can strictly beat a perfect score
        if stale >= cfg.selection_patience.max(1) || best_acc >= 1.0 {
            break;
        }
    }

    let (features, fit, validation_accuracy) = best.expect("at least one step runs");
    BinaryFit {
        unit: LinearUnit {
            feature_indices: features,
            weights: fit.weights,
            bias: fit.bias,
        },
        train_accuracy: fit.train_accuracy,
        validation_accuracy,
        epochs_used: fit.epochs_used,
        validation_fallback: split.fallback,
        steps,
    }
}

/// A fitted unit for one class pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFit {
    pub pair: ClassPair,
    pub fit: BinaryFit,
}

impl PairFit {
    pub fn classifier(&self) -> PairwiseClassifier {
        PairwiseClassifier {
            class_lo: self.pair.lo,
            class_hi: self.pair.hi,
            unit: self.fit.unit.clone(),
        }
    }

    pub fn diagnostics(&self) -> PairDiagnostics {
        PairDiagnostics {
            class_lo: self.pair.lo,
            class_hi: self.pair.hi,
            n_features: self.fit.unit.feature_indices.len(),
            train_accuracy: self.fit.train_accuracy,
            validation_accuracy: self.fit.validation_accuracy,
            epochs_used: self.fit.epochs_used,
            validation_fallback: self.fit.validation_fallback,
        }
    }
}

/// Training rows whose label is in `classes`.
pub(crate) fn rows_with_labels(
    dataset: &SegmentDataset,
    classes: impl Fn(usize) -> bool,
) -> Vec<&[f64]> {
    dataset
        .train
        .iter()
        .filter(|fv| fv.label.is_some_and(&classes))
        .map(|fv| fv.values.as_slice())
        .collect()
}

/// Fits a binary unit with `positive_classes` as +1 against
/// `negative_classes` as -1 on the training partition.
pub(crate) fn train_split(
    dataset: &SegmentDataset,
    positive: impl Fn(usize) -> bool,
    negative: impl Fn(usize) -> bool,
    cfg: &TrainConfig,
) -> Result<BinaryFit> {
    let pos = rows_with_labels(dataset, positive);
    let neg = rows_with_labels(dataset, negative);
    forward_select(&pos, &neg, cfg)
}

/// Trains the unit for pair `(i, j)`: class `i` maps to +1, `j` to -1.
/// The RNG stream depends only on `(cfg.seed, i, j)`.
pub fn train_pair(dataset: &SegmentDataset, i: usize, j: usize, cfg: &TrainConfig) -> Result<PairFit> {
    if i == 0 || i >= j {
        return Err(Error::InvalidPair {
            lo: i,
            hi: j,
            q: j.max(i),
        });
    }
    for class in [i, j] {
        if !dataset.train.iter().any(|fv| fv.label == Some(class)) {
            return Err(Error::MissingClass(class));
        }
    }
    let pair_cfg = cfg.reseeded(derive_seed(cfg.seed, Stream::Pair, i as u64, j as u64));
    let fit = train_split(dataset, |c| c == i, |c| c == j, &pair_cfg)?;
    Ok(PairFit {
        pair: ClassPair { lo: i, hi: j },
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

pub(crate) fn check_classes(dataset: &SegmentDataset, q: usize) -> Result<()> {
    if q < 2 {
        return Err(Error::TooFewClasses(q));
    }
    let mut present = vec![false; q];
    for fv in &dataset.train {
        match fv.label {
            Some(c) if (1..=q).contains(&c) => present[c - 1] = true,
            Some(c) => return Err(Error::ClassOutOfRange { index: c, q }),
            None => return Err(Error::Unlabeled(fv.record_id.clone())),
        }
    }
    match present.iter().position(|p| !p) {
        Some(missing) => Err(Error::MissingClass(missing + 1)),
        None => Ok(()),
    }
}

pub fn train_model(dataset: &SegmentDataset, q: usize, cfg: &TrainConfig) -> Result<MultiClassModel> {
    train_model_with(dataset, q, cfg, Execution::Parallel)
}

/// Trains every pair unit and assembles the model. The result does not
/// depend on `execution`.
pub fn train_model_with(
    dataset: &SegmentDataset,
    q: usize,
    cfg: &TrainConfig,
    execution: Execution,
) -> Result<MultiClassModel> {
    cfg.validate()?;
    check_classes(dataset, q)?;
    let pairs: Vec<ClassPair> = class_pairs(q).collect();
    let train_one = |p: &ClassPair| {
        train_pair(dataset, p.lo, p.hi, cfg).map_err(|e| e.in_pair(p.lo, p.hi))
    };
    let fits: Vec<PairFit> = match execution {
        Execution::Serial => pairs.iter().map(train_one).collect::<Result<_>>()?,
        Execution::Parallel => pairs.par_iter().map(train_one).collect::<Result<_>>()?,
    };
    assemble_model(dataset, q, cfg, fits)
}

/// Builds a model from independently trained pair fits, in any order.
pub fn assemble_model(
    dataset: &SegmentDataset,
    q: usize,
    cfg: &TrainConfig,
    mut fits: Vec<PairFit>,
) -> Result<MultiClassModel> {
    fits.sort_by_key(|f| f.pair);
    let mut records: Vec<String> = dataset.train.iter().map(|fv| fv.record_id.clone()).collect();
    records.sort_unstable();
    records.dedup();
    let metadata = TrainingMetadata {
        bba_corrected: !dataset.train.is_empty() && dataset.train.iter().all(|fv| fv.bba_corrected),
        training_records: records,
        pairs: fits.iter().map(PairFit::diagnostics).collect(),
    };
    let trained_on = format!(
        "{} segments from {} records, q = {q}, seed = {}",
        dataset.train.len(),
        metadata.training_records.len(),
        cfg.seed
    );
    let classifiers = fits.iter().map(PairFit::classifier).collect();
    Ok(MultiClassModel::new(q, classifiers, dataset.layout.clone(), trained_on)?.with_metadata(metadata))
}
