use std::collections::{BTreeMap, BTreeSet};

use pairnet_core::datagen::{
    default_profile, featurize_record, generate_corpus, split_by_record, SegmentDataset,
    SyntheticSpec,
};
use pairnet_core::eval::{
    aggregate_record, evaluate, record_accuracy, segment_accuracy, train_hierarchical,
    train_one_vs_all, RecordDecision, SegmentClassifier,
};
use pairnet_core::features::{compute_bba, BandName, BandStatistic};
use pairnet_core::model::{LinearUnit, MultiClassModel, PairwiseClassifier};
use pairnet_core::trainer::{train_model, train_pair, TrainConfig};
use pairnet_core::{FeatureLayout, FeatureVector};
use proptest::prelude::*;

fn quiet(q: usize) -> SyntheticSpec {
    SyntheticSpec {
        records_per_class: 2,
        segments_per_record: 6,
        overlap: 0.0,
        bba_drift: 0.0,
        noise_floor: 0.0,
        ..SyntheticSpec::with_classes(q)
    }
}

#[test]
fn corrected_log_powers_ignore_gain_drift() {
    let spec = SyntheticSpec {
        bba_drift: 0.25,
        ..quiet(3)
    };
    let corpus = generate_corpus(&spec, 12).unwrap();
    let layout = corpus.layout().unwrap();
    let raw = corpus.featurize(false).unwrap();
    let corrected = corpus.featurize(true).unwrap();
    let log_powers: Vec<usize> = (1..=2).flat_map(|ch| layout.log_power_indices(ch)).collect();

    for class in 1..=3 {
        let rows = |set: &[FeatureVector]| -> Vec<Vec<f64>> {
            set.iter()
                .filter(|f| f.label == Some(class))
                .map(|f| log_powers.iter().map(|&i| f.values[i]).collect())
                .collect()
        };
        let spread = |rows: &[Vec<f64>]| -> f64 {
            (0..log_powers.len())
                .map(|k| {
                    let col = rows.iter().map(|r| r[k]);
                    col.clone().fold(f64::MIN, f64::max) - col.fold(f64::MAX, f64::min)
                })
                .fold(0.0, f64::max)
        };
        assert!(spread(&rows(&corrected)) < 1e-3, "class {class}");
        assert!(spread(&rows(&raw)) > 0.1, "class {class}");
    }
}

#[test]
fn bba_steps_follow_the_gain_curve() {
    let spec = SyntheticSpec {
        bba_drift: 0.2,
        ..quiet(2)
    };
    let corpus = generate_corpus(&spec, 3).unwrap();
    let layout = corpus.layout().unwrap();
    for rec in &corpus.records {
        let fvs = featurize_record(
            &rec.record_id,
            Some(rec.label),
            [&rec.channels[0], &rec.channels[1]],
            &layout,
            false,
        )
        .unwrap();
        let bba: Vec<Vec<f64>> = fvs.iter().map(|f| compute_bba(f, &layout).unwrap()).collect();
        for s in 1..fvs.len() {
            // band power scales with the square of the amplitude gain
            let expected = 2.0 * (rec.segment_gains[s] / rec.segment_gains[0]).ln();
            for (now, first) in bba[s].iter().zip(&bba[0]) {
                assert!((now - first - expected).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn noiseless_rows_repeat_within_class() {
    let corpus = generate_corpus(&quiet(3), 4).unwrap();
    let layout = corpus.layout().unwrap();
    let fvs = corpus.featurize(false).unwrap();
    for class in 1..=3 {
        let rows: Vec<&FeatureVector> = fvs.iter().filter(|f| f.label == Some(class)).collect();
        for r in &rows {
            for b in BandName::ALL {
                let i = layout.band_index(1, b, BandStatistic::LogPower);
                assert!((r.values[i] - rows[0].values[i]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn well_separated_classes_are_learned_end_to_end() {
    let spec = SyntheticSpec {
        overlap: 0.03,
        noise_floor: 0.05,
        ..quiet(3)
    };
    let corpus = generate_corpus(&spec, 6).unwrap();
    let ds = SegmentDataset::train_only(corpus.layout().unwrap(), corpus.featurize(true).unwrap());
    let model = train_model(&ds, 3, &TrainConfig::default()).unwrap();
    assert_eq!(segment_accuracy(&model, &ds.train).unwrap(), 1.0);
    assert_eq!(record_accuracy(&model, &ds.train).unwrap(), 1.0);
}

fn adjacent_validation_accuracy(overlap: f64, seed: u64) -> f64 {
    let spec = SyntheticSpec {
        q: 4,
        records_per_class: 3,
        segments_per_record: 20,
        class_band_profile: default_profile(16)[..4].to_vec(),
        overlap,
        ..SyntheticSpec::default()
    };
    let corpus = generate_corpus(&spec, seed).unwrap();
    let ds = SegmentDataset::train_only(corpus.layout().unwrap(), corpus.featurize(true).unwrap());
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let accs: Vec<f64> = (1..4)
        .map(|i| train_pair(&ds, i, i + 1, &cfg).unwrap().fit.validation_accuracy)
        .collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

#[test]
fn more_overlap_never_makes_adjacent_pairs_easier() {
    let levels = [0.1, 0.3, 0.6, 1.0];
    let means: Vec<f64> = levels
        .iter()
        .map(|&o| (1..=5).map(|s| adjacent_validation_accuracy(o, s)).sum::<f64>() / 5.0)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn record_split_is_leak_free() {
    let spec = SyntheticSpec {
        records_per_class: 3,
        segments_per_record: 2,
        ..quiet(4)
    };
    let corpus = generate_corpus(&spec, 1).unwrap();
    let ds = split_by_record(corpus.featurize(false).unwrap(), corpus.layout().unwrap(), 1.0 / 3.0, 7)
        .unwrap();
    let train: BTreeSet<&str> = ds.train.iter().map(|f| f.record_id.as_str()).collect();
    let test: BTreeSet<&str> = ds.test.iter().map(|f| f.record_id.as_str()).collect();
    assert!(train.is_disjoint(&test));
    assert_eq!(test.len(), 4);
}

fn line_dataset(q: usize, per_class: usize) -> SegmentDataset {
    let mut train = Vec::new();
    for c in 1..=q {
        for k in 0..per_class {
            train.push(FeatureVector {
                values: vec![10.0 * c as f64 + k as f64 * 0.5, (k % 3) as f64],
                record_id: format!("c{c}r{}", k % 2),
                segment_index: k,
                label: Some(c),
                bba_corrected: false,
            });
        }
    }
    SegmentDataset::train_only(FeatureLayout::generic(2), train)
}

#[test]
fn two_class_baselines_match_pairwise() {
    let ds = line_dataset(2, 10);
    let cfg = TrainConfig::default();
    let pairwise = train_model(&ds, 2, &cfg).unwrap();
    let ova = train_one_vs_all(&ds, 2, &cfg).unwrap();
    let tree = train_hierarchical(&ds, 2, &cfg).unwrap();
    assert_eq!(ova.units.len(), 1 + 1);
    assert_eq!(tree.nodes.len(), 1);
    assert_eq!(
        tree.nodes[&(1, 2)].unit,
        pairwise.classifiers.values().next().unwrap().unit
    );
    // probe the class regions on a grid
    for c in 1..=2 {
        for k in 0..=20 {
            let x = [10.0 * c as f64 + k as f64 * 0.25, (k % 4) as f64];
            let p = pairwise.predict(&x).unwrap();
            assert_eq!(p, c);
            assert_eq!(SegmentClassifier::predict(&ova, &x).unwrap(), p);
            assert_eq!(SegmentClassifier::predict(&tree, &x).unwrap(), p);
        }
    }
}

#[test]
fn sixteen_class_baseline_shapes() {
    let ds = line_dataset(16, 6);
    let cfg = TrainConfig::default();
    let tree = train_hierarchical(&ds, 16, &cfg).unwrap();
    assert_eq!(tree.nodes.len(), 15);
    let root = &tree.nodes[&(1, 16)];
    assert_eq!((root.lo, root.mid, root.hi), (1, 8, 16));
    assert_eq!(segment_accuracy(&tree, &ds.train).unwrap(), 1.0);
    let ova = train_one_vs_all(&ds, 16, &cfg).unwrap();
    assert_eq!(ova.units.len(), 16);
}

fn sign_model(weight: f64) -> MultiClassModel {
    let c = PairwiseClassifier {
        class_lo: 1,
        class_hi: 2,
        unit: LinearUnit {
            feature_indices: vec![0],
            weights: vec![weight],
            bias: 0.0,
        },
    };
    MultiClassModel::new(2, vec![c], FeatureLayout::generic(1), "sign").unwrap()
}

fn point(record: &str, label: usize, x: f64) -> FeatureVector {
    FeatureVector {
        values: vec![x],
        record_id: record.into(),
        segment_index: 0,
        label: Some(label),
        bba_corrected: false,
    }
}

#[test]
fn perfect_and_negated_models() {
    let data = vec![point("a", 1, 1.0), point("a", 1, 2.0), point("b", 2, -1.0)];
    assert_eq!(segment_accuracy(&sign_model(1.0), &data).unwrap(), 1.0);
    assert_eq!(record_accuracy(&sign_model(1.0), &data).unwrap(), 1.0);
    assert_eq!(segment_accuracy(&sign_model(-1.0), &data).unwrap(), 0.0);
    assert!(segment_accuracy(&sign_model(1.0), &[]).is_err());
    assert!(record_accuracy(&sign_model(1.0), &[]).is_err());
}

#[test]
fn single_record_with_wrong_plurality() {
    let data = vec![point("a", 2, 1.0), point("a", 2, 3.0), point("a", 2, -1.0)];
    assert_eq!(record_accuracy(&sign_model(1.0), &data).unwrap(), 0.0);
    let d = aggregate_record(&sign_model(1.0), &data).unwrap();
    assert_eq!(d.predicted_class, 1);
    assert!((d.probability - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn record_probabilities_from_vote_shares() {
    let mut votes = vec![2; 92];
    votes.extend(vec![1; 8]);
    let d = RecordDecision::from_predictions("r", &votes, 16).unwrap();
    assert_eq!((d.predicted_class, d.probability), (2, 0.92));
    let mut votes = vec![3; 58];
    votes.extend(vec![4; 42]);
    let d = RecordDecision::from_predictions("r", &votes, 16).unwrap();
    assert_eq!((d.predicted_class, d.probability), (3, 0.58));
    let d = RecordDecision::from_predictions("r", &[5], 16).unwrap();
    assert_eq!(d.probability, 1.0);
}

#[test]
fn confusion_rows_count_each_class() {
    let data: Vec<FeatureVector> = (0..30)
        .map(|k| point(&format!("r{}", k % 4), 1 + k % 2, k as f64 - 12.5))
        .collect();
    let e = evaluate(&sign_model(1.0), &data).unwrap();
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for f in &data {
        *per_class.entry(f.label.unwrap()).or_default() += 1;
    }
    for (c, n) in per_class {
        assert_eq!(e.confusion.counts[c - 1].iter().sum::<usize>(), n);
    }
    assert_eq!(e.confusion.total(), 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn record_vote_properties(
        q in 2usize..=16,
        raw in proptest::collection::vec(any::<u32>(), 1..200),
        rotate in any::<usize>(),
    ) {
        let preds: Vec<usize> = raw.iter().map(|v| 1 + *v as usize % q).collect();
        let d = RecordDecision::from_predictions("r", &preds, q).unwrap();
        let mut shuffled = preds.clone();
        shuffled.rotate_left(rotate % preds.len());
        shuffled.reverse();
        prop_assert_eq!(&RecordDecision::from_predictions("r", &shuffled, q).unwrap(), &d);

        let max = d.per_class_fractions.iter().cloned().fold(0.0, f64::max);
        prop_assert_eq!(d.probability, max);
        prop_assert!(d.probability > 0.0);
        prop_assert!((d.per_class_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let first_max = d.per_class_fractions.iter().position(|f| *f == max).unwrap();
        prop_assert_eq!(d.predicted_class, first_max + 1);
    }
}
