use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use pairnet_core::config::KeyValues;
use pairnet_core::datagen::{generate_corpus, split_by_record, SegmentDataset, SyntheticSpec};
use pairnet_core::eval::{evaluate, Evaluation};
use pairnet_core::features::{
    bba_correct, extract_features, segment_record, FeatureLayout, FeatureVector,
};
use pairnet_core::model::{MultiClassModel, PairDiagnostics};
use pairnet_core::trainer::{train_model, TrainConfig};
use serde::Serialize;

use crate::bail_user;
use crate::failure::{Classify, CmdResult, Failure};
use crate::manifest::{config_map, RunDir, RunManifest};
use crate::tables::{
    self, input_kind, open_features, read_features, read_raw, FeatureSidecar, FeatureSource,
    InputKind,
};
use crate::{EvalArgs, FeaturesArgs, GenArgs, PredictArgs, TrainArgs};

pub const CORPUS_FILE: &str = "corpus.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "model.json";
pub const PAIR_DIAGNOSTICS_FILE: &str = "pair_diagnostics.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

const DEFAULT_TEST_FRACTION: f64 = 1.0 / 3.0;

fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).user(format!("cannot read {}", path.display()))
}

fn note(message: impl std::fmt::Display) {
    eprintln!("pairnet: {message}");
}

pub fn gen(args: &GenArgs) -> CmdResult<RunManifest> {
    let started = Instant::now();
    let mut spec = match &args.config {
        Some(path) => SyntheticSpec::from_key_values(&read_text(path)?)
            .user(format!("bad spec {}", path.display()))?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = generate_corpus(&spec, spec.seed)?;

    let mut run = RunDir::create(&args.out, "gen", started)?;
    run.write(CORPUS_FILE, &tables::corpus_csv(&corpus)?)?;
    run.write(GROUND_TRUTH_FILE, &tables::ground_truth_csv(&corpus)?)?;
    note(format!(
        "generated {} records of {} classes",
        corpus.records.len(),
        spec.q
    ));
    let inputs: Vec<&Path> = args.config.iter().map(|p| p.as_path()).collect();
    run.finish(Some(spec.seed), config_map(&spec.to_key_values()), &inputs)
}

fn featurize_raw(args: &FeaturesArgs, layout: &FeatureLayout) -> CmdResult<Vec<FeatureVector>> {
    let records = read_raw(&args.input)?;
    let window = layout.samples_per_segment();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for rec in &records {
        let segments = segment_record(&rec.record_id, [&rec.channels[0], &rec.channels[1]], layout)
            .user(format!("record {}", rec.record_id))?;
        for mut seg in segments {
            let span = seg.segment_index * window..(seg.segment_index + 1) * window;
            seg.artifact = rec.artifact.iter().any(|a| a[span.clone()].iter().any(|f| *f));
            if seg.artifact {
                skipped += 1;
                continue;
            }
            let mut fv = extract_features(&seg, layout)?;
            fv.label = rec.label;
            if args.bba_correct {
                fv = bba_correct(&fv, layout)?;
            }
            rows.push(fv);
        }
    }
    if skipped > 0 {
        note(format!("skipped {skipped} segments flagged as artifacts"));
    }
    note(format!(
        "{} segments from {} records",
        rows.len(),
        records.len()
    ));
    Ok(rows)
}

pub fn features(args: &FeaturesArgs) -> CmdResult<RunManifest> {
    let started = Instant::now();
    let (layout, rows) = match input_kind(&args.input)? {
        InputKind::Raw { .. } => {
            let layout = FeatureLayout::standard(args.sample_rate)?;
            let rows = featurize_raw(args, &layout)?;
            (layout, rows)
        }
        InputKind::Features { .. } => {
            let (source, rows) = read_features(&args.input)?;
            if !source.sidecar && args.bba_correct {
                note(format!(
                    "no metadata next to {}; assuming uncorrected features",
                    args.input.display()
                ));
            }
            if args.bba_correct && source.bba_corrected {
                bail_user!(
                    "{} is already BBA-corrected; refusing to correct twice",
                    args.input.display()
                );
            }
            let rows = if args.bba_correct {
                rows.iter()
                    .map(|fv| bba_correct(fv, &source.layout))
                    .collect::<Result<_, _>>()?
            } else {
                rows
            };
            (source.layout, rows)
        }
    };
    let corrected = args.bba_correct || rows.first().is_some_and(|fv| fv.bba_corrected);

    let mut run = RunDir::create(&args.out, "features", started)?;
    run.write(FEATURES_FILE, &tables::features_csv(&rows, layout.len())?)?;
    let sidecar = FeatureSidecar::new(&layout, corrected);
    let sidecar_name = tables::sidecar_path(Path::new(FEATURES_FILE));
    run.write(&sidecar_name.to_string_lossy(), sidecar.to_json()?.as_bytes())?;
    let mut config = BTreeMap::new();
    config.insert("bba_correct".to_string(), args.bba_correct.to_string());
    config.insert("sample_rate".to_string(), args.sample_rate.to_string());
    run.finish(None, config, &[&args.input])
}

/// Training settings: the trainer's keys plus `q` and `test_fraction`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub q: Option<usize>,
    pub test_fraction: f64,
}

impl TrainSettings {
    pub fn parse(text: &str) -> pairnet_core::Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let train = TrainConfig::take_from(&mut kv)?;
        let q = kv.take("q")?;
        let test_fraction = kv.take("test_fraction")?.unwrap_or(DEFAULT_TEST_FRACTION);
        kv.finish()?;
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(pairnet_core::Error::InvalidConfig(format!(
                "test_fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        Ok(Self {
            train,
            q,
            test_fraction,
        })
    }

    pub fn to_key_values(&self) -> String {
        let mut s = self.train.to_key_values();
        if let Some(q) = self.q {
            s.push_str(&format!("q = {q}\n"));
        }
        s.push_str(&format!("test_fraction = {}\n", self.test_fraction));
        s
    }
}

pub fn pair_diagnostics_csv(pairs: &[PairDiagnostics]) -> String {
    let mut s = String::from("i,j,n_features,val_error\n");
    for p in pairs {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.class_lo,
            p.class_hi,
            p.n_features,
            1.0 - p.validation_accuracy
        ));
    }
    s
}

pub fn train(args: &TrainArgs) -> CmdResult<RunManifest> {
    let started = Instant::now();
    let mut settings = match &args.config {
        Some(path) => TrainSettings::parse(&read_text(path)?)
            .user(format!("bad config {}", path.display()))?,
        None => TrainSettings::parse("")?,
    };
    if let Some(seed) = args.seed {
        settings.train.seed = seed;
    }
    let (source, rows) = read_features(&args.input)?;
    if rows.is_empty() {
        bail_user!("{} has no rows", args.input.display());
    }
    if let Some(fv) = rows.iter().find(|fv| fv.label.is_none()) {
        bail_user!("record {} has unlabeled segments; training needs labels", fv.record_id);
    }
    let q = settings
        .q
        .unwrap_or_else(|| rows.iter().filter_map(|fv| fv.label).max().unwrap_or(0));

    let dataset = if settings.test_fraction == 0.0 {
        SegmentDataset::train_only(source.layout.clone(), rows)
    } else {
        split_by_record(rows, source.layout.clone(), settings.test_fraction, settings.train.seed)?
    };
    for w in &dataset.warnings {
        note(w);
    }
    let model = train_model(&dataset, q, &settings.train)?;
    note(format!(
        "trained {} pair classifiers on {}",
        model.classifiers.len(),
        model.trained_on
    ));

    let mut run = RunDir::create(&args.out, "train", started)?;
    run.write(MODEL_FILE, model.to_json().internal("cannot encode model")?.as_bytes())?;
    run.write(
        PAIR_DIAGNOSTICS_FILE,
        pair_diagnostics_csv(&model.metadata.pairs).as_bytes(),
    )?;
    let mut inputs: Vec<&Path> = vec![&args.input];
    inputs.extend(args.config.as_deref());
    run.finish(
        Some(settings.train.seed),
        config_map(&settings.to_key_values()),
        &inputs,
    )
}

pub fn load_model(path: &Path) -> CmdResult<MultiClassModel> {
    MultiClassModel::from_json(&read_text(path)?).user(format!("bad model {}", path.display()))
}

/// Rejects feature tables that do not match what the model was trained on.
pub fn check_compatible(model: &MultiClassModel, source: &FeatureSource, input: &Path) -> CmdResult<()> {
    let expected = model.feature_layout.len();
    if source.layout.len() != expected {
        bail_user!(
            "{} has {} features but the model expects {expected}",
            input.display(),
            source.layout.len()
        );
    }
    if source.sidecar {
        if source.layout != model.feature_layout {
            bail_user!(
                "feature layout of {} differs from the model's",
                input.display()
            );
        }
        if source.bba_corrected != model.metadata.bba_corrected {
            bail_user!(
                "{} has bba_corrected = {} but the model was trained with bba_corrected = {}",
                input.display(),
                source.bba_corrected,
                model.metadata.bba_corrected
            );
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PartitionMetrics {
    segments: usize,
    records: usize,
    segment_accuracy: f64,
    record_accuracy: f64,
}

impl From<&Evaluation> for PartitionMetrics {
    fn from(e: &Evaluation) -> Self {
        Self {
            segments: e.segments,
            records: e.records.len(),
            segment_accuracy: e.segment_accuracy,
            record_accuracy: e.record_accuracy,
        }
    }
}

#[derive(Debug, Serialize)]
struct Metrics {
    q: usize,
    model_trained_on: String,
    /// Partition the confusion matrix was computed on.
    confusion_partition: String,
    partitions: BTreeMap<String, PartitionMetrics>,
}

fn confusion_csv(e: &Evaluation) -> String {
    let q = e.confusion.q;
    let mut s = String::from("true");
    for p in 1..=q {
        s.push_str(&format!(",pred_{p}"));
    }
    s.push('\n');
    for (t, row) in e.confusion.counts.iter().enumerate() {
        s.push_str(&(t + 1).to_string());
        for c in row {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

fn records_csv(e: &Evaluation, q: usize) -> String {
    let mut s = String::from("record_id,true,predicted,probability");
    for k in 1..=q {
        s.push_str(&format!(",frac_{k}"));
    }
    s.push('\n');
    for r in &e.records {
        let d = &r.decision;
        s.push_str(&format!(
            "{},{},{},{}",
            d.record_id, r.true_class, d.predicted_class, d.probability
        ));
        for f in &d.per_class_fractions {
            s.push_str(&format!(",{f}"));
        }
        s.push('\n');
    }
    s
}

pub fn eval(args: &EvalArgs) -> CmdResult<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let (source, rows) = read_features(&args.input)?;
    check_compatible(&model, &source, &args.input)?;
    if rows.is_empty() {
        bail_user!("{} has no rows", args.input.display());
    }
    if let Some(fv) = rows.iter().find(|fv| fv.label.is_none()) {
        bail_user!(
            "record {} has unlabeled segments; use `pairnet predict` for unlabeled data",
            fv.record_id
        );
    }
    if let Some(fv) = rows.iter().find(|fv| fv.label.is_some_and(|l| l > model.q)) {
        bail_user!(
            "record {} has label {} but the model knows {} classes",
            fv.record_id,
            fv.label.unwrap_or(0),
            model.q
        );
    }

    let trained: BTreeSet<&str> = model
        .metadata
        .training_records
        .iter()
        .map(String::as_str)
        .collect();
    let (train_rows, test_rows): (Vec<FeatureVector>, Vec<FeatureVector>) = rows
        .iter()
        .cloned()
        .partition(|fv| trained.contains(fv.record_id.as_str()));

    let all = evaluate(&model, &rows)?;
    let mut partitions = BTreeMap::new();
    partitions.insert("all".to_string(), PartitionMetrics::from(&all));
    let mut confusion_from = ("all", &all);
    let train_eval;
    let test_eval;
    if !train_rows.is_empty() {
        train_eval = evaluate(&model, &train_rows)?;
        partitions.insert("train".to_string(), PartitionMetrics::from(&train_eval));
    }
    if !test_rows.is_empty() {
        test_eval = evaluate(&model, &test_rows)?;
        partitions.insert("test".to_string(), PartitionMetrics::from(&test_eval));
        confusion_from = ("test", &test_eval);
    }
    for (name, m) in &partitions {
        note(format!(
            "{name}: segment accuracy {:.4}, record accuracy {:.4} ({} records)",
            m.segment_accuracy, m.record_accuracy, m.records
        ));
    }

    let metrics = Metrics {
        q: model.q,
        model_trained_on: model.trained_on.clone(),
        confusion_partition: confusion_from.0.to_string(),
        partitions,
    };
    let mut metrics_json = serde_json::to_string_pretty(&metrics).internal("cannot encode metrics")?;
    metrics_json.push('\n');

    let mut run = RunDir::create(&args.out, "eval", started)?;
    run.write(METRICS_FILE, metrics_json.as_bytes())?;
    run.write(CONFUSION_FILE, confusion_csv(confusion_from.1).as_bytes())?;
    run.write(RECORDS_FILE, records_csv(&all, model.q).as_bytes())?;
    run.write(
        PAIR_DIAGNOSTICS_FILE,
        pair_diagnostics_csv(&model.metadata.pairs).as_bytes(),
    )?;
    run.finish(None, BTreeMap::new(), &[&args.model, &args.input])
}

fn write_predictions<W: Write>(
    model: &MultiClassModel,
    rows: tables::FeatureRows,
    out: W,
) -> CmdResult<()> {
    let mut out = BufWriter::new(out);
    let io_err = |e: io::Error| Failure::user(anyhow::Error::new(e).context("cannot write predictions"));
    writeln!(out, "record_id,segment_index,predicted").map_err(io_err)?;
    for fv in rows {
        let fv = fv?;
        let class = model.predict(&fv.values)?;
        writeln!(out, "{},{},{class}", fv.record_id, fv.segment_index).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn predict(args: &PredictArgs) -> CmdResult<Option<RunManifest>> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let (source, rows) = open_features(&args.input)?;
    check_compatible(&model, &source, &args.input)?;
    match &args.out {
        None => {
            write_predictions(&model, rows, io::stdout().lock())?;
            Ok(None)
        }
        Some(dir) => {
            let mut run = RunDir::create(dir, "predict", started)?;
            let path = run.path(PREDICTIONS_FILE);
            let file = fs::File::create(&path).user(format!("cannot create {}", path.display()))?;
            write_predictions(&model, rows, file)?;
            run.register(PREDICTIONS_FILE);
            run.finish(None, BTreeMap::new(), &[&args.model, &args.input])
                .map(Some)
        }
    }
}
