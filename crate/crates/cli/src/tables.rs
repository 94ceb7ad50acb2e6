//! CSV formats: raw samples, feature rows and their metadata sidecar.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use pairnet_core::datagen::Corpus;
use pairnet_core::features::{FeatureLayout, FeatureVector, CHANNELS};
use serde::{Deserialize, Serialize};

use crate::bail_user;
use crate::failure::{Classify, CmdResult, Failure};

pub const RAW_HEADER: [&str; 5] = ["record_id", "label", "channel", "t", "value"];
pub const FEATURE_PREFIX: [&str; 3] = ["record_id", "segment_index", "label"];

/// What kind of table a CSV file holds, judged from its header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Raw { artifact_column: bool },
    Features { columns: usize },
}

fn open(path: &Path) -> CmdResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .user(format!("cannot open {}", path.display()))
}

fn header(reader: &mut csv::Reader<File>, path: &Path) -> CmdResult<Vec<String>> {
    Ok(reader
        .headers()
        .user(format!("cannot read header of {}", path.display()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

fn classify_header(cols: &[String], path: &Path) -> CmdResult<InputKind> {
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    if names.len() >= 5 && names[..5] == RAW_HEADER {
        match &names[5..] {
            [] => return Ok(InputKind::Raw { artifact_column: false }),
            ["artifact"] => return Ok(InputKind::Raw { artifact_column: true }),
            _ => {}
        }
    }
    if names.len() > 3 && names[..3] == FEATURE_PREFIX {
        let columns = names.len() - 3;
        for (k, name) in names[3..].iter().enumerate() {
            if *name != format!("f{}", k + 1) {
                bail_user!(
                    "{}: feature column {} is named {name:?}, expected f{}",
                    path.display(),
                    k + 4,
                    k + 1
                );
            }
        }
        return Ok(InputKind::Features { columns });
    }
    bail_user!(
        "{}: unrecognised header; expected `{}` or `{},f1..fN`",
        path.display(),
        RAW_HEADER.join(","),
        FEATURE_PREFIX.join(",")
    )
}

pub fn input_kind(path: &Path) -> CmdResult<InputKind> {
    let mut reader = open(path)?;
    let cols = header(&mut reader, path)?;
    classify_header(&cols, path)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_label(text: &str, path: &Path, line: u64) -> CmdResult<Option<usize>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    match text.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(Some(v)),
        _ => bail_user!(
            "{}:{line}: label must be a positive integer or empty, got {text:?}",
            path.display()
        ),
    }
}

fn parse_field<T: std::str::FromStr>(text: &str, what: &str, path: &Path, line: u64) -> CmdResult<T> {
    match text.trim().parse() {
        Ok(v) => Ok(v),
        Err(_) => bail_user!("{}:{line}: cannot parse {what} {text:?}", path.display()),
    }
}

fn parse_value(text: &str, what: &str, path: &Path, line: u64) -> CmdResult<f64> {
    let v: f64 = parse_field(text, what, path, line)?;
    if !v.is_finite() {
        bail_user!("{}:{line}: {what} must be finite, got {text:?}", path.display());
    }
    Ok(v)
}

/// One record's samples as read from a raw CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecordData {
    pub record_id: String,
    pub label: Option<usize>,
    pub channels: [Vec<f64>; CHANNELS],
    /// Per-sample artifact flags of both channels.
    pub artifact: [Vec<bool>; CHANNELS],
}

#[derive(Default)]
struct RawBuilder {
    label: Option<usize>,
    samples: [Vec<Option<(f64, bool)>>; CHANNELS],
}

/// Reads a raw sample CSV; records keep their order of first appearance.
pub fn read_raw(path: &Path) -> CmdResult<Vec<RawRecordData>> {
    let mut reader = open(path)?;
    let cols = header(&mut reader, path)?;
    let artifact_column = match classify_header(&cols, path)? {
        InputKind::Raw { artifact_column } => artifact_column,
        InputKind::Features { .. } => bail_user!("{} is a feature table, not raw samples", path.display()),
    };

    let mut order: Vec<String> = Vec::new();
    let mut builders: HashMap<String, RawBuilder> = HashMap::new();
    for row in reader.records() {
        let row = row.user(format!("malformed CSV in {}", path.display()))?;
        let line = line_of(&row);
        let id = row[0].trim();
        if id.is_empty() {
            bail_user!("{}:{line}: empty record_id", path.display());
        }
        let label = parse_label(&row[1], path, line)?;
        let channel: usize = parse_field(&row[2], "channel", path, line)?;
        if !(1..=CHANNELS).contains(&channel) {
            bail_user!("{}:{line}: channel must be 1 or 2, got {channel}", path.display());
        }
        let t: usize = parse_field(&row[3], "sample index t", path, line)?;
        let value = parse_value(&row[4], "value", path, line)?;
        let flagged = if artifact_column {
            match row[5].trim() {
                "" | "0" | "false" => false,
                "1" | "true" => true,
                other => bail_user!("{}:{line}: artifact must be 0 or 1, got {other:?}", path.display()),
            }
        } else {
            false
        };

        let builder = match builders.get_mut(id) {
            Some(b) => {
                if b.label != label {
                    bail_user!(
                        "{}:{line}: record {id} changes label from {:?} to {:?}",
                        path.display(),
                        b.label,
                        label
                    );
                }
                b
            }
            None => {
                order.push(id.to_string());
                builders.entry(id.to_string()).or_insert(RawBuilder {
                    label,
                    ..RawBuilder::default()
                })
            }
        };
        let samples = &mut builder.samples[channel - 1];
        if samples.len() <= t {
            samples.resize(t + 1, None);
        }
        if samples[t].is_some() {
            bail_user!("{}:{line}: duplicate sample t={t} for {id} channel {channel}", path.display());
        }
        samples[t] = Some((value, flagged));
    }

    order
        .into_iter()
        .map(|id| {
            let b = builders.remove(&id).expect("builder per id");
            let mut channels: [Vec<f64>; CHANNELS] = Default::default();
            let mut artifact: [Vec<bool>; CHANNELS] = Default::default();
            for c in 0..CHANNELS {
                for (t, s) in b.samples[c].iter().enumerate() {
                    let Some((v, flag)) = s else {
                        bail_user!("{}: record {id} channel {} is missing sample t={t}", path.display(), c + 1);
                    };
                    channels[c].push(*v);
                    artifact[c].push(*flag);
                }
            }
            if channels[0].len() != channels[1].len() {
                bail_user!(
                    "{}: record {id} has {} samples on channel 1 but {} on channel 2",
                    path.display(),
                    channels[0].len(),
                    channels[1].len()
                );
            }
            Ok(RawRecordData {
                record_id: id,
                label: b.label,
                channels,
                artifact,
            })
        })
        .collect()
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

fn flush<W: Write>(w: csv::Writer<W>) -> CmdResult<W> {
    w.into_inner()
        .map_err(|e| Failure::internal(anyhow::anyhow!("cannot flush CSV: {e}")))
}

pub fn corpus_csv(corpus: &Corpus) -> CmdResult<Vec<u8>> {
    let mut w = csv_writer(Vec::new());
    w.write_record(RAW_HEADER).internal("CSV write")?;
    for rec in &corpus.records {
        let label = rec.label.to_string();
        for (c, samples) in rec.channels.iter().enumerate() {
            let channel = (c + 1).to_string();
            for (t, v) in samples.iter().enumerate() {
                w.write_record([
                    rec.record_id.as_str(),
                    &label,
                    &channel,
                    &t.to_string(),
                    &v.to_string(),
                ])
                .internal("CSV write")?;
            }
        }
    }
    flush(w)
}

pub fn ground_truth_csv(corpus: &Corpus) -> CmdResult<Vec<u8>> {
    let mut w = csv_writer(Vec::new());
    w.write_record(["record_id", "segment_index", "gain"]).internal("CSV write")?;
    for rec in &corpus.records {
        for (s, g) in rec.segment_gains.iter().enumerate() {
            w.write_record([rec.record_id.as_str(), &s.to_string(), &g.to_string()])
                .internal("CSV write")?;
        }
    }
    flush(w)
}

/// Metadata stored next to a feature CSV as `<stem>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub format: String,
    pub version: u32,
    pub bba_corrected: bool,
    pub feature_layout: FeatureLayout,
}

const SIDECAR_FORMAT: &str = "pairnet-features";

impl FeatureSidecar {
    pub fn new(layout: &FeatureLayout, bba_corrected: bool) -> Self {
        Self {
            format: SIDECAR_FORMAT.into(),
            version: 1,
            bba_corrected,
            feature_layout: layout.clone(),
        }
    }

    pub fn to_json(&self) -> CmdResult<String> {
        let mut s = serde_json::to_string_pretty(self).internal("cannot encode feature metadata")?;
        s.push('\n');
        Ok(s)
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn load_sidecar(csv_path: &Path) -> CmdResult<Option<FeatureSidecar>> {
    let path = sidecar_path(csv_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).user(format!("cannot read {}", path.display()))?;
    let sidecar: FeatureSidecar =
        serde_json::from_str(&text).user(format!("malformed feature metadata {}", path.display()))?;
    if sidecar.format != SIDECAR_FORMAT || sidecar.version != 1 {
        bail_user!("{}: unsupported feature metadata format", path.display());
    }
    sidecar
        .feature_layout
        .validate()
        .user(format!("{}: bad feature layout", path.display()))?;
    Ok(Some(sidecar))
}

/// Header facts of a feature CSV plus its sidecar, if any.
#[derive(Debug, Clone)]
pub struct FeatureSource {
    pub layout: FeatureLayout,
    pub bba_corrected: bool,
    pub sidecar: bool,
}

/// Streams rows of a feature CSV one at a time.
pub struct FeatureRows {
    path: PathBuf,
    columns: usize,
    records: csv::StringRecordsIntoIter<File>,
}

impl Iterator for FeatureRows {
    type Item = CmdResult<FeatureVector>;

    fn next(&mut self) -> Option<Self::Item> {
        let row = self.records.next()?;
        Some(self.parse(row))
    }
}

impl FeatureRows {
    fn parse(&self, row: csv::Result<csv::StringRecord>) -> CmdResult<FeatureVector> {
        let path = self.path.as_path();
        let row = row.user(format!("malformed CSV in {}", path.display()))?;
        let line = line_of(&row);
        if row.len() != self.columns + 3 {
            bail_user!(
                "{}:{line}: expected {} fields, got {}",
                path.display(),
                self.columns + 3,
                row.len()
            );
        }
        let values = (0..self.columns)
            .map(|k| parse_value(&row[k + 3], &format!("f{}", k + 1), path, line))
            .collect::<CmdResult<_>>()?;
        Ok(FeatureVector {
            values,
            record_id: row[0].trim().to_string(),
            segment_index: parse_field(&row[1], "segment_index", path, line)?,
            label: parse_label(&row[2], path, line)?,
            bba_corrected: false,
        })
    }
}

/// Opens a feature CSV for streaming. Without a sidecar, 72 columns are
/// taken as the standard layout at 100 Hz and other widths as generic
/// columns, both uncorrected.
pub fn open_features(path: &Path) -> CmdResult<(FeatureSource, FeatureRows)> {
    let mut reader = open(path)?;
    let cols = header(&mut reader, path)?;
    let columns = match classify_header(&cols, path)? {
        InputKind::Features { columns } => columns,
        InputKind::Raw { .. } => bail_user!(
            "{} holds raw samples; run `pairnet features` first",
            path.display()
        ),
    };
    let source = match load_sidecar(path)? {
        Some(s) => {
            if s.feature_layout.len() != columns {
                bail_user!(
                    "{} has {columns} feature columns but its metadata describes {}",
                    path.display(),
                    s.feature_layout.len()
                );
            }
            FeatureSource {
                layout: s.feature_layout,
                bba_corrected: s.bba_corrected,
                sidecar: true,
            }
        }
        None => FeatureSource {
            layout: if columns == pairnet_core::features::FEATURE_COUNT {
                FeatureLayout::standard(pairnet_core::features::DEFAULT_SAMPLE_RATE_HZ)?
            } else {
                FeatureLayout::generic(columns)
            },
            bba_corrected: false,
            sidecar: false,
        },
    };
    let rows = FeatureRows {
        path: path.to_path_buf(),
        columns,
        records: reader.into_records(),
    };
    Ok((source, rows))
}

/// Reads a whole feature CSV.
pub fn read_features(path: &Path) -> CmdResult<(FeatureSource, Vec<FeatureVector>)> {
    let (source, rows) = open_features(path)?;
    let mut out: Vec<FeatureVector> = rows.collect::<CmdResult<_>>()?;
    for fv in &mut out {
        fv.bba_corrected = source.bba_corrected;
    }
    Ok((source, out))
}

pub fn feature_header(columns: usize) -> Vec<String> {
    FEATURE_PREFIX
        .iter()
        .map(|s| s.to_string())
        .chain((1..=columns).map(|k| format!("f{k}")))
        .collect()
}

pub fn features_csv(rows: &[FeatureVector], columns: usize) -> CmdResult<Vec<u8>> {
    let mut w = csv_writer(Vec::new());
    w.write_record(feature_header(columns)).internal("CSV write")?;
    let mut fields: Vec<String> = Vec::with_capacity(columns + 3);
    for fv in rows {
        fields.clear();
        fields.push(fv.record_id.clone());
        fields.push(fv.segment_index.to_string());
        fields.push(fv.label.map(|l| l.to_string()).unwrap_or_default());
        fields.extend(fv.values.iter().map(|v| v.to_string()));
        w.write_record(&fields).internal("CSV write")?;
    }
    flush(w)
}
