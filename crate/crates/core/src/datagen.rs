//! Synthetic two-channel corpora and record-level dataset splits.
//!
//! Every class has a six-band amplitude profile; profiles change smoothly
//! with the class index so neighbouring classes are the hardest to tell
//! apart. A band is rendered as three tones placed exactly on the 0.1 Hz
//! periodogram grid of a 10-second segment, which keeps band powers
//! independent of tone phase. Each segment scales the profile by lognormal
//! noise (`overlap`), and each record multiplies its segments by a slow
//! log-domain random walk (`bba_drift`) whose values are reported back as
//! ground truth. White noise (`noise_floor`) is added last.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::features::{
    bba_correct, extract_features, segment_record, FeatureLayout, FeatureVector, CHANNELS,
    DEFAULT_SAMPLE_RATE_HZ,
};
use crate::rng::{stream_rng, Stream};

/// Tone frequencies (Hz) per canonical band, all multiples of 0.1 Hz.
const BAND_TONES_HZ: [[f64; 3]; 6] = [
    [0.4, 0.8, 1.2],
    [1.8, 2.5, 3.2],
    [4.3, 5.5, 6.7],
    [8.7, 10.5, 12.3],
    [14.7, 16.5, 18.3],
    [20.6, 22.2, 23.8],
];
const TONE_WEIGHTS: [f64; 3] = [0.6, 1.0, 0.8];
const CHANNEL_GAIN: [f64; CHANNELS] = [1.0, 0.85];

/// Band amplitude of the first class, and how its log changes across classes.
const PROFILE_BASE: [f64; 6] = [20.0, 12.0, 6.0, 4.0, 2.5, 1.5];
const PROFILE_TREND: [f64; 6] = [-0.8, -0.5, -0.1, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub q: usize,
    pub records_per_class: usize,
    pub segments_per_record: usize,
    pub sample_rate_hz: f64,
    /// Per class (index 0 is class 1), six mean band amplitudes.
    pub class_band_profile: Vec<[f64; 6]>,
    /// Std-dev of the per-segment log-amplitude noise.
    pub overlap: f64,
    /// Std-dev of each step of the per-record log-gain random walk.
    pub bba_drift: f64,
    /// Std-dev of additive white noise.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::with_classes(16)
    }
}

impl SyntheticSpec {
    pub fn with_classes(q: usize) -> Self {
        Self {
            q,
            records_per_class: 4,
            segments_per_record: 30,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            class_band_profile: default_profile(q),
            overlap: 0.35,
            bba_drift: 0.1,
            noise_floor: 0.5,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.q < 2 {
            return bad(format!("q must be at least 2, got {}", self.q));
        }
        if self.records_per_class == 0 || self.segments_per_record == 0 {
            return bad("records_per_class and segments_per_record must be at least 1".into());
        }
        for (name, v) in [
            ("overlap", self.overlap),
            ("bba_drift", self.bba_drift),
            ("noise_floor", self.noise_floor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.class_band_profile.len() != self.q {
            return bad(format!(
                "class_band_profile has {} rows for q = {}",
                self.class_band_profile.len(),
                self.q
            ));
        }
        if self
            .class_band_profile
            .iter()
            .flatten()
            .any(|a| !(a.is_finite() && *a >= 0.0))
        {
            return bad("class_band_profile amplitudes must be finite and >= 0".into());
        }
        FeatureLayout::standard(self.sample_rate_hz)?;
        Ok(())
    }

    /// Reads a flat key=value spec. The band profile is always the default
    /// progression for the configured `q`.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let d = Self::default();
        let q = kv.take("q")?.unwrap_or(d.q);
        let spec = Self {
            q,
            records_per_class: kv.take("records_per_class")?.unwrap_or(d.records_per_class),
            segments_per_record: kv
                .take("segments_per_record")?
                .unwrap_or(d.segments_per_record),
            sample_rate_hz: kv.take("sample_rate_hz")?.unwrap_or(d.sample_rate_hz),
            class_band_profile: default_profile(q),
            overlap: kv.take("overlap")?.unwrap_or(d.overlap),
            bba_drift: kv.take("bba_drift")?.unwrap_or(d.bba_drift),
            noise_floor: kv.take("noise_floor")?.unwrap_or(d.noise_floor),
            seed: kv.take("seed")?.unwrap_or(d.seed),
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "q = {}\nrecords_per_class = {}\nsegments_per_record = {}\nsample_rate_hz = {}\n\
             overlap = {}\nbba_drift = {}\nnoise_floor = {}\nseed = {}\n",
            self.q,
            self.records_per_class,
            self.segments_per_record,
            self.sample_rate_hz,
            self.overlap,
            self.bba_drift,
            self.noise_floor,
            self.seed
        )
    }
}

/// Monotone class progression: slow bands fade and fast bands grow with the
/// class index, log-linearly.
pub fn default_profile(q: usize) -> Vec<[f64; 6]> {
    (0..q)
        .map(|c| {
            let t = if q > 1 {
                c as f64 / (q - 1) as f64
            } else {
                0.0
            };
            std::array::from_fn(|b| PROFILE_BASE[b] * (PROFILE_TREND[b] * t).exp())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub record_id: String,
    pub label: usize,
    pub channels: [Vec<f64>; CHANNELS],
    /// Amplitude gain applied to each segment's band tones.
    pub segment_gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sample_rate_hz: f64,
    pub records: Vec<RawRecord>,
}

pub fn record_id(class: usize, index: usize) -> String {
    format!("c{class:02}r{index:02}")
}

/// Generates the corpus; identical `(spec, seed)` give bit-identical output.
pub fn generate_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let window = (spec.sample_rate_hz * 10.0).round() as usize;

    // tone waveforms are fixed per class and channel; segments reuse them
    let waveforms: Vec<[Vec<Vec<f64>>; CHANNELS]> = (1..=spec.q)
        .map(|class| {
            std::array::from_fn(|c| {
                let mut rng = stream_rng(seed, Stream::ClassPhase, class as u64, c as u64);
                BAND_TONES_HZ
                    .iter()
                    .flatten()
                    .map(|&f| {
                        let phase = rng.random::<f64>() * 2.0 * PI;
                        (0..window)
                            .map(|n| (2.0 * PI * f * n as f64 / spec.sample_rate_hz + phase).sin())
                            .collect()
                    })
                    .collect()
            })
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (1..=spec.q)
        .flat_map(|class| (0..spec.records_per_class).map(move |r| (class, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(class, r)| generate_record(spec, seed, class, r, window, &waveforms[class - 1]))
        .collect();
    Ok(Corpus {
        sample_rate_hz: spec.sample_rate_hz,
        records,
    })
}

fn generate_record(
    spec: &SyntheticSpec,
    seed: u64,
    class: usize,
    index: usize,
    window: usize,
    waveforms: &[Vec<Vec<f64>>; CHANNELS],
) -> RawRecord {
    let mut rng = stream_rng(seed, Stream::Record, class as u64, index as u64);
    let profile = &spec.class_band_profile[class - 1];
    let total = window * spec.segments_per_record;
    let mut channels: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| Vec::with_capacity(total));
    let mut gains = Vec::with_capacity(spec.segments_per_record);
    let mut log_gain = 0.0;

    for _ in 0..spec.segments_per_record {
        log_gain += spec.bba_drift * rng.sample::<f64, _>(StandardNormal);
        let gain = log_gain.exp();
        gains.push(gain);
        for (c, out) in channels.iter_mut().enumerate() {
            let mut amplitudes = Vec::with_capacity(18);
            for &band_amp in profile {
                let jitter = (spec.overlap * rng.sample::<f64, _>(StandardNormal)).exp();
                for w in TONE_WEIGHTS {
                    amplitudes.push(band_amp * jitter * w * CHANNEL_GAIN[c] * gain);
                }
            }
            let start = out.len();
            out.resize(start + window, 0.0);
            let seg = &mut out[start..];
            for (amp, wave) in amplitudes.iter().zip(&waveforms[c]) {
                for (s, v) in seg.iter_mut().zip(wave) {
                    *s += amp * v;
                }
            }
            if spec.noise_floor > 0.0 {
                for s in seg.iter_mut() {
                    *s += spec.noise_floor * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    RawRecord {
        record_id: record_id(class, index),
        label: class,
        channels,
        segment_gains: gains,
    }
}

/// Segments and featurizes one labeled record.
pub fn featurize_record(
    record_id: &str,
    label: Option<usize>,
    channels: [&[f64]; CHANNELS],
    layout: &FeatureLayout,
    correct_bba: bool,
) -> Result<Vec<FeatureVector>> {
    segment_record(record_id, channels, layout)?
        .iter()
        .filter(|s| !s.artifact)
        .map(|s| {
            let mut fv = extract_features(s, layout)?;
            fv.label = label;
            if correct_bba {
                fv = bba_correct(&fv, layout)?;
            }
            Ok(fv)
        })
        .collect()
}

impl Corpus {
    pub fn layout(&self) -> Result<FeatureLayout> {
        FeatureLayout::standard(self.sample_rate_hz)
    }

    pub fn featurize(&self, correct_bba: bool) -> Result<Vec<FeatureVector>> {
        let layout = self.layout()?;
        let per_record: Vec<Vec<FeatureVector>> = self
            .records
            .par_iter()
            .map(|r| {
                featurize_record(
                    &r.record_id,
                    Some(r.label),
                    [&r.channels[0], &r.channels[1]],
                    &layout,
                    correct_bba,
                )
            })
            .collect::<Result<_>>()?;
        Ok(per_record.into_iter().flatten().collect())
    }
}

/// Labeled feature vectors split into train and test partitions by record.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDataset {
    pub layout: FeatureLayout,
    pub train: Vec<FeatureVector>,
    pub test: Vec<FeatureVector>,
    pub warnings: Vec<String>,
}

impl SegmentDataset {
    /// Everything in the training partition.
    pub fn train_only(layout: FeatureLayout, train: Vec<FeatureVector>) -> Self {
        Self {
            layout,
            train,
            test: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Labels of each record, rejecting unlabeled or mixed-label records.
pub fn record_labels(vectors: &[FeatureVector]) -> Result<BTreeMap<String, usize>> {
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    for fv in vectors {
        let label = fv.label.ok_or_else(|| Error::Unlabeled(fv.record_id.clone()))?;
        match labels.get(&fv.record_id) {
            Some(&first) if first != label => {
                return Err(Error::MixedRecordLabels {
                    record_id: fv.record_id.clone(),
                    first,
                    other: label,
                })
            }
            Some(_) => {}
            None => {
                labels.insert(fv.record_id.clone(), label);
            }
        }
    }
    Ok(labels)
}

/// Assigns whole records to the test partition, about `test_fraction` of
/// each class. A class with a single record keeps it in training and
/// records a warning.
pub fn split_by_record(
    vectors: Vec<FeatureVector>,
    layout: FeatureLayout,
    test_fraction: f64,
    seed: u64,
) -> Result<SegmentDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let labels = record_labels(&vectors)?;
    let mut by_class: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (id, &label) in &labels {
        by_class.entry(label).or_default().push(id);
    }

    let mut test_records = BTreeSet::new();
    let mut warnings = Vec::new();
    for (&class, ids) in &by_class {
        if ids.len() == 1 {
            warnings.push(format!(
                "class {class} has a single record ({}); kept in training",
                ids[0]
            ));
            continue;
        }
        let mut ids = ids.clone();
        ids.shuffle(&mut stream_rng(seed, Stream::Split, class as u64, 0));
        let n_test = ((test_fraction * ids.len() as f64).round() as usize).min(ids.len() - 1);
        test_records.extend(ids[..n_test].iter().map(|s| s.as_str()));
    }

    let (test, train): (Vec<_>, Vec<_>) = vectors
        .into_iter()
        .partition(|fv| test_records.contains(fv.record_id.as_str()));
    Ok(SegmentDataset {
        layout,
        train,
        test,
        warnings,
    })
}
