//! Segment-level spectral and statistical features.
//!
//! A two-channel record is cut into non-overlapping 10-second segments. Each
//! segment is summarised by 72 values: for every channel and each of the six
//! canonical bands, the log absolute power, relative power, spectral
//! variance, peak frequency and spectral entropy (2 x 6 x 5 = 60), plus six
//! whole-signal statistics per channel (2 x 6 = 12).
//!
//! Spectra are plain single-sided periodograms of the mean-removed,
//! unwindowed segment, scaled so that the bins sum to the signal variance.
//!
//! The background activity level (BBA) of a channel is the mean of its six
//! log band powers. Subtracting it in the log domain cancels any
//! multiplicative gain applied to the raw samples.

use std::cell::RefCell;
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor inside every logarithm so silent segments stay finite.
pub const LOG_EPSILON: f64 = 1e-12;

pub const SEGMENT_SECONDS: f64 = 10.0;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 100.0;
pub const CHANNELS: usize = 2;
pub const FEATURE_COUNT: usize = 72;

const BAND_STATS: usize = 5;
const GLOBAL_STATS: usize = 6;
const PER_CHANNEL_BAND_FEATURES: usize = BAND_STATS * 6;
const BAND_BLOCK: usize = CHANNELS * PER_CHANNEL_BAND_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Subdelta,
    Delta,
    Theta,
    Alpha,
    Beta1,
    Beta2,
}

impl BandName {
    pub const ALL: [BandName; 6] = [
        BandName::Subdelta,
        BandName::Delta,
        BandName::Theta,
        BandName::Alpha,
        BandName::Beta1,
        BandName::Beta2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BandName::Subdelta => "subdelta",
            BandName::Delta => "delta",
            BandName::Theta => "theta",
            BandName::Alpha => "alpha",
            BandName::Beta1 => "beta1",
            BandName::Beta2 => "beta2",
        }
    }

    fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A frequency band `[lo_hz, hi_hz)`. The topmost canonical band (beta2)
/// also includes its upper edge, so the six bands tile `[0, 25]` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyBand {
    pub name: BandName,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl FrequencyBand {
    pub fn contains(&self, freq_hz: f64) -> bool {
        if freq_hz < self.lo_hz {
            return false;
        }
        if self.name == BandName::Beta2 {
            freq_hz <= self.hi_hz
        } else {
            freq_hz < self.hi_hz
        }
    }

    pub fn width_hz(&self) -> f64 {
        self.hi_hz - self.lo_hz
    }
}

pub const CANONICAL_BANDS: [FrequencyBand; 6] = [
    FrequencyBand {
        name: BandName::Subdelta,
        lo_hz: 0.0,
        hi_hz: 1.5,
    },
    FrequencyBand {
        name: BandName::Delta,
        lo_hz: 1.5,
        hi_hz: 3.5,
    },
    FrequencyBand {
        name: BandName::Theta,
        lo_hz: 3.5,
        hi_hz: 7.5,
    },
    FrequencyBand {
        name: BandName::Alpha,
        lo_hz: 7.5,
        hi_hz: 13.5,
    },
    FrequencyBand {
        name: BandName::Beta1,
        lo_hz: 13.5,
        hi_hz: 19.5,
    },
    FrequencyBand {
        name: BandName::Beta2,
        lo_hz: 19.5,
        hi_hz: 25.0,
    },
];

/// Upper edge of the analysed spectrum.
pub const TOP_FREQUENCY_HZ: f64 = 25.0;

pub fn band(name: BandName) -> FrequencyBand {
    CANONICAL_BANDS[name.position()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandStatistic {
    LogPower,
    RelativePower,
    SpectralVariance,
    PeakFrequency,
    SpectralEntropy,
}

impl BandStatistic {
    pub const ALL: [BandStatistic; BAND_STATS] = [
        BandStatistic::LogPower,
        BandStatistic::RelativePower,
        BandStatistic::SpectralVariance,
        BandStatistic::PeakFrequency,
        BandStatistic::SpectralEntropy,
    ];

    fn as_str(self) -> &'static str {
        match self {
            BandStatistic::LogPower => "log_power",
            BandStatistic::RelativePower => "rel_power",
            BandStatistic::SpectralVariance => "spec_var",
            BandStatistic::PeakFrequency => "peak_freq",
            BandStatistic::SpectralEntropy => "entropy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalStatistic {
    TotalLogPower,
    Variance,
    Skewness,
    Kurtosis,
    ZeroCrossingRate,
    LineLength,
}

impl SignalStatistic {
    pub const ALL: [SignalStatistic; GLOBAL_STATS] = [
        SignalStatistic::TotalLogPower,
        SignalStatistic::Variance,
        SignalStatistic::Skewness,
        SignalStatistic::Kurtosis,
        SignalStatistic::ZeroCrossingRate,
        SignalStatistic::LineLength,
    ];

    fn as_str(self) -> &'static str {
        match self {
            SignalStatistic::TotalLogPower => "total_log_power",
            SignalStatistic::Variance => "variance",
            SignalStatistic::Skewness => "skewness",
            SignalStatistic::Kurtosis => "kurtosis",
            SignalStatistic::ZeroCrossingRate => "zero_cross_rate",
            SignalStatistic::LineLength => "line_length",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum FeatureKind {
    Band {
        band: BandName,
        statistic: BandStatistic,
    },
    Signal {
        statistic: SignalStatistic,
    },
    /// A column of non-spectral tabular data.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    /// 1-based channel number.
    pub channel: usize,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// Order and naming of the feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub sample_rate_hz: f64,
    pub segment_seconds: f64,
    pub features: Vec<FeatureDescriptor>,
}

impl FeatureLayout {
    pub fn standard(sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 2.0 * TOP_FREQUENCY_HZ) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must exceed {} Hz to cover the top band, got {sample_rate_hz}",
                2.0 * TOP_FREQUENCY_HZ
            )));
        }
        let window = sample_rate_hz * SEGMENT_SECONDS;
        if (window - window.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "sample rate {sample_rate_hz} Hz does not give a whole number of samples per segment"
            )));
        }

        let mut features = Vec::with_capacity(FEATURE_COUNT);
        for channel in 1..=CHANNELS {
            for band in BandName::ALL {
                for statistic in BandStatistic::ALL {
                    features.push(FeatureDescriptor {
                        name: format!("c{channel}_{band}_{}", statistic.as_str()),
                        channel,
                        kind: FeatureKind::Band { band, statistic },
                    });
                }
            }
        }
        for channel in 1..=CHANNELS {
            for statistic in SignalStatistic::ALL {
                features.push(FeatureDescriptor {
                    name: format!("c{channel}_{}", statistic.as_str()),
                    channel,
                    kind: FeatureKind::Signal { statistic },
                });
            }
        }
        debug_assert_eq!(features.len(), FEATURE_COUNT);

        Ok(Self {
            sample_rate_hz,
            segment_seconds: SEGMENT_SECONDS,
            features,
        })
    }

    /// Layout for `n` unnamed tabular features `f1..fn`, not tied to a
    /// signal.
    pub fn generic(n: usize) -> Self {
        Self {
            sample_rate_hz: 0.0,
            segment_seconds: 0.0,
            features: (1..=n)
                .map(|i| FeatureDescriptor {
                    name: format!("f{i}"),
                    channel: 0,
                    kind: FeatureKind::Plain,
                })
                .collect(),
        }
    }

    /// Checks that a deserialized layout is the standard or a generic one.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0.0 && *self == Self::generic(self.len()) {
            return Ok(());
        }
        let standard = Self::standard(self.sample_rate_hz)?;
        if *self != standard {
            return Err(Error::InvalidConfig(
                "feature layout differs from the standard 72-feature layout".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    /// True for layouts produced by [`FeatureLayout::standard`].
    pub fn is_spectral(&self) -> bool {
        self.sample_rate_hz > 0.0 && self.features.len() == FEATURE_COUNT
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn samples_per_segment(&self) -> usize {
        (self.sample_rate_hz * self.segment_seconds).round() as usize
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    /// Position of a band feature; `channel` is 1-based.
    pub fn band_index(&self, channel: usize, band: BandName, statistic: BandStatistic) -> usize {
        let stat = BandStatistic::ALL
            .iter()
            .position(|s| *s == statistic)
            .expect("statistic listed in ALL");
        (channel - 1) * PER_CHANNEL_BAND_FEATURES + band.position() * BAND_STATS + stat
    }

    /// Position of a whole-signal feature; `channel` is 1-based.
    pub fn signal_index(&self, channel: usize, statistic: SignalStatistic) -> usize {
        let stat = SignalStatistic::ALL
            .iter()
            .position(|s| *s == statistic)
            .expect("statistic listed in ALL");
        BAND_BLOCK + (channel - 1) * GLOBAL_STATS + stat
    }

    pub fn log_power_indices(&self, channel: usize) -> [usize; 6] {
        BandName::ALL.map(|b| self.band_index(channel, b, BandStatistic::LogPower))
    }

    /// Features shifted by BBA correction: the six log band powers and the
    /// total log power of each channel.
    pub fn bba_affected_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(CHANNELS * 7);
        for channel in 1..=CHANNELS {
            out.extend(self.log_power_indices(channel));
            out.push(self.signal_index(channel, SignalStatistic::TotalLogPower));
        }
        out.sort_unstable();
        out
    }
}

/// One 10-second window of a two-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub record_id: String,
    pub segment_index: usize,
    pub channels: [Vec<f64>; CHANNELS],
    /// Flagged segments are excluded from datasets.
    pub artifact: bool,
}

impl Segment {
    fn check(&self, layout: &FeatureLayout) -> Result<()> {
        let expected = layout.samples_per_segment();
        for (c, samples) in self.channels.iter().enumerate() {
            if samples.len() != expected {
                return Err(Error::InvalidSegment(format!(
                    "channel {} has {} samples, expected {expected}",
                    c + 1,
                    samples.len()
                )));
            }
            if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample {
                    channel: c + 1,
                    index,
                });
            }
        }
        Ok(())
    }
}

/// Cuts a record into consecutive non-overlapping windows. A trailing partial
/// window is dropped; a record shorter than one window yields no segments.
pub fn segment_record(
    record_id: &str,
    channels: [&[f64]; CHANNELS],
    layout: &FeatureLayout,
) -> Result<Vec<Segment>> {
    if layout.sample_rate_hz <= 2.0 * TOP_FREQUENCY_HZ {
        return Err(Error::InvalidConfig(format!(
            "sample rate {} Hz is too low",
            layout.sample_rate_hz
        )));
    }
    if channels[0].len() != channels[1].len() {
        return Err(Error::InvalidSegment(format!(
            "channel lengths differ ({} vs {})",
            channels[0].len(),
            channels[1].len()
        )));
    }
    let window = layout.samples_per_segment();
    let count = channels[0].len() / window;
    Ok((0..count)
        .map(|k| {
            let range = k * window..(k + 1) * window;
            Segment {
                record_id: record_id.to_string(),
                segment_index: k,
                channels: [
                    channels[0][range.clone()].to_vec(),
                    channels[1][range].to_vec(),
                ],
                artifact: false,
            }
        })
        .collect())
}

/// Single-sided power spectrum; `power[k]` sits at `frequencies[k] = k * fs / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn resolution_hz(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }

    fn band_bins(&self, band: &FrequencyBand) -> std::ops::Range<usize> {
        let start = self.frequencies.partition_point(|&f| f < band.lo_hz);
        let end = start + self.frequencies[start..].partition_point(|&f| band.contains(f));
        start..end
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Periodogram of the mean-removed signal, normalised so that the returned
/// powers sum to the population variance of `samples`.
pub fn power_spectrum(samples: &[f64], sample_rate_hz: f64) -> Result<Spectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::SignalTooShort(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buffer: Vec<Complex<f64>> = samples
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buffer);

    let half = n / 2;
    let scale = 1.0 / (n as f64 * n as f64);
    let mut power = Vec::with_capacity(half + 1);
    let mut frequencies = Vec::with_capacity(half + 1);
    for (k, x) in buffer.iter().take(half + 1).enumerate() {
        // interior bins fold in their negative-frequency mirror
        let fold = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else {
            2.0
        };
        power.push(fold * x.norm_sqr() * scale);
        frequencies.push(k as f64 * sample_rate_hz / n as f64);
    }
    Ok(Spectrum { frequencies, power })
}

/// Sum of the spectrum's powers inside `band`.
pub fn band_power(spectrum: &Spectrum, band: &FrequencyBand) -> f64 {
    spectrum.power[spectrum.band_bins(band)].iter().sum()
}

/// A segment's 72 feature values plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub record_id: String,
    pub segment_index: usize,
    /// 1-based class, `None` when unlabeled.
    pub label: Option<usize>,
    pub bba_corrected: bool,
}

impl FeatureVector {
    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }
}

struct BandSummary {
    power: f64,
    spectral_variance: f64,
    peak_hz: f64,
    entropy: f64,
}

fn summarize_band(spectrum: &Spectrum, band: &FrequencyBand) -> BandSummary {
    let bins = spectrum.band_bins(band);
    let powers = &spectrum.power[bins.clone()];
    let power: f64 = powers.iter().sum();
    let spectral_variance = if powers.len() > 1 {
        let mean = power / powers.len() as f64;
        powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / powers.len() as f64
    } else {
        0.0
    };
    if power <= 0.0 {
        return BandSummary {
            power: 0.0,
            spectral_variance,
            peak_hz: 0.0,
            entropy: 0.0,
        };
    }
    let mut peak = bins.start;
    for k in bins.clone() {
        if spectrum.power[k] > spectrum.power[peak] {
            peak = k;
        }
    }
    let entropy = powers
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let share = p / power;
            -share * share.ln()
        })
        .sum::<f64>()
        .max(0.0);
    BandSummary {
        power,
        spectral_variance,
        peak_hz: spectrum.frequencies[peak],
        entropy,
    }
}

struct Moments {
    variance: f64,
    skewness: f64,
    kurtosis: f64,
}

fn moments(samples: &[f64]) -> Moments {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in samples {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Moments {
            variance: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
        };
    }
    Moments {
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        // excess kurtosis
        kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

fn zero_crossing_rate(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let crossings = samples
        .windows(2)
        .filter(|w| (w[0] < 0.0) != (w[1] < 0.0))
        .count();
    crossings as f64 / (samples.len() - 1) as f64
}

fn line_length(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    samples.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (samples.len() - 1) as f64
}

/// Computes all 72 features of a segment, in layout order.
pub fn extract_features(segment: &Segment, layout: &FeatureLayout) -> Result<FeatureVector> {
    segment.check(layout)?;
    let mut values = vec![0.0; layout.len()];

    for (c, samples) in segment.channels.iter().enumerate() {
        let channel = c + 1;
        let spectrum = power_spectrum(samples, layout.sample_rate_hz)?;
        let summaries: Vec<BandSummary> = CANONICAL_BANDS
            .iter()
            .map(|b| summarize_band(&spectrum, b))
            .collect();
        let total: f64 = summaries.iter().map(|s| s.power).sum();

        for (band, summary) in BandName::ALL.iter().zip(&summaries) {
            let at = |stat| layout.band_index(channel, *band, stat);
            values[at(BandStatistic::LogPower)] = (summary.power + LOG_EPSILON).ln();
            values[at(BandStatistic::RelativePower)] = if total > 0.0 {
                summary.power / total
            } else {
                0.0
            };
            values[at(BandStatistic::SpectralVariance)] = summary.spectral_variance;
            values[at(BandStatistic::PeakFrequency)] = summary.peak_hz;
            values[at(BandStatistic::SpectralEntropy)] = summary.entropy;
        }

        let m = moments(samples);
        let at = |stat| layout.signal_index(channel, stat);
        values[at(SignalStatistic::TotalLogPower)] = (total + LOG_EPSILON).ln();
        values[at(SignalStatistic::Variance)] = m.variance;
        values[at(SignalStatistic::Skewness)] = m.skewness;
        values[at(SignalStatistic::Kurtosis)] = m.kurtosis;
        values[at(SignalStatistic::ZeroCrossingRate)] = zero_crossing_rate(samples);
        values[at(SignalStatistic::LineLength)] = line_length(samples);
    }

    Ok(FeatureVector {
        values,
        record_id: segment.record_id.clone(),
        segment_index: segment.segment_index,
        label: None,
        bba_corrected: false,
    })
}

fn check_len(fv: &FeatureVector, layout: &FeatureLayout) -> Result<()> {
    if fv.values.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            got: fv.values.len(),
        });
    }
    Ok(())
}

/// Per-channel BBA: the mean of the channel's six log band powers.
pub fn compute_bba(fv: &FeatureVector, layout: &FeatureLayout) -> Result<Vec<f64>> {
    if !layout.is_spectral() {
        return Err(Error::InvalidConfig(
            "BBA needs the standard spectral feature layout".into(),
        ));
    }
    check_len(fv, layout)?;
    Ok((1..=CHANNELS)
        .map(|channel| {
            let idx = layout.log_power_indices(channel);
            idx.iter().map(|&i| fv.values[i]).sum::<f64>() / idx.len() as f64
        })
        .collect())
}

/// Subtracts each channel's BBA from its log band powers and total log
/// power. Every other feature is left untouched.
pub fn bba_correct(fv: &FeatureVector, layout: &FeatureLayout) -> Result<FeatureVector> {
    if fv.bba_corrected {
        return Err(Error::AlreadyCorrected {
            record_id: fv.record_id.clone(),
            segment_index: fv.segment_index,
        });
    }
    let bba = compute_bba(fv, layout)?;
    let mut out = fv.clone();
    for channel in 1..=CHANNELS {
        let shift = bba[channel - 1];
        for i in layout.log_power_indices(channel) {
            out.values[i] -= shift;
        }
        out.values[layout.signal_index(channel, SignalStatistic::TotalLogPower)] -= shift;
    }
    out.bba_corrected = true;
    Ok(out)
}
