//! Frame-level audio analysis and fixed-size prosodic feature vectors.
//!
//! [`analyze`] turns a waveform into per-frame F0 and RMS energy;
//! [`extract_segment_features`] summarizes the frames of one segment into a
//! [`FEATURE_DIM`]-dimensional vector. Features computed elsewhere can be
//! imported with [`load_external_features`]; the ranker does not care about the
//! dimension.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FRAME_S: f64 = 0.040;
pub const DEFAULT_HOP_S: f64 = 0.010;

const MIN_F0_HZ: f64 = 60.0;
const MAX_F0_HZ: f64 = 500.0;
const VOICING_THRESHOLD: f64 = 0.3;
/// First autocorrelation peak within this fraction of the global maximum wins,
/// which keeps sub-harmonic lags from being picked.
const PEAK_FRACTION: f64 = 0.9;
const ENERGY_FLOOR: f64 = 1e-8;
/// Boundary slack when testing frame centres against segment bounds.
const TIME_EPS: f64 = 1e-9;

/// Number of surrogate prosodic features per segment.
pub const FEATURE_DIM: usize = 24;

/// Slot names of the built-in feature vector, in order.
///
/// `f0_*` slots are over voiced frames in log-Hz and are 0 when the segment has
/// no voiced frame. `loge_*` slots are over `ln(max(energy, 1e-8))`. Slopes are
/// least-squares slopes per second, `*_iqr` is the 75th minus 25th percentile,
/// `*_delta` the mean absolute frame-to-frame change, `energy_peak_pos` the
/// relative position of the loudest frame, and `loge_tilt` the mean log-energy
/// of the second half minus that of the first half.
pub const FEATURE_LABELS: [&str; FEATURE_DIM] = [
    "f0_mean",
    "f0_std",
    "f0_min",
    "f0_max",
    "f0_slope",
    "voiced_ratio",
    "loge_mean",
    "loge_std",
    "loge_min",
    "loge_max",
    "loge_slope",
    "duration_s",
    "f0_range",
    "f0_median",
    "f0_iqr",
    "loge_range",
    "loge_median",
    "loge_iqr",
    "energy_mean",
    "energy_std",
    "f0_delta",
    "loge_delta",
    "energy_peak_pos",
    "loge_tilt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Per-frame F0 (Hz, 0 = unvoiced) and linear RMS energy.
///
/// Frame `i` spans `[i * hop_s, i * hop_s + frame_s)`; its centre is used to
/// decide segment membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrack {
    pub f0: Vec<f64>,
    pub energy: Vec<f64>,
    pub hop_s: f64,
    pub frame_s: f64,
}

impl FrameTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn frame_start(&self, i: usize) -> f64 {
        i as f64 * self.hop_s
    }

    pub fn frame_center(&self, i: usize) -> f64 {
        self.frame_start(i) + 0.5 * self.frame_s
    }

    /// Indices of the frames belonging to `[start_s, end_s)`.
    ///
    /// Frames whose centre falls inside the interval are taken. A segment
    /// shorter than the hop may contain no centre; it then gets the single
    /// overlapping frame whose centre is closest to the segment midpoint.
    pub fn frames_in(&self, start_s: f64, end_s: f64) -> std::ops::Range<usize> {
        let n = self.len();
        let first = (0..n)
            .find(|&i| self.frame_center(i) >= start_s - TIME_EPS)
            .unwrap_or(n);
        let mut last = first;
        while last < n && self.frame_center(last) < end_s - TIME_EPS {
            last += 1;
        }
        if last > first {
            return first..last;
        }
        let mid = 0.5 * (start_s + end_s);
        let overlapping = (0..n).filter(|&i| {
            let a = self.frame_start(i);
            a < end_s && a + self.frame_s > start_s
        });
        match overlapping.min_by(|&a, &b| {
            let da = (self.frame_center(a) - mid).abs();
            let db = (self.frame_center(b) - mid).abs();
            da.total_cmp(&db)
        }) {
            Some(i) => i..i + 1,
            None => 0..0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub values: Vec<f64>,
    pub dim_labels: Vec<String>,
}

impl SegmentFeatures {
    pub fn new(values: Vec<f64>, dim_labels: Vec<String>) -> Result<Self> {
        crate::error::check_dim(dim_labels.len(), values.len())?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite feature value {bad}")));
        }
        Ok(Self { values, dim_labels })
    }

    /// Unlabelled vector; slots are named `f000`, `f001`, ...
    pub fn unlabeled(values: Vec<f64>) -> Result<Self> {
        let labels = (0..values.len()).map(|i| format!("f{i:03}")).collect();
        Self::new(values, labels)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Default labels for the built-in feature set.
pub fn feature_labels() -> Vec<String> {
    FEATURE_LABELS.iter().map(|s| s.to_string()).collect()
}

/// Pitch and energy per frame.
pub fn analyze(clip: &AudioClip, frame_s: f64, hop_s: f64) -> Result<FrameTrack> {
    if clip.sample_rate == 0 {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }
    if clip.samples.is_empty() {
        return Err(Error::InvalidInput("empty clip".into()));
    }
    if !(hop_s > 0.0 && hop_s <= frame_s) {
        return Err(Error::InvalidInput(format!(
            "need 0 < hop ({hop_s}) <= frame ({frame_s})"
        )));
    }
    let sr = clip.sample_rate as f64;
    let frame_len = (frame_s * sr).round() as usize;
    let hop = ((hop_s * sr).round() as usize).max(1);
    if frame_len == 0 || frame_len > clip.samples.len() {
        return Err(Error::InvalidInput(format!(
            "frame of {frame_len} samples does not fit a clip of {}",
            clip.samples.len()
        )));
    }
    let n_frames = 1 + (clip.samples.len() - frame_len) / hop;
    let mut f0 = Vec::with_capacity(n_frames);
    let mut energy = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let frame = &clip.samples[i * hop..i * hop + frame_len];
        energy.push(rms(frame));
        f0.push(frame_pitch(frame, sr));
    }
    Ok(FrameTrack {
        f0,
        energy,
        hop_s: hop as f64 / sr,
        frame_s: frame_len as f64 / sr,
    })
}

fn rms(frame: &[f64]) -> f64 {
    (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt()
}

/// Normalized autocorrelation pitch with parabolic peak refinement.
fn frame_pitch(frame: &[f64], sr: f64) -> f64 {
    let n = frame.len();
    let mean = frame.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();

    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for v in &x {
        cum.push(cum.last().unwrap() + v * v);
    }
    if cum[n] < 1e-12 {
        return 0.0;
    }

    let min_lag = ((sr / MAX_F0_HZ).floor() as usize).max(2);
    let max_lag = ((sr / MIN_F0_HZ).ceil() as usize).min(n / 2);
    if max_lag < min_lag + 2 {
        return 0.0;
    }
    let corr = |lag: usize| -> f64 {
        let e0 = cum[n - lag];
        let e1 = cum[n] - cum[lag];
        let denom = (e0 * e1).sqrt();
        if denom < 1e-12 {
            return 0.0;
        }
        let dot: f64 = x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        dot / denom
    };
    // r[k] holds lag min_lag - 1 + k
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(corr).collect();
    let at = |lag: usize| r[lag + 1 - min_lag];

    let r_max = (min_lag..=max_lag).map(at).fold(f64::NEG_INFINITY, f64::max);
    if r_max < VOICING_THRESHOLD {
        return 0.0;
    }
    let Some(lag) = (min_lag..=max_lag).find(|&l| {
        let v = at(l);
        v >= PEAK_FRACTION * r_max && v >= at(l - 1) && v >= at(l + 1)
    }) else {
        return 0.0;
    };
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f0 = sr / (lag as f64 + shift);
    if (MIN_F0_HZ..=MAX_F0_HZ).contains(&f0) {
        f0
    } else {
        0.0
    }
}

/// Summarize the frames of `[start_s, end_s)` into the built-in feature vector.
pub fn extract_segment_features(
    track: &FrameTrack,
    start_s: f64,
    end_s: f64,
) -> Result<SegmentFeatures> {
    if !(start_s >= 0.0 && start_s < end_s) {
        return Err(Error::InvalidInput(format!(
            "bad segment bounds [{start_s}, {end_s})"
        )));
    }
    let range = track.frames_in(start_s, end_s);
    if range.is_empty() {
        return Err(Error::EmptySegment(format!("[{start_s:.3}, {end_s:.3})")));
    }
    let hop = track.hop_s;
    let frames: Vec<usize> = range.collect();
    let n = frames.len();

    // (relative time, value) pairs
    let voiced: Vec<(f64, f64)> = frames
        .iter()
        .enumerate()
        .filter(|(_, &i)| track.f0[i] > 0.0)
        .map(|(k, &i)| (k as f64 * hop, track.f0[i].ln()))
        .collect();
    let loge: Vec<(f64, f64)> = frames
        .iter()
        .enumerate()
        .map(|(k, &i)| (k as f64 * hop, track.energy[i].max(ENERGY_FLOOR).ln()))
        .collect();
    let energy: Vec<f64> = frames.iter().map(|&i| track.energy[i]).collect();

    let f0 = Summary::of(&voiced);
    let le = Summary::of(&loge);
    let e_lin = Summary::of(&energy.iter().map(|&e| (0.0, e)).collect::<Vec<_>>());

    let peak_pos = if n > 1 {
        let (argmax, _) = energy
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &e)| if e > acc.1 { (k, e) } else { acc });
        argmax as f64 / (n - 1) as f64
    } else {
        0.0
    };
    let tilt = if n > 1 {
        let half = n / 2;
        let first = loge[..half].iter().map(|p| p.1).sum::<f64>() / half as f64;
        let second = loge[half..].iter().map(|p| p.1).sum::<f64>() / (n - half) as f64;
        second - first
    } else {
        0.0
    };

    let values = vec![
        f0.mean,
        f0.std,
        f0.min,
        f0.max,
        f0.slope,
        voiced.len() as f64 / n as f64,
        le.mean,
        le.std,
        le.min,
        le.max,
        le.slope,
        end_s - start_s,
        f0.max - f0.min,
        f0.median,
        f0.iqr,
        le.max - le.min,
        le.median,
        le.iqr,
        e_lin.mean,
        e_lin.std,
        f0.delta,
        le.delta,
        peak_pos,
        tilt,
    ];
    debug_assert_eq!(values.len(), FEATURE_DIM);
    SegmentFeatures::new(values, feature_labels())
}

/// Descriptive statistics of a (time, value) series; all zero when empty.
#[derive(Debug, Default)]
struct Summary {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    slope: f64,
    median: f64,
    iqr: f64,
    delta: f64,
}

impl Summary {
    fn of(points: &[(f64, f64)]) -> Self {
        let n = points.len();
        if n == 0 {
            return Self::default();
        }
        let nf = n as f64;
        let mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
        let var = points.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / nf;
        let mut sorted: Vec<f64> = points.iter().map(|p| p.1).collect();
        sorted.sort_by(f64::total_cmp);
        let t_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
        let sxx: f64 = points.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - t_mean) * (p.1 - mean)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let delta = if n > 1 {
            points.windows(2).map(|w| (w[1].1 - w[0].1).abs()).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[n - 1],
            slope,
            median: quantile(&sorted, 0.5),
            iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            delta,
        }
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Read a feature CSV: header `segment_id,f000,...`, one row per segment.
pub fn load_external_features(path: impl AsRef<Path>) -> Result<BTreeMap<String, SegmentFeatures>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_external_features(file)
}

pub fn parse_external_features<R: std::io::Read>(reader: R) -> Result<BTreeMap<String, SegmentFeatures>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(Error::format)?.clone();
    if headers.is_empty() || &headers[0] != "segment_id" {
        return Err(Error::format("first column must be `segment_id`"));
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut out = BTreeMap::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::format)?;
        if record.len() != headers.len() {
            return Err(Error::format(format!(
                "row {}: {} fields, header has {}",
                row_no + 1,
                record.len(),
                headers.len()
            )));
        }
        let id = record[0].to_string();
        let mut values = Vec::with_capacity(labels.len());
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(format!("row {}: cannot parse {field:?}", row_no + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::format(format!("row {}: non-finite value", row_no + 1)));
            }
            values.push(v);
        }
        let feats = SegmentFeatures::new(values, labels.clone())?;
        if out.insert(id.clone(), feats).is_some() {
            return Err(Error::format(format!("duplicate segment id {id:?}")));
        }
    }
    Ok(out)
}

/// Read a 16-bit PCM mono WAV, scaling samples by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported WAV encoding".into()),
        other => Error::format(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!("{} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} {}-bit samples",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(Error::format)?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Write a 16-bit PCM mono WAV. Samples are clamped to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(other),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &clip.samples {
        writer.write_sample(quantize_sample(s)).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

pub fn quantize_sample(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
