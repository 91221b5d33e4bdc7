//! Sensing front-end: sliding-window framing, 41-dimensional feature
//! extraction, linear-SVM input detection, label smoothing, segment
//! extraction, password-vs-other identification, and the adaptive
//! three-mode sensing loop with energy accounting.

mod adaptive;
mod identify;
mod smooth;
mod svm;

pub use adaptive::{
    adaptive_run, frame_truth_labels, monitor_stream, session_spans, train_frontend, AdaptiveConfig,
    AdaptiveOutcome, CostTable, EnergyLedger, ExtractedCandidate, MonitoringBurst, SensingMode,
    EXTRACT_RATE_HZ, FRAME_LEN, FRAME_LEN_SAMPLES_200, FRAME_STRIDE, FRAME_STRIDE_SAMPLES_200,
    MIN_RUN_FRAMES, MONITOR_RATE_HZ, PASSIVE_RATE_HZ, POSITIVE_OVERLAP_FRAC, STOP_AFTER_NEGATIVES,
};
pub use identify::{identify_sequence, segment_features, LogisticIdentifier, IDENTIFY_DIMS};
pub use smooth::{longest_positive_segment, sequence_similarity, smooth, Smoother};
pub use svm::{svm_predict, svm_train, LinearSvm, SVM_EPOCHS, SVM_LAMBDA};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("training data contains only one class")]
    SingleClass,
    #[error("model has no trained weights")]
    UntrainedModel,
    #[error("expected a {expected} Hz segment, got {got} Hz")]
    WrongRate { expected: u32, got: u32 },
    #[error("no energy cost entry for {sensor} at {rate} Hz")]
    MissingCost { sensor: &'static str, rate: u32 },
    #[error("invalid smoother: {0}")]
    BadSmoother(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

pub const FEATURE_DIMS: usize = 41;

/// One detection window over an accelerometer stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Index of the first sample in the source stream.
    pub start: usize,
    pub data: Vec<[f64; 3]>,
}

/// Windows of length `t` every `s` samples: starts 0, s, 2s, ...,
/// while a full window fits. Count is floor((n-t)/s)+1 for n >= t,
/// otherwise zero; adjacent frames overlap by exactly t-s samples.
pub fn frame_stream(samples: &[[f64; 3]], t: usize, s: usize) -> Vec<Frame> {
    assert!(t >= s && s >= 1, "need t >= s >= 1, got t={t} s={s}");
    let n = samples.len();
    if n < t {
        return Vec::new();
    }
    (0..=(n - t) / s)
        .map(|k| Frame {
            start: k * s,
            data: samples[k * s..k * s + t].to_vec(),
        })
        .collect()
}

/// The fixed 41-entry detection feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIMS]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Linear-interpolation quantile of a sorted slice (the common "type 7"
/// definition).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-axis statistics block: mean, variance, skewness, kurtosis, min,
/// max, range, median, RMS, interquartile range, mean absolute
/// deviation, mean-crossing count. Skewness and excess kurtosis are
/// defined as 0 when the variance degenerates below 1e-12.
fn axis_stats(values: &[f64]) -> [f64; 12] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 < 1e-12 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mad = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let crossings = values
        .windows(2)
        .filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0)
        .count() as f64;
    [
        mean, m2, skew, kurt, min, max, max - min, median, rms, iqr, mad, crossings,
    ]
}

/// The 41 features over a block of 3-axis rows: the 12-statistic block
/// per axis (36), then mean l1/l2/l-inf norms of the per-sample vectors,
/// the Frobenius norm of the whole block, and the signal magnitude area
/// (summed l1 norm).
pub fn pooled_features(rows: &[[f64; 3]]) -> FeatureVector {
    assert!(!rows.is_empty(), "feature block must be non-empty");
    let mut out = [0.0f64; FEATURE_DIMS];
    let mut axis = vec![0.0f64; rows.len()];
    for ax in 0..3 {
        for (i, r) in rows.iter().enumerate() {
            axis[i] = r[ax];
        }
        let stats = axis_stats(&axis);
        out[ax * 12..(ax + 1) * 12].copy_from_slice(&stats);
    }
    let n = rows.len() as f64;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut linf = 0.0;
    let mut frob = 0.0;
    for r in rows {
        let a = [r[0].abs(), r[1].abs(), r[2].abs()];
        l1 += a[0] + a[1] + a[2];
        l2 += (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        linf += a[0].max(a[1]).max(a[2]);
        frob += r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    }
    out[36] = l1 / n;
    out[37] = l2 / n;
    out[38] = linf / n;
    out[39] = frob.sqrt();
    out[40] = l1;
    debug_assert!(out.iter().all(|v| v.is_finite()));
    FeatureVector(out)
}

pub fn extract_features(frame: &Frame) -> FeatureVector {
    pooled_features(&frame.data)
}
