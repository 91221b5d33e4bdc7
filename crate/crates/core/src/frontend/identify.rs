//! Password-entry identification: a logistic regression that separates
//! password input from other brief interactions (app taps, scrolls),
//! both of which pass the frame detector. Features pool the 41-entry
//! statistics block over the whole extracted segment, once per sensor,
//! plus the segment duration in seconds.

use serde::{Deserialize, Serialize};

use super::{pooled_features, FrontendError, FEATURE_DIMS};
use crate::numerics::sigmoid;
use crate::simwatch::MotionSegment;

pub const IDENTIFY_DIMS: usize = 2 * FEATURE_DIMS + 1;

const TRAIN_ITERS: usize = 400;
const TRAIN_LR: f64 = 0.5;
const TRAIN_L2: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogisticIdentifier {
    pub w: Vec<f64>,
    pub b: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// The 83 identification features of an extracted segment.
pub fn segment_features(segment: &MotionSegment) -> Result<Vec<f64>, FrontendError> {
    if segment.samples.is_empty() {
        return Err(FrontendError::EmptyInput("identification segment"));
    }
    let accel: Vec<[f64; 3]> = segment.samples.iter().map(|s| s.accel).collect();
    let gyro: Vec<[f64; 3]> = segment.samples.iter().map(|s| s.gyro).collect();
    let mut out = Vec::with_capacity(IDENTIFY_DIMS);
    out.extend_from_slice(&pooled_features(&accel).0);
    out.extend_from_slice(&pooled_features(&gyro).0);
    out.push(segment.duration_s());
    Ok(out)
}

impl LogisticIdentifier {
    /// Full-batch gradient descent on the regularized logistic loss.
    /// Deterministic: no sampling is involved.
    pub fn train(xs: &[Vec<f64>], ys: &[bool]) -> Result<Self, FrontendError> {
        if xs.is_empty() {
            return Err(FrontendError::EmptyInput("identifier training set"));
        }
        if xs.len() != ys.len() {
            return Err(FrontendError::LengthMismatch {
                left: xs.len(),
                right: ys.len(),
            });
        }
        if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
            return Err(FrontendError::SingleClass);
        }
        let d = xs[0].len();
        if xs.iter().any(|x| x.len() != d) {
            return Err(FrontendError::LengthMismatch {
                left: d,
                right: xs.iter().map(|x| x.len()).find(|&l| l != d).unwrap(),
            });
        }
        let n = xs.len();
        let mut mean = vec![0.0; d];
        for x in xs {
            for i in 0..d {
                mean[i] += x[i];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut std = vec![0.0; d];
        for x in xs {
            for i in 0..d {
                let dl = x[i] - mean[i];
                std[i] += dl * dl;
            }
        }
        for s in &mut std {
            *s = (*s / n as f64).sqrt().max(1e-9);
        }
        let z: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| (0..d).map(|i| (x[i] - mean[i]) / std[i]).collect())
            .collect();

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        for _ in 0..TRAIN_ITERS {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (zi, &y) in z.iter().zip(ys) {
                let p = sigmoid(zi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
                let err = p - if y { 1.0 } else { 0.0 };
                for i in 0..d {
                    gw[i] += err * zi[i];
                }
                gb += err;
            }
            for i in 0..d {
                w[i] -= TRAIN_LR * (gw[i] / n as f64 + TRAIN_L2 * w[i]);
            }
            b -= TRAIN_LR * gb / n as f64;
        }
        Ok(LogisticIdentifier { w, b, mean, std })
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, FrontendError> {
        if self.w.is_empty() {
            return Err(FrontendError::UntrainedModel);
        }
        if features.len() != self.w.len() {
            return Err(FrontendError::LengthMismatch {
                left: self.w.len(),
                right: features.len(),
            });
        }
        let mut s = self.b;
        for i in 0..features.len() {
            s += self.w[i] * (features[i] - self.mean[i]) / self.std[i];
        }
        Ok(sigmoid(s))
    }
}

/// Score an extracted segment; positive means password entry. The
/// decision threshold is 0.5.
pub fn identify_sequence(
    model: &LogisticIdentifier,
    segment: &MotionSegment,
) -> Result<(bool, f64), FrontendError> {
    let f = segment_features(segment)?;
    let p = model.score(&f)?;
    debug_assert!((0.0..=1.0).contains(&p));
    Ok((p >= 0.5, p))
}
