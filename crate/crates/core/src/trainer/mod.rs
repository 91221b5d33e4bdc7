//! Training: cross-entropy, inverted dropout, batched BPTT with
//! global-norm clipping, an Adam loop with early stopping, and a
//! finite-difference gradient-check harness.
//!
//! Determinism contract: a fixed `TrainConfig::seed` yields a bitwise
//! identical model at any worker count. Per-sample work may fan out to
//! threads, but gradients are reduced in sample order and every random
//! draw flows from one seeded stream on the coordinating thread.

mod bptt;
mod check;
mod fit;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numerics::{NumericsError, SeededRng};
use crate::seqmodels::{dropout_mask, SeqModelError};

pub use bptt::{bptt_gradients, mean_loss, AnyGrads};
pub use check::{grad_check, grad_check_faulted, GradCheckReport, ModelKind};
pub use fit::train;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("label {got} outside the model's class set of size {classes}")]
    BadLabel { got: usize, classes: usize },
    #[error("target kind does not match the model")]
    TargetMismatch,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite loss on sample {sample}")]
    NonFiniteLoss { sample: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] SeqModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Hyperparameters of one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_p: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Epochs without a validation improvement before training stops.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 50,
            dropout_p: 0.25,
            grad_clip_norm: 5.0,
            seed: 0,
            early_stop_patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        fn positive(name: &str, v: f64) -> Result<(), TrainError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(TrainError::BadConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        }
        positive("lr", self.lr)?;
        positive("epsilon", self.epsilon)?;
        positive("grad_clip_norm", self.grad_clip_norm)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::BadConfig(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TrainError::BadConfig(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be positive".into()));
        }
        Ok(())
    }

    /// Builds a config from parsed `key = value` pairs, starting from
    /// defaults. Keys that are not config fields are ignored, so one
    /// file can carry settings for several consumers.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self, TrainError> {
        fn set<T: std::str::FromStr>(
            map: &BTreeMap<String, String>,
            key: &str,
            slot: &mut T,
        ) -> Result<(), TrainError> {
            if let Some(raw) = map.get(key) {
                *slot = raw.parse().map_err(|_| {
                    TrainError::BadConfig(format!("{key}: cannot parse {raw:?}"))
                })?;
            }
            Ok(())
        }
        let mut cfg = Self::default();
        set(map, "lr", &mut cfg.lr)?;
        set(map, "beta1", &mut cfg.beta1)?;
        set(map, "beta2", &mut cfg.beta2)?;
        set(map, "epsilon", &mut cfg.epsilon)?;
        set(map, "batch_size", &mut cfg.batch_size)?;
        set(map, "epochs", &mut cfg.epochs)?;
        set(map, "dropout_p", &mut cfg.dropout_p)?;
        set(map, "grad_clip_norm", &mut cfg.grad_clip_norm)?;
        set(map, "seed", &mut cfg.seed)?;
        set(map, "early_stop_patience", &mut cfg.early_stop_patience)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a `key = value` config file. `#` starts a comment, blank
/// lines are skipped, whitespace around keys and values is trimmed,
/// and a repeated key keeps its last value.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, TrainError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || {
            TrainError::BadConfig(format!(
                "line {}: expected key = value, got {:?}",
                lineno + 1,
                raw.trim()
            ))
        };
        let (key, value) = line.split_once('=').ok_or_else(bad)?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(bad());
        }
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// Per-epoch training record. Losses are clamped at zero before they
/// are stored: a fully saturated model can otherwise log -1e-12 through
/// the probability clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were returned; 0 means no epoch improved on
    /// the initial model.
    pub best_epoch: usize,
    pub best_val: f64,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.seconds
            ));
        }
        out
    }
}

/// Negative log-likelihood of the labeled class: `-ln(pred[label] +
/// 1e-12)`, the same clamp sequence scoring uses, so losses and beam
/// scores stay on one scale.
pub fn cross_entropy(pred: &[f64], label: usize) -> Result<f64, TrainError> {
    if label >= pred.len() {
        return Err(TrainError::BadLabel {
            got: label,
            classes: pred.len(),
        });
    }
    Ok(-crate::seqmodels::log_prob(pred[label]))
}

/// Inverted dropout over one activation vector: during training each
/// entry is zeroed with probability `p` and survivors are scaled by
/// `1/(1-p)`, keeping the expectation unchanged; outside training the
/// input passes through bitwise untouched and `rng` is not consumed.
pub fn apply_dropout(
    activations: &[f64],
    p: f64,
    rng: &mut SeededRng,
    training: bool,
) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "dropout rate must lie in [0, 1)");
    if !training || p == 0.0 {
        return activations.to_vec();
    }
    let mask = dropout_mask(activations.len(), p, rng);
    activations.iter().zip(&mask).map(|(a, m)| a * m).collect()
}

/// Supervision for one sample, matching the model being trained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    /// Index into the classifier's password database.
    Class(usize),
    /// Symbol indices for the decoder, end marker included when the
    /// vocabulary has one.
    Symbols(Vec<usize>),
}

/// One training example: prepared input rows (already resampled and
/// normalized) and the supervision for them.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub xs: Vec<Vec<f64>>,
    pub target: Target,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_one_hot_is_zero() {
        let loss = cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap();
        assert!(loss.abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn cross_entropy_uniform_is_log_m() {
        let pred = vec![0.1; 10];
        let loss = cross_entropy(&pred, 7).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn cross_entropy_frozen_example() {
        let loss = cross_entropy(&[0.7, 0.3], 1).unwrap();
        assert!((loss - 1.2039728043259361).abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(TrainError::BadLabel { got: 2, classes: 2 })
        ));
    }

    #[test]
    fn dropout_p_zero_is_identity() {
        let xs = [0.3, -1.2, 4.0];
        let mut rng = SeededRng::new(1);
        assert_eq!(apply_dropout(&xs, 0.0, &mut rng, true), xs.to_vec());
    }

    #[test]
    fn dropout_inference_is_identity() {
        let xs = [0.3, -1.2, 4.0, 0.0];
        let mut rng = SeededRng::new(2);
        assert_eq!(apply_dropout(&xs, 0.7, &mut rng, false), xs.to_vec());
        // The stream was not consumed: the next draw matches a fresh rng.
        assert_eq!(rng.next_u64(), SeededRng::new(2).next_u64());
    }

    #[test]
    fn dropout_entries_are_zero_or_rescaled() {
        let xs: Vec<f64> = (0..64).map(|i| i as f64 / 7.0 - 4.0).collect();
        let p = 0.4;
        let mut rng = SeededRng::new(3);
        let out = apply_dropout(&xs, p, &mut rng, true);
        let keep = 1.0 / (1.0 - p);
        let mut dropped = 0;
        for (x, y) in xs.iter().zip(&out) {
            assert!(*y == 0.0 || *y == x * keep, "unexpected value {y} from {x}");
            if *y == 0.0 && *x != 0.0 {
                dropped += 1;
            }
        }
        assert!(dropped > 0, "no entry was dropped at p = 0.4");
    }

    #[test]
    fn dropout_preserves_expectation() {
        let xs = [2.0];
        let p = 0.3;
        let mut rng = SeededRng::new(77);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += apply_dropout(&xs, p, &mut rng, true)[0];
        }
        let mean = sum / n as f64;
        assert!(
            (mean / xs[0] - 1.0).abs() < 0.01,
            "empirical mean {mean} strays from {}",
            xs[0]
        );
    }

    #[test]
    fn parse_kv_handles_comments_and_whitespace() {
        let text = "# run settings\nlr = 0.01\n\n  batch_size=16  # trailing note\nlr = 0.05\n";
        let map = parse_kv(text).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["lr"], "0.05");
        assert_eq!(map["batch_size"], "16");
    }

    #[test]
    fn parse_kv_rejects_malformed_lines() {
        assert!(matches!(parse_kv("just_a_key\n"), Err(TrainError::BadConfig(_))));
        assert!(matches!(parse_kv("= 5\n"), Err(TrainError::BadConfig(_))));
        assert!(matches!(parse_kv("key =\n"), Err(TrainError::BadConfig(_))));
    }

    #[test]
    fn config_from_kv_overrides_defaults() {
        let map = parse_kv("lr = 0.05\nseed = 9\ndropout_p = 0\ncost.accel.10 = 2.0\n").unwrap();
        let cfg = TrainConfig::from_kv(&map).unwrap();
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dropout_p, 0.0);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn config_from_kv_rejects_bad_values() {
        let map = parse_kv("lr = fast\n").unwrap();
        assert!(matches!(
            TrainConfig::from_kv(&map),
            Err(TrainError::BadConfig(_))
        ));
        let map = parse_kv("dropout_p = 1.0\n").unwrap();
        assert!(matches!(
            TrainConfig::from_kv(&map),
            Err(TrainError::BadConfig(_))
        ));
    }

    #[test]
    fn config_validation_catches_each_field() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for breaker in [
            |c: &mut TrainConfig| c.lr = 0.0,
            |c: &mut TrainConfig| c.lr = f64::NAN,
            |c: &mut TrainConfig| c.beta1 = 1.0,
            |c: &mut TrainConfig| c.beta2 = -0.1,
            |c: &mut TrainConfig| c.epsilon = 0.0,
            |c: &mut TrainConfig| c.batch_size = 0,
            |c: &mut TrainConfig| c.epochs = 0,
            |c: &mut TrainConfig| c.dropout_p = 1.0,
            |c: &mut TrainConfig| c.grad_clip_norm = 0.0,
        ] {
            let mut cfg = TrainConfig::default();
            breaker(&mut cfg);
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn loss_report_csv_layout() {
        let report = LossReport {
            epochs: vec![
                EpochStats {
                    epoch: 1,
                    train_loss: 0.5,
                    val_loss: 0.625,
                    seconds: 0.25,
                },
                EpochStats {
                    epoch: 2,
                    train_loss: 0.25,
                    val_loss: 0.5,
                    seconds: 0.125,
                },
            ],
            best_epoch: 2,
            best_val: 0.5,
        };
        assert_eq!(
            report.to_csv(),
            "epoch,train_loss,val_loss,seconds\n1,0.5,0.625,0.25\n2,0.25,0.5,0.125\n"
        );
    }
}
