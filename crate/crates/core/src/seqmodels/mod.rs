//! Recurrent sequence models that map extracted motion segments to
//! password guesses: a bidirectional LSTM classifier over a finite
//! password database (seq2pwd) and an attention encoder-decoder that
//! emits passwords digit by digit (seq2dgt).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::SeededRng;
use crate::passwords::{AplPattern, Password, PasswordKind, Pin};
use crate::simwatch::{resample, MotionSegment, SimError};

mod decode;
mod lstm;
mod seq2dgt;
mod seq2pwd;

pub use decode::{
    decode_beam, decode_beam_fixed, eos_truncate, rank_guesses, AnyModel, BEAM_WIDTH,
};
pub use lstm::{
    encode_bidirectional, lstm_forward, lstm_step, BiTrace, LstmParams, LstmState, LstmTrace,
};
pub use seq2dgt::{
    attention, score_sequence, seq2dgt_step, Seq2DgtGrads, Seq2DgtHyper, Seq2DgtModel,
    Seq2DgtTrace,
};
pub use seq2pwd::{seq2pwd_forward, Seq2PwdGrads, Seq2PwdHyper, Seq2PwdModel, Seq2PwdTrace};

/// Sampling rate every model input is resampled to before encoding.
pub const MODEL_RATE_HZ: u32 = 100;
/// Inputs longer than this many steps are truncated from the tail.
pub const T_MAX: usize = 512;
/// Six-axis motion rows: accelerometer xyz then gyroscope xyz.
pub const INPUT_DIMS: usize = 6;
/// Ranked guess lists never exceed this many entries.
pub const K_MAX: usize = 20;

/// Serialized models carry this version; loading any other fails.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SeqModelError {
    #[error("{op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("symbol index {got} outside vocabulary of size {vocab}")]
    BadSymbol { got: usize, vocab: usize },
    #[error("password does not fit this model's vocabulary")]
    BadPassword,
    #[error("duplicate class in password database")]
    DuplicateClass,
    #[error("guess count {got} exceeds the cap of {max}")]
    TooManyGuesses { got: usize, max: usize },
    #[error("unsupported input rate {0} Hz")]
    UnsupportedRate(u32),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad model file: {0}")]
    BadFormat(String),
}

impl From<SimError> for SeqModelError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnsupportedRate(r) => SeqModelError::UnsupportedRate(r),
            other => SeqModelError::BadFormat(other.to_string()),
        }
    }
}

/// Clamped natural log shared by sequence scoring, beam search, and the
/// cross-entropy loss, so rankings and losses agree on the same scale.
#[inline]
pub fn log_prob(p: f64) -> f64 {
    (p + 1e-12).ln()
}

/// Inverted-dropout mask: each slot is 0 with probability `p`, else
/// 1/(1-p), so masked activations keep their expectation.
pub(crate) fn dropout_mask(n: usize, p: f64, rng: &mut SeededRng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
        .collect()
}

/// Dropout request threaded into a training-mode forward pass: the rate
/// and the mask source. Inference passes `None` and is mask-free.
pub type DropoutCtx<'a> = Option<(f64, &'a mut SeededRng)>;

fn mul_mask(v: &mut [f64], mask: &[f64]) {
    for (x, m) in v.iter_mut().zip(mask) {
        *x *= m;
    }
}

/// Per-channel standardization statistics stored inside each model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Identity transform over `dims` channels.
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Fits mean and population standard deviation per channel over all
    /// rows of all sequences. Standard deviations are floored at 1e-9.
    pub fn fit(sequences: &[Vec<Vec<f64>>]) -> Result<Self, SeqModelError> {
        let dims = sequences
            .iter()
            .flat_map(|s| s.first())
            .map(|r| r.len())
            .next()
            .ok_or(SeqModelError::EmptyInput)?;
        let mut mean = vec![0.0; dims];
        let mut n = 0usize;
        for seq in sequences {
            for row in seq {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
                n += 1;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dims];
        for seq in sequences {
            for row in seq {
                for ((v, m), x) in var.iter_mut().zip(&mean).zip(row) {
                    let d = x - m;
                    *v += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(1e-9))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    fn validate(&self, dims: usize) -> Result<(), SeqModelError> {
        if self.mean.len() != dims || self.std.len() != dims {
            return Err(SeqModelError::ShapeMismatch {
                op: "InputNorm",
                expected: format!("{dims} channels"),
                got: format!("{}/{}", self.mean.len(), self.std.len()),
            });
        }
        if self.std.iter().any(|s| *s <= 0.0) {
            return Err(SeqModelError::NonFinite("InputNorm::std"));
        }
        Ok(())
    }
}

/// Six-axis rows of a segment without resampling or normalization.
pub fn segment_rows(seg: &MotionSegment) -> Vec<Vec<f64>> {
    seg.samples
        .iter()
        .map(|s| {
            vec![
                s.accel[0], s.accel[1], s.accel[2], s.gyro[0], s.gyro[1], s.gyro[2],
            ]
        })
        .collect()
}

/// Converts an extracted segment to model input: resample to
/// [`MODEL_RATE_HZ`], truncate to [`T_MAX`] steps, standardize with the
/// model's stored statistics.
pub fn prepare_input(
    seg: &MotionSegment,
    norm: &InputNorm,
) -> Result<Vec<Vec<f64>>, SeqModelError> {
    if seg.is_empty() {
        return Err(SeqModelError::EmptyInput);
    }
    norm.validate(INPUT_DIMS)?;
    let at_rate = resample(seg, MODEL_RATE_HZ)?;
    let mut rows = segment_rows(&at_rate);
    rows.truncate(T_MAX);
    for row in &mut rows {
        norm.apply_row(row);
    }
    Ok(rows)
}

/// Output alphabet of the digit decoder. APL uses dots 1..=9 plus a
/// terminal EOS; PIN uses digits 0..=9 with no EOS (fixed length 4).
/// The start-of-sequence token is an extra embedding row, never emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    digits: Vec<u8>,
    has_eos: bool,
}

impl Vocab {
    pub fn pin() -> Self {
        Self {
            digits: (0..=9).collect(),
            has_eos: false,
        }
    }

    pub fn apl() -> Self {
        Self {
            digits: (1..=9).collect(),
            has_eos: true,
        }
    }

    /// Reduced alphabet for oracle-scale tests.
    pub fn custom(digits: Vec<u8>, has_eos: bool) -> Self {
        Self { digits, has_eos }
    }

    /// Number of emittable symbols: the digits, plus EOS when present.
    pub fn size(&self) -> usize {
        self.digits.len() + usize::from(self.has_eos)
    }

    /// Index of the EOS symbol; always the last slot when present.
    pub fn eos(&self) -> Option<usize> {
        self.has_eos.then_some(self.digits.len())
    }

    /// Embedding row used as the decoder's start-of-sequence input.
    pub fn sos_row(&self) -> usize {
        self.size()
    }

    pub fn digit_at(&self, index: usize) -> Option<u8> {
        self.digits.get(index).copied()
    }

    pub fn index_of_digit(&self, digit: u8) -> Option<usize> {
        self.digits.iter().position(|d| *d == digit)
    }

    /// Teacher-forcing target: symbol indices of a password, with EOS
    /// appended when the vocabulary carries one.
    pub fn password_to_symbols(&self, pwd: &Password) -> Result<Vec<usize>, SeqModelError> {
        let mut out = Vec::new();
        for d in pwd.symbols() {
            out.push(
                self.index_of_digit(d)
                    .ok_or(SeqModelError::BadPassword)?,
            );
        }
        if let Some(eos) = self.eos() {
            out.push(eos);
        }
        Ok(out)
    }

    /// Human-readable symbol names, in index order.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.digits.iter().map(|d| d.to_string()).collect();
        if self.has_eos {
            out.push("EOS".to_string());
        }
        out
    }

    pub fn from_names(names: &[String]) -> Result<Self, SeqModelError> {
        let mut digits = Vec::new();
        let mut has_eos = false;
        for (i, name) in names.iter().enumerate() {
            if name == "EOS" {
                if i != names.len() - 1 {
                    return Err(SeqModelError::BadFormat(
                        "EOS must be the final vocabulary symbol".into(),
                    ));
                }
                has_eos = true;
            } else {
                let d: u8 = name
                    .parse()
                    .map_err(|_| SeqModelError::BadFormat(format!("bad vocab symbol {name:?}")))?;
                digits.push(d);
            }
        }
        if digits.is_empty() {
            return Err(SeqModelError::BadFormat("empty vocabulary".into()));
        }
        Ok(Self { digits, has_eos })
    }

    /// Builds the password a completed digit sequence denotes, or None
    /// when it is not well formed for `kind`.
    pub fn digits_to_password(&self, kind: PasswordKind, digits: &[u8]) -> Option<Password> {
        match kind {
            PasswordKind::Pin => {
                let arr: [u8; 4] = digits.try_into().ok()?;
                Pin::new(arr).ok().map(Password::Pin)
            }
            PasswordKind::Apl => AplPattern::new(digits.to_vec()).ok().map(Password::Apl),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::simwatch::MotionSegment;

    #[test]
    fn norm_fit_standardizes_to_zero_mean_unit_var() {
        let mut rng = SeededRng::new(5);
        let seqs: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|_| {
                (0..50)
                    .map(|_| (0..3).map(|c| rng.normal() * (c + 1) as f64 + 2.0).collect())
                    .collect()
            })
            .collect();
        let norm = InputNorm::fit(&seqs).unwrap();
        let mut mean = [0.0; 3];
        let mut var = [0.0; 3];
        let mut n = 0.0;
        for seq in &seqs {
            for row in seq {
                let mut r = row.clone();
                norm.apply_row(&mut r);
                for c in 0..3 {
                    mean[c] += r[c];
                    var[c] += r[c] * r[c];
                }
                n += 1.0;
            }
        }
        for c in 0..3 {
            assert!((mean[c] / n).abs() < 1e-12);
            assert!((var[c] / n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn prepare_input_downsamples_and_truncates() {
        let mut seg = MotionSegment::with_rate(200);
        for i in 0..(T_MAX * 2 * 2 + 100) {
            let v = i as f64;
            seg.push([v, 0.0, 9.81], [0.0, v, 0.0]);
        }
        let rows = prepare_input(&seg, &InputNorm::identity(INPUT_DIMS)).unwrap();
        assert_eq!(rows.len(), T_MAX);
        assert_eq!(rows[0].len(), INPUT_DIMS);
    }

    #[test]
    fn prepare_input_rejects_empty() {
        let seg = MotionSegment::with_rate(200);
        assert!(matches!(
            prepare_input(&seg, &InputNorm::identity(INPUT_DIMS)),
            Err(SeqModelError::EmptyInput)
        ));
    }

    #[test]
    fn vocab_round_trips_through_names() {
        for v in [Vocab::pin(), Vocab::apl(), Vocab::custom(vec![1, 2, 3], true)] {
            assert_eq!(Vocab::from_names(&v.names()).unwrap(), v);
        }
        assert_eq!(Vocab::pin().size(), 10);
        assert_eq!(Vocab::apl().size(), 10);
        assert_eq!(Vocab::apl().eos(), Some(9));
        assert_eq!(Vocab::pin().eos(), None);
    }

    #[test]
    fn apl_symbols_append_eos() {
        let v = Vocab::apl();
        let pwd = Password::Apl(crate::passwords::AplPattern::new(vec![1, 2, 3, 6]).unwrap());
        // Dots 1..=9 sit at indices 0..=8, EOS at 9.
        assert_eq!(v.password_to_symbols(&pwd).unwrap(), vec![0, 1, 2, 5, 9]);
        let p = Vocab::pin();
        let pwd = Password::Pin(crate::passwords::Pin::new([0, 7, 7, 9]).unwrap());
        assert_eq!(p.password_to_symbols(&pwd).unwrap(), vec![0, 7, 7, 9]);
    }
}
