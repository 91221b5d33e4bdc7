//! Beam-search decoding and guess ranking.

use crate::passwords::{Password, PasswordKind};

use super::lstm::LstmState;
use super::seq2dgt::{EncodedSeq, Seq2DgtModel};
use super::seq2pwd::{seq2pwd_forward, Seq2PwdModel};
use super::{log_prob, SeqModelError, Vocab, K_MAX};

/// Digits strictly before the first EOS; everything after is discarded.
/// PIN vocabularies have no EOS, so the whole sequence converts.
pub fn eos_truncate(vocab: &Vocab, symbols: &[usize]) -> Vec<u8> {
    symbols
        .iter()
        .take_while(|&&s| Some(s) != vocab.eos())
        .map(|&s| vocab.digit_at(s).expect("symbol inside vocabulary"))
        .collect()
}

struct Beam {
    symbols: Vec<usize>,
    score: f64,
    state: LstmState,
    y_prev: usize,
}

/// Beam search emitting exactly `len` symbols per hypothesis, ranked by
/// total log-score (ties by symbol order). Exhaustive widths make this
/// a brute-force enumeration, which anchors its correctness tests.
pub fn decode_beam_fixed(
    model: &Seq2DgtModel,
    xs: &[Vec<f64>],
    width: usize,
    len: usize,
) -> Result<Vec<(Vec<usize>, f64)>, SeqModelError> {
    assert!(width >= 1, "beam width must be at least 1");
    let enc = model.encode_for_decode(xs)?;
    let mut beams = vec![Beam {
        symbols: Vec::new(),
        score: 0.0,
        state: enc.init.clone(),
        y_prev: model.vocab.sos_row(),
    }];
    for _ in 0..len {
        beams = expand(model, &enc, &beams, width, |_| true)?;
    }
    Ok(beams
        .into_iter()
        .map(|b| (b.symbols, b.score))
        .collect())
}

/// One expansion round: every beam steps once, every vocabulary symbol
/// admitted by `keep` spawns a child, and the best `width` children
/// survive, ordered by (score desc, symbols asc).
fn expand(
    model: &Seq2DgtModel,
    enc: &EncodedSeq,
    beams: &[Beam],
    width: usize,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<Beam>, SeqModelError> {
    let mut children: Vec<Beam> = Vec::with_capacity(beams.len() * model.vocab.size());
    for beam in beams {
        let (probs, next) = model.step_cached(enc, beam.y_prev, &beam.state)?;
        for (sym, p) in probs.iter().enumerate() {
            if !keep(sym) {
                continue;
            }
            let mut symbols = beam.symbols.clone();
            symbols.push(sym);
            children.push(Beam {
                symbols,
                score: beam.score + log_prob(*p),
                state: next.clone(),
                y_prev: sym,
            });
        }
    }
    children.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.symbols.cmp(&b.symbols))
    });
    children.truncate(width);
    Ok(children)
}

/// Beam-search guess list for one prepared input.
///
/// PIN: exactly 4 decode steps over digits. APL: hypotheses complete on
/// EOS; completed digit strings failing pattern validity are dropped;
/// the search stops once the guess cap is reached or the beams die out
/// (at most 9 digits plus EOS). Output is sorted by (log-score desc,
/// password asc), deduplicated, at most [`K_MAX`] long.
pub fn decode_beam(
    model: &Seq2DgtModel,
    xs: &[Vec<f64>],
    width: usize,
    kind: PasswordKind,
) -> Result<Vec<(Password, f64)>, SeqModelError> {
    assert!(width >= 1, "beam width must be at least 1");
    let mut out: Vec<(Password, f64)> = match kind {
        PasswordKind::Pin => decode_beam_fixed(model, xs, width, 4)?
            .into_iter()
            .filter_map(|(symbols, score)| {
                let digits = eos_truncate(&model.vocab, &symbols);
                Some((model.vocab.digits_to_password(kind, &digits)?, score))
            })
            .collect(),
        PasswordKind::Apl => {
            let eos = model.vocab.eos().ok_or(SeqModelError::BadPassword)?;
            let enc = model.encode_for_decode(xs)?;
            let mut beams = vec![Beam {
                symbols: Vec::new(),
                score: 0.0,
                state: enc.init.clone(),
                y_prev: model.vocab.sos_row(),
            }];
            let mut done: Vec<(Password, f64)> = Vec::new();
            // Longest pattern is 9 dots, so EOS must land by round 10.
            for _ in 0..10 {
                if beams.is_empty() || done.len() >= K_MAX {
                    break;
                }
                let full = beams
                    .first()
                    .map(|b| b.symbols.len() == 9)
                    .unwrap_or(false);
                let children =
                    expand(model, &enc, &beams, usize::MAX, |s| !full || s == eos)?;
                beams = Vec::with_capacity(width);
                for child in children {
                    if *child.symbols.last().unwrap() == eos {
                        let digits = eos_truncate(&model.vocab, &child.symbols);
                        if let Some(pwd) = model.vocab.digits_to_password(kind, &digits) {
                            done.push((pwd, child.score));
                        }
                    } else if beams.len() < width {
                        beams.push(child);
                    }
                }
            }
            done
        }
    };
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.dedup_by(|a, b| a.0 == b.0);
    out.truncate(K_MAX);
    Ok(out)
}

/// Either trained model, as loaded from a serialized file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Seq2Pwd(Box<Seq2PwdModel>),
    Seq2Dgt(Box<Seq2DgtModel>),
}

impl AnyModel {
    /// Dispatches on the `"kind"` field of a serialized model.
    pub fn from_json(text: &str) -> Result<Self, SeqModelError> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SeqModelError::BadFormat(e.to_string()))?;
        match probe.get("kind").and_then(|k| k.as_str()) {
            Some("seq2pwd") => Ok(AnyModel::Seq2Pwd(Box::new(Seq2PwdModel::from_json(text)?))),
            Some("seq2dgt") => Ok(AnyModel::Seq2Dgt(Box::new(Seq2DgtModel::from_json(text)?))),
            other => Err(SeqModelError::BadFormat(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            AnyModel::Seq2Pwd(m) => m.to_json(),
            AnyModel::Seq2Dgt(m) => m.to_json(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            AnyModel::Seq2Pwd(_) => "seq2pwd",
            AnyModel::Seq2Dgt(_) => "seq2dgt",
        }
    }

    pub fn norm(&self) -> &super::InputNorm {
        match self {
            AnyModel::Seq2Pwd(m) => &m.norm,
            AnyModel::Seq2Dgt(m) => &m.norm,
        }
    }
}

/// Beam width used when ranking guesses; comfortably above the guess
/// cap so APL-validity filtering cannot starve the list.
pub const BEAM_WIDTH: usize = 32;

/// Top-`k` password guesses for one prepared input, best first.
/// seq2pwd ranks its classes by probability (ties by database order);
/// seq2dgt runs beam search. Scores are log-probabilities.
pub fn rank_guesses(
    model: &AnyModel,
    xs: &[Vec<f64>],
    k: usize,
) -> Result<Vec<(Password, f64)>, SeqModelError> {
    if k > K_MAX {
        return Err(SeqModelError::TooManyGuesses { got: k, max: K_MAX });
    }
    let mut out = match model {
        AnyModel::Seq2Pwd(m) => {
            let probs = seq2pwd_forward(m, xs)?;
            let mut idx: Vec<usize> = (0..probs.len()).collect();
            idx.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b)));
            idx.into_iter()
                .map(|i| (m.classes[i].clone(), log_prob(probs[i])))
                .collect()
        }
        AnyModel::Seq2Dgt(m) => {
            let kind = if m.vocab.eos().is_some() {
                PasswordKind::Apl
            } else {
                PasswordKind::Pin
            };
            decode_beam(m, xs, BEAM_WIDTH.max(k), kind)?
        }
    };
    out.truncate(k);
    Ok(out)
}
