//! Whole-password classifier: bidirectional LSTM encoder, softmax head
//! over a finite password database.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::numerics::{softmax, Matrix2, SeededRng};
use crate::passwords::Password;

use super::lstm::{encode_backward, encode_bidirectional_trace, BiTrace, LstmParams};
use super::{dropout_mask, log_prob, mul_mask, DropoutCtx, InputNorm, SeqModelError, MODEL_FORMAT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2PwdHyper {
    pub input_dim: usize,
    /// Encoder width per direction; the head consumes 2x this.
    pub hidden: usize,
}

impl Default for Seq2PwdHyper {
    fn default() -> Self {
        Self {
            input_dim: super::INPUT_DIMS,
            hidden: 64,
        }
    }
}

/// Classifier over a fixed password list. The head maps the
/// concatenation of the forward encoder's last state and the backward
/// encoder's first state to one logit per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2PwdModel {
    pub hyper: Seq2PwdHyper,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub w_hu: Matrix2,
    pub b_u: Matrix2,
    /// Class order is the database order; ranking ties resolve by it.
    pub classes: Vec<Password>,
    pub norm: InputNorm,
}

impl Seq2PwdModel {
    pub fn init(
        hyper: Seq2PwdHyper,
        classes: Vec<Password>,
        norm: InputNorm,
        rng: &mut SeededRng,
    ) -> Result<Self, SeqModelError> {
        let mut model = Self::zeros(hyper, classes, norm)?;
        model.fwd = LstmParams::init(hyper.input_dim, hyper.hidden, rng);
        model.bwd = LstmParams::init(hyper.input_dim, hyper.hidden, rng);
        model
            .w_hu
            .fill_uniform(rng, 1.0 / ((2 * hyper.hidden) as f64).sqrt());
        Ok(model)
    }

    pub fn zeros(
        hyper: Seq2PwdHyper,
        classes: Vec<Password>,
        norm: InputNorm,
    ) -> Result<Self, SeqModelError> {
        if classes.is_empty() {
            return Err(SeqModelError::BadFormat("empty password database".into()));
        }
        if classes.iter().collect::<HashSet<_>>().len() != classes.len() {
            return Err(SeqModelError::DuplicateClass);
        }
        norm.validate(hyper.input_dim)?;
        Ok(Self {
            hyper,
            fwd: LstmParams::zeros(hyper.input_dim, hyper.hidden),
            bwd: LstmParams::zeros(hyper.input_dim, hyper.hidden),
            w_hu: Matrix2::zeros(classes.len(), 2 * hyper.hidden),
            b_u: Matrix2::zeros(classes.len(), 1),
            classes,
            norm,
        })
    }

    /// All parameter tensors with their serialization names, in the
    /// fixed order shared with [`Seq2PwdGrads`].
    pub fn named_tensors(&self) -> Vec<(String, &Matrix2)> {
        let mut out: Vec<(String, &Matrix2)> = Vec::new();
        for (n, m) in self.fwd.tensors() {
            out.push((format!("fwd.{n}"), m));
        }
        for (n, m) in self.bwd.tensors() {
            out.push((format!("bwd.{n}"), m));
        }
        out.push(("w_hu".into(), &self.w_hu));
        out.push(("b_u".into(), &self.b_u));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2> {
        let mut out: Vec<&mut Matrix2> = Vec::new();
        for (_, m) in self.fwd.tensors_mut() {
            out.push(m);
        }
        for (_, m) in self.bwd.tensors_mut() {
            out.push(m);
        }
        out.push(&mut self.w_hu);
        out.push(&mut self.b_u);
        out
    }

    /// Forward pass with everything the backward pass needs retained.
    /// With a dropout context, inverted-dropout masks are applied to the
    /// encoder inputs and the head input (never the recurrent path) and
    /// stored so gradients see the same masks.
    pub fn forward_trace(
        &self,
        xs: &[Vec<f64>],
        mut dropout: DropoutCtx,
    ) -> Result<Seq2PwdTrace, SeqModelError> {
        let masked;
        let xs = match dropout.as_mut() {
            Some((p, rng)) if *p > 0.0 => {
                masked = xs
                    .iter()
                    .map(|row| {
                        let mut row = row.clone();
                        let mask = dropout_mask(row.len(), *p, rng);
                        mul_mask(&mut row, &mask);
                        row
                    })
                    .collect::<Vec<_>>();
                &masked[..]
            }
            _ => xs,
        };
        let bi = encode_bidirectional_trace(&self.fwd, &self.bwd, xs)?;
        let mut concat = bi.h_fwd_last().to_vec();
        concat.extend_from_slice(bi.h_bwd_first());
        let head_mask = match dropout.as_mut() {
            Some((p, rng)) if *p > 0.0 => {
                let mask = dropout_mask(concat.len(), *p, rng);
                mul_mask(&mut concat, &mask);
                Some(mask)
            }
            _ => None,
        };
        let mut logits = self.b_u.data().to_vec();
        self.w_hu.matvec_acc(&concat, &mut logits);
        let probs = softmax(&logits).map_err(|_| SeqModelError::NonFinite("seq2pwd logits"))?;
        Ok(Seq2PwdTrace {
            bi,
            concat,
            head_mask,
            probs,
        })
    }

    /// Accumulates `scale` times the cross-entropy gradient for one
    /// sample into `grads` and returns the sample's unscaled loss.
    pub fn backward(
        &self,
        trace: &Seq2PwdTrace,
        target: usize,
        scale: f64,
        grads: &mut Seq2PwdGrads,
    ) -> Result<f64, SeqModelError> {
        if target >= self.classes.len() {
            return Err(SeqModelError::BadSymbol {
                got: target,
                vocab: self.classes.len(),
            });
        }
        let mut du = trace.probs.clone();
        du[target] -= 1.0;
        for d in &mut du {
            *d *= scale;
        }
        grads.w_hu.add_outer(&du, &trace.concat, 1.0);
        for (b, d) in grads.b_u.data_mut().iter_mut().zip(&du) {
            *b += d;
        }
        let mut d_concat = vec![0.0; 2 * self.hyper.hidden];
        self.w_hu.matvec_t_acc(&du, &mut d_concat);
        if let Some(mask) = &trace.head_mask {
            mul_mask(&mut d_concat, mask);
        }
        let h = self.hyper.hidden;
        let zeros = vec![vec![0.0; 2 * h]; trace.bi.len()];
        encode_backward(
            &self.fwd,
            &self.bwd,
            &trace.bi,
            &zeros,
            &d_concat[..h],
            &d_concat[h..],
            &mut grads.fwd,
            &mut grads.bwd,
        );
        Ok(-log_prob(trace.probs[target]))
    }

    pub fn to_json(&self) -> String {
        let wire = Seq2PwdWire {
            format_version: MODEL_FORMAT_VERSION,
            kind: "seq2pwd".into(),
            hyper: self.hyper,
            norm: self.norm.clone(),
            classes: self.classes.clone(),
            params: self
                .named_tensors()
                .into_iter()
                .map(|(n, m)| (n, m.clone()))
                .collect(),
        };
        serde_json::to_string(&wire).expect("seq2pwd serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, SeqModelError> {
        let wire: Seq2PwdWire =
            serde_json::from_str(text).map_err(|e| SeqModelError::BadFormat(e.to_string()))?;
        if wire.format_version != MODEL_FORMAT_VERSION {
            return Err(SeqModelError::BadFormat(format!(
                "format_version {} unsupported",
                wire.format_version
            )));
        }
        if wire.kind != "seq2pwd" {
            return Err(SeqModelError::BadFormat(format!(
                "kind {:?} is not seq2pwd",
                wire.kind
            )));
        }
        let mut model = Self::zeros(wire.hyper, wire.classes, wire.norm)?;
        let mut params = wire.params;
        for (name, slot) in model
            .fwd
            .tensors_mut()
            .into_iter()
            .map(|(n, m)| (format!("fwd.{n}"), m))
            .chain(
                model
                    .bwd
                    .tensors_mut()
                    .into_iter()
                    .map(|(n, m)| (format!("bwd.{n}"), m)),
            )
            .chain([
                ("w_hu".to_string(), &mut model.w_hu),
                ("b_u".to_string(), &mut model.b_u),
            ]) {
            *slot = take_tensor(&mut params, &name, slot)?;
        }
        reject_leftovers(params)?;
        Ok(model)
    }
}

/// Pulls one named tensor out of a deserialized parameter map, checking
/// its shape against the zero-initialized slot and its finiteness
/// (plain deserialization enforces neither).
pub(super) fn take_tensor(
    params: &mut BTreeMap<String, Matrix2>,
    name: &str,
    slot: &Matrix2,
) -> Result<Matrix2, SeqModelError> {
    let m = params
        .remove(name)
        .ok_or_else(|| SeqModelError::BadFormat(format!("missing tensor {name:?}")))?;
    if m.data().len() != m.rows() * m.cols() || !m.same_shape(slot) {
        return Err(SeqModelError::BadFormat(format!(
            "tensor {name:?}: expected {}x{}, got {}x{} with {} entries",
            slot.rows(),
            slot.cols(),
            m.rows(),
            m.cols(),
            m.data().len()
        )));
    }
    if !m.is_finite() {
        return Err(SeqModelError::BadFormat(format!(
            "tensor {name:?} has non-finite entries"
        )));
    }
    Ok(m)
}

pub(super) fn reject_leftovers(params: BTreeMap<String, Matrix2>) -> Result<(), SeqModelError> {
    match params.into_keys().next() {
        Some(name) => Err(SeqModelError::BadFormat(format!(
            "unexpected tensor {name:?}"
        ))),
        None => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
struct Seq2PwdWire {
    format_version: u32,
    kind: String,
    hyper: Seq2PwdHyper,
    norm: InputNorm,
    classes: Vec<Password>,
    params: BTreeMap<String, Matrix2>,
}

/// Cached forward pass of one sample.
pub struct Seq2PwdTrace {
    bi: BiTrace,
    concat: Vec<f64>,
    head_mask: Option<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Gradient accumulator shaped like the model, in [`Seq2PwdModel::named_tensors`] order.
#[derive(Clone, Debug)]
pub struct Seq2PwdGrads {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub w_hu: Matrix2,
    pub b_u: Matrix2,
}

impl Seq2PwdGrads {
    pub fn zeros(model: &Seq2PwdModel) -> Self {
        Self {
            fwd: model.fwd.zeros_like(),
            bwd: model.bwd.zeros_like(),
            w_hu: Matrix2::zeros(model.w_hu.rows(), model.w_hu.cols()),
            b_u: Matrix2::zeros(model.b_u.rows(), model.b_u.cols()),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix2> {
        let mut out: Vec<&Matrix2> = Vec::new();
        for (_, m) in self.fwd.tensors() {
            out.push(m);
        }
        for (_, m) in self.bwd.tensors() {
            out.push(m);
        }
        out.push(&self.w_hu);
        out.push(&self.b_u);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2> {
        let mut out: Vec<&mut Matrix2> = Vec::new();
        for (_, m) in self.fwd.tensors_mut() {
            out.push(m);
        }
        for (_, m) in self.bwd.tensors_mut() {
            out.push(m);
        }
        out.push(&mut self.w_hu);
        out.push(&mut self.b_u);
        out
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, 1.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.tensors_mut() {
            m.scale(s);
        }
    }
}

/// Class distribution for one prepared input: softmax over
/// `W_hu [h_fwd_T ; h_bwd_1] + b_u`.
pub fn seq2pwd_forward(
    model: &Seq2PwdModel,
    xs: &[Vec<f64>],
) -> Result<Vec<f64>, SeqModelError> {
    Ok(model.forward_trace(xs, None)?.probs)
}
