//! Digit-by-digit decoder: bidirectional encoder, additive attention,
//! decoder LSTM with teacher forcing, softmax head over the digit
//! vocabulary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numerics::{axpy, dot, softmax, softmax_in_place, Matrix2, SeededRng};

use super::lstm::{
    encode_backward, encode_bidirectional_trace, lstm_step_backward, lstm_step_traced, BiTrace,
    LstmParams, LstmState, StepCache,
};
use super::seq2pwd::{reject_leftovers, take_tensor};
use super::{
    dropout_mask, log_prob, mul_mask, DropoutCtx, InputNorm, SeqModelError, Vocab,
    MODEL_FORMAT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2DgtHyper {
    pub input_dim: usize,
    /// Encoder width per direction; attention and the decoder see 2x.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attn_dim: usize,
    pub embed_dim: usize,
}

impl Default for Seq2DgtHyper {
    fn default() -> Self {
        Self {
            input_dim: super::INPUT_DIMS,
            enc_hidden: 64,
            dec_hidden: 128,
            attn_dim: 64,
            embed_dim: 16,
        }
    }
}

/// Attention encoder-decoder over digit symbols. The decoder LSTM
/// consumes `[embedding(y_prev); context]` per step; its initial hidden
/// state is `tanh(W_init [h_fwd_T; h_bwd_1] + b_init)` with zero cell.
/// The embedding table has one extra row, the start-of-sequence token.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2DgtModel {
    pub hyper: Seq2DgtHyper,
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub dec: LstmParams,
    pub w_init: Matrix2,
    pub b_init: Matrix2,
    pub w_s: Matrix2,
    pub w_h: Matrix2,
    pub v: Matrix2,
    pub embed: Matrix2,
    pub w_out: Matrix2,
    pub b_out: Matrix2,
    pub vocab: Vocab,
    pub norm: InputNorm,
}

impl Seq2DgtModel {
    pub fn init(
        hyper: Seq2DgtHyper,
        vocab: Vocab,
        norm: InputNorm,
        rng: &mut SeededRng,
    ) -> Result<Self, SeqModelError> {
        let mut model = Self::zeros(hyper, vocab, norm)?;
        model.enc_fwd = LstmParams::init(hyper.input_dim, hyper.enc_hidden, rng);
        model.enc_bwd = LstmParams::init(hyper.input_dim, hyper.enc_hidden, rng);
        model.dec = LstmParams::init(
            hyper.embed_dim + 2 * hyper.enc_hidden,
            hyper.dec_hidden,
            rng,
        );
        let enc2 = (2 * hyper.enc_hidden) as f64;
        model.w_init.fill_uniform(rng, 1.0 / enc2.sqrt());
        model.w_s.fill_uniform(rng, 1.0 / (hyper.dec_hidden as f64).sqrt());
        model.w_h.fill_uniform(rng, 1.0 / enc2.sqrt());
        model.v.fill_uniform(rng, 1.0 / (hyper.attn_dim as f64).sqrt());
        model
            .embed
            .fill_uniform(rng, 1.0 / (hyper.embed_dim as f64).sqrt());
        model
            .w_out
            .fill_uniform(rng, 1.0 / (hyper.dec_hidden as f64).sqrt());
        Ok(model)
    }

    pub fn zeros(
        hyper: Seq2DgtHyper,
        vocab: Vocab,
        norm: InputNorm,
    ) -> Result<Self, SeqModelError> {
        norm.validate(hyper.input_dim)?;
        let enc2 = 2 * hyper.enc_hidden;
        Ok(Self {
            hyper,
            enc_fwd: LstmParams::zeros(hyper.input_dim, hyper.enc_hidden),
            enc_bwd: LstmParams::zeros(hyper.input_dim, hyper.enc_hidden),
            dec: LstmParams::zeros(hyper.embed_dim + enc2, hyper.dec_hidden),
            w_init: Matrix2::zeros(hyper.dec_hidden, enc2),
            b_init: Matrix2::zeros(hyper.dec_hidden, 1),
            w_s: Matrix2::zeros(hyper.attn_dim, hyper.dec_hidden),
            w_h: Matrix2::zeros(hyper.attn_dim, enc2),
            v: Matrix2::zeros(hyper.attn_dim, 1),
            embed: Matrix2::zeros(vocab.size() + 1, hyper.embed_dim),
            w_out: Matrix2::zeros(vocab.size(), hyper.dec_hidden),
            b_out: Matrix2::zeros(vocab.size(), 1),
            vocab,
            norm,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix2)> {
        let mut out: Vec<(String, &Matrix2)> = Vec::new();
        for (n, m) in self.enc_fwd.tensors() {
            out.push((format!("enc_fwd.{n}"), m));
        }
        for (n, m) in self.enc_bwd.tensors() {
            out.push((format!("enc_bwd.{n}"), m));
        }
        for (n, m) in self.dec.tensors() {
            out.push((format!("dec.{n}"), m));
        }
        out.push(("w_init".into(), &self.w_init));
        out.push(("b_init".into(), &self.b_init));
        out.push(("w_s".into(), &self.w_s));
        out.push(("w_h".into(), &self.w_h));
        out.push(("v".into(), &self.v));
        out.push(("embed".into(), &self.embed));
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2> {
        let mut out: Vec<&mut Matrix2> = Vec::new();
        for (_, m) in self.enc_fwd.tensors_mut() {
            out.push(m);
        }
        for (_, m) in self.enc_bwd.tensors_mut() {
            out.push(m);
        }
        for (_, m) in self.dec.tensors_mut() {
            out.push(m);
        }
        out.push(&mut self.w_init);
        out.push(&mut self.b_init);
        out.push(&mut self.w_s);
        out.push(&mut self.w_h);
        out.push(&mut self.v);
        out.push(&mut self.embed);
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    fn check_hseq(&self, hseq: &[Vec<f64>]) -> Result<(), SeqModelError> {
        if hseq.is_empty() {
            return Err(SeqModelError::EmptyInput);
        }
        let want = 2 * self.hyper.enc_hidden;
        if hseq.iter().any(|h| h.len() != want) {
            return Err(SeqModelError::ShapeMismatch {
                op: "attention",
                expected: format!("encoder states of {want}"),
                got: format!("{}", hseq.iter().find(|h| h.len() != want).unwrap().len()),
            });
        }
        Ok(())
    }

    fn check_symbol(&self, y: usize, allow_sos: bool) -> Result<(), SeqModelError> {
        let cap = self.vocab.size() + usize::from(allow_sos);
        if y >= cap {
            return Err(SeqModelError::BadSymbol {
                got: y,
                vocab: self.vocab.size(),
            });
        }
        Ok(())
    }

    /// Runs the encoder and precomputes everything decode steps reuse:
    /// per-step attention keys `W_h h_k` and the decoder's initial state.
    pub(super) fn encode_for_decode(&self, xs: &[Vec<f64>]) -> Result<EncodedSeq, SeqModelError> {
        let bi = encode_bidirectional_trace(&self.enc_fwd, &self.enc_bwd, xs)?;
        let hseq = bi.hseq();
        let whk = hseq.iter().map(|h| self.w_h.matvec(h)).collect();
        let mut concat = bi.h_fwd_last().to_vec();
        concat.extend_from_slice(bi.h_bwd_first());
        Ok(EncodedSeq {
            init: self.decoder_init(&concat),
            hseq,
            whk,
        })
    }

    fn decoder_init(&self, concat: &[f64]) -> LstmState {
        let mut h = self.b_init.data().to_vec();
        self.w_init.matvec_acc(concat, &mut h);
        for x in &mut h {
            *x = x.tanh();
        }
        LstmState {
            c: vec![0.0; h.len()],
            h,
        }
    }

    /// One decode step against a prepared encoding; the shared core of
    /// scoring, beam search, and the public [`seq2dgt_step`].
    pub(super) fn step_cached(
        &self,
        enc: &EncodedSeq,
        y_prev: usize,
        s_prev: &LstmState,
    ) -> Result<(Vec<f64>, LstmState), SeqModelError> {
        self.check_symbol(y_prev, true)?;
        let (ctx, _) = attention_with_keys(self, &enc.whk, &s_prev.h, &enc.hseq);
        let mut x = self.embed.row(y_prev).to_vec();
        x.extend_from_slice(&ctx);
        let cache = lstm_step_traced(&self.dec, x, &s_prev.h, &s_prev.c)?;
        let mut logits = self.b_out.data().to_vec();
        self.w_out.matvec_acc(&cache.h, &mut logits);
        let probs = softmax(&logits).map_err(|_| SeqModelError::NonFinite("seq2dgt logits"))?;
        Ok((
            probs,
            LstmState {
                h: cache.h,
                c: cache.c,
            },
        ))
    }

    /// Teacher-forced forward pass over one (input, target) pair with
    /// every activation retained for [`Seq2DgtModel::backward`]. Dropout
    /// masks (training only) cover the encoder inputs, the decoder's
    /// per-step input, and the head input; never recurrent state or
    /// attention internals.
    pub fn forward_trace(
        &self,
        xs: &[Vec<f64>],
        targets: &[usize],
        mut dropout: DropoutCtx,
    ) -> Result<Seq2DgtTrace, SeqModelError> {
        if targets.is_empty() {
            return Err(SeqModelError::EmptyTarget);
        }
        for &y in targets {
            self.check_symbol(y, false)?;
        }
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
        let bi = encode_bidirectional_trace(&self.enc_fwd, &self.enc_bwd, xs)?;
        let hseq = bi.hseq();
        let whk: Vec<Vec<f64>> = hseq.iter().map(|h| self.w_h.matvec(h)).collect();
        let mut concat0 = bi.h_fwd_last().to_vec();
        concat0.extend_from_slice(bi.h_bwd_first());
        let init = self.decoder_init(&concat0);

        let mut steps: Vec<DecStep> = Vec::with_capacity(targets.len());
        let mut losses = Vec::with_capacity(targets.len());
        for (k, &target) in targets.iter().enumerate() {
            let (s_prev_h, s_prev_c) = match steps.last() {
                Some(prev) => (&prev.cache.h[..], &prev.cache.c[..]),
                None => (&init.h[..], &init.c[..]),
            };
            let (ctx, weights, tanhs) =
                attention_traced(self, &whk, s_prev_h, &hseq);
            let y_prev = if k == 0 {
                self.vocab.sos_row()
            } else {
                targets[k - 1]
            };
            let mut x = self.embed.row(y_prev).to_vec();
            x.extend_from_slice(&ctx);
            let in_mask = match dropout.as_mut() {
                Some((p, rng)) if *p > 0.0 => {
                    let mask = dropout_mask(x.len(), *p, rng);
                    mul_mask(&mut x, &mask);
                    Some(mask)
                }
                _ => None,
            };
            let cache = lstm_step_traced(&self.dec, x, s_prev_h, s_prev_c)?;
            let mut head_in = cache.h.clone();
            let head_mask = match dropout.as_mut() {
                Some((p, rng)) if *p > 0.0 => {
                    let mask = dropout_mask(head_in.len(), *p, rng);
                    mul_mask(&mut head_in, &mask);
                    Some(mask)
                }
                _ => None,
            };
            let mut logits = self.b_out.data().to_vec();
            self.w_out.matvec_acc(&head_in, &mut logits);
            let probs =
                softmax(&logits).map_err(|_| SeqModelError::NonFinite("seq2dgt logits"))?;
            losses.push(-log_prob(probs[target]));
            steps.push(DecStep {
                y_prev,
                target,
                attn_w: weights,
                attn_t: tanhs,
                cache,
                in_mask,
                head_mask,
                probs,
            });
        }
        Ok(Seq2DgtTrace {
            bi,
            hseq,
            concat0,
            init,
            steps,
            losses,
        })
    }

    /// Accumulates `scale` times the gradient of this sample's loss (the
    /// mean of per-step cross-entropies) into `grads`.
    pub fn backward(&self, trace: &Seq2DgtTrace, scale: f64, grads: &mut Seq2DgtGrads) {
        let t = trace.hseq.len();
        let enc2 = 2 * self.hyper.enc_hidden;
        let embed_dim = self.hyper.embed_dim;
        let per_step = scale / trace.steps.len() as f64;

        let mut dhseq = vec![vec![0.0; enc2]; t];
        let mut dh_carry = vec![0.0; self.hyper.dec_hidden];
        let mut dc_carry = vec![0.0; self.hyper.dec_hidden];
        for k in (0..trace.steps.len()).rev() {
            let st = &trace.steps[k];
            let (s_prev_h, s_prev_c) = match k.checked_sub(1) {
                Some(j) => (&trace.steps[j].cache.h[..], &trace.steps[j].cache.c[..]),
                None => (&trace.init.h[..], &trace.init.c[..]),
            };
            let mut du = st.probs.clone();
            du[st.target] -= 1.0;
            for d in &mut du {
                *d *= per_step;
            }
            let mut head_in = st.cache.h.clone();
            if let Some(mask) = &st.head_mask {
                mul_mask(&mut head_in, mask);
            }
            grads.w_out.add_outer(&du, &head_in, 1.0);
            for (b, d) in grads.b_out.data_mut().iter_mut().zip(&du) {
                *b += d;
            }
            let mut dh = vec![0.0; self.hyper.dec_hidden];
            self.w_out.matvec_t_acc(&du, &mut dh);
            if let Some(mask) = &st.head_mask {
                mul_mask(&mut dh, mask);
            }
            axpy(&mut dh, 1.0, &dh_carry);

            let mut dx = vec![0.0; embed_dim + enc2];
            let (dh_prev, dc_prev) = lstm_step_backward(
                &self.dec,
                &st.cache,
                s_prev_h,
                s_prev_c,
                &dh,
                &dc_carry,
                &mut grads.dec,
                Some(&mut dx),
            );
            if let Some(mask) = &st.in_mask {
                mul_mask(&mut dx, mask);
            }
            let row = grads.embed.data_mut();
            for (i, d) in dx[..embed_dim].iter().enumerate() {
                row[st.y_prev * embed_dim + i] += d;
            }
            let mut ds_attn = vec![0.0; self.hyper.dec_hidden];
            self.attention_backward(st, &trace.hseq, s_prev_h, &dx[embed_dim..], &mut dhseq, &mut ds_attn, grads);
            dh_carry = dh_prev;
            axpy(&mut dh_carry, 1.0, &ds_attn);
            dc_carry = dc_prev;
        }

        // Initial decoder state: h_0 = tanh(W_init [h_fwd_T; h_bwd_1] + b_init).
        let mut dpre = dh_carry;
        for (d, h) in dpre.iter_mut().zip(&trace.init.h) {
            *d *= 1.0 - h * h;
        }
        grads.w_init.add_outer(&dpre, &trace.concat0, 1.0);
        for (b, d) in grads.b_init.data_mut().iter_mut().zip(&dpre) {
            *b += d;
        }
        let mut d_concat0 = vec![0.0; enc2];
        self.w_init.matvec_t_acc(&dpre, &mut d_concat0);

        let he = self.hyper.enc_hidden;
        encode_backward(
            &self.enc_fwd,
            &self.enc_bwd,
            &trace.bi,
            &dhseq,
            &d_concat0[..he],
            &d_concat0[he..],
            &mut grads.enc_fwd,
            &mut grads.enc_bwd,
        );
    }

    /// Reverse-mode through one step's attention: `d_ctx` arrives on the
    /// context vector; gradients flow to the encoder states, the
    /// previous decoder state, and the attention parameters.
    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        st: &DecStep,
        hseq: &[Vec<f64>],
        s_prev_h: &[f64],
        d_ctx: &[f64],
        dhseq: &mut [Vec<f64>],
        ds_prev: &mut [f64],
        grads: &mut Seq2DgtGrads,
    ) {
        let t = hseq.len();
        let a_dim = self.hyper.attn_dim;
        let da: Vec<f64> = (0..t).map(|k| dot(d_ctx, &hseq[k])).collect();
        for (dh, w) in dhseq.iter_mut().zip(&st.attn_w) {
            axpy(dh, *w, d_ctx);
        }
        let mix: f64 = (0..t).map(|k| st.attn_w[k] * da[k]).sum();
        let v = self.v.data();
        let dv = grads.v.data_mut();
        let mut du_sum = vec![0.0; a_dim];
        let mut du_k = vec![0.0; a_dim];
        for k in 0..t {
            let de = st.attn_w[k] * (da[k] - mix);
            let tk = &st.attn_t[k];
            for i in 0..a_dim {
                dv[i] += de * tk[i];
                du_k[i] = de * v[i] * (1.0 - tk[i] * tk[i]);
            }
            grads.w_h.add_outer(&du_k, &hseq[k], 1.0);
            self.w_h.matvec_t_acc(&du_k, &mut dhseq[k]);
            axpy(&mut du_sum, 1.0, &du_k);
        }
        grads.w_s.add_outer(&du_sum, s_prev_h, 1.0);
        self.w_s.matvec_t_acc(&du_sum, ds_prev);
    }

    pub fn to_json(&self) -> String {
        let wire = Seq2DgtWire {
            format_version: MODEL_FORMAT_VERSION,
            kind: "seq2dgt".into(),
            hyper: self.hyper,
            norm: self.norm.clone(),
            vocab: self.vocab.names(),
            params: self
                .named_tensors()
                .into_iter()
                .map(|(n, m)| (n, m.clone()))
                .collect(),
        };
        serde_json::to_string(&wire).expect("seq2dgt serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, SeqModelError> {
        let wire: Seq2DgtWire =
            serde_json::from_str(text).map_err(|e| SeqModelError::BadFormat(e.to_string()))?;
        if wire.format_version != MODEL_FORMAT_VERSION {
            return Err(SeqModelError::BadFormat(format!(
                "format_version {} unsupported",
                wire.format_version
            )));
        }
        if wire.kind != "seq2dgt" {
            return Err(SeqModelError::BadFormat(format!(
                "kind {:?} is not seq2dgt",
                wire.kind
            )));
        }
        let vocab = Vocab::from_names(&wire.vocab)?;
        let mut model = Self::zeros(wire.hyper, vocab, wire.norm)?;
        let mut params = wire.params;
        {
            let mut fill = |name: String, slot: &mut Matrix2| -> Result<(), SeqModelError> {
                *slot = take_tensor(&mut params, &name, slot)?;
                Ok(())
            };
            for (n, m) in model.enc_fwd.tensors_mut() {
                fill(format!("enc_fwd.{n}"), m)?;
            }
            for (n, m) in model.enc_bwd.tensors_mut() {
                fill(format!("enc_bwd.{n}"), m)?;
            }
            for (n, m) in model.dec.tensors_mut() {
                fill(format!("dec.{n}"), m)?;
            }
            fill("w_init".into(), &mut model.w_init)?;
            fill("b_init".into(), &mut model.b_init)?;
            fill("w_s".into(), &mut model.w_s)?;
            fill("w_h".into(), &mut model.w_h)?;
            fill("v".into(), &mut model.v)?;
            fill("embed".into(), &mut model.embed)?;
            fill("w_out".into(), &mut model.w_out)?;
            fill("b_out".into(), &mut model.b_out)?;
        }
        reject_leftovers(params)?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Seq2DgtWire {
    format_version: u32,
    kind: String,
    hyper: Seq2DgtHyper,
    norm: InputNorm,
    vocab: Vec<String>,
    params: BTreeMap<String, Matrix2>,
}

/// Everything decode steps share for one input: encoder states,
/// precomputed attention keys, decoder start state.
pub(super) struct EncodedSeq {
    pub(super) hseq: Vec<Vec<f64>>,
    pub(super) whk: Vec<Vec<f64>>,
    pub(super) init: LstmState,
}

/// Attention core against precomputed keys `W_h h_k`.
fn attention_with_keys(
    model: &Seq2DgtModel,
    whk: &[Vec<f64>],
    s_prev_h: &[f64],
    hseq: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let (ctx, weights, _) = attention_core(model, whk, s_prev_h, hseq, false);
    (ctx, weights)
}

fn attention_traced(
    model: &Seq2DgtModel,
    whk: &[Vec<f64>],
    s_prev_h: &[f64],
    hseq: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    attention_core(model, whk, s_prev_h, hseq, true)
}

fn attention_core(
    model: &Seq2DgtModel,
    whk: &[Vec<f64>],
    s_prev_h: &[f64],
    hseq: &[Vec<f64>],
    keep_tanh: bool,
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let ws = model.w_s.matvec(s_prev_h);
    let v = model.v.data();
    let mut scores = Vec::with_capacity(hseq.len());
    let mut tanhs = Vec::with_capacity(if keep_tanh { hseq.len() } else { 0 });
    for keys in whk {
        let mut t = ws.clone();
        axpy(&mut t, 1.0, keys);
        for x in &mut t {
            *x = x.tanh();
        }
        scores.push(dot(v, &t));
        if keep_tanh {
            tanhs.push(t);
        }
    }
    softmax_in_place(&mut scores);
    let mut ctx = vec![0.0; hseq[0].len()];
    for (a, h) in scores.iter().zip(hseq) {
        axpy(&mut ctx, *a, h);
    }
    (ctx, scores, tanhs)
}

/// Additive attention over encoder states: `e_k = v . tanh(W_s s + W_h
/// h_k)`, weights `a = softmax(e)`, context `c = sum a_k h_k`. Returns
/// (context, weights).
pub fn attention(
    model: &Seq2DgtModel,
    s_prev: &[f64],
    hseq: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>), SeqModelError> {
    model.check_hseq(hseq)?;
    if s_prev.len() != model.hyper.dec_hidden {
        return Err(SeqModelError::ShapeMismatch {
            op: "attention",
            expected: format!("decoder state of {}", model.hyper.dec_hidden),
            got: format!("{}", s_prev.len()),
        });
    }
    let whk: Vec<Vec<f64>> = hseq.iter().map(|h| model.w_h.matvec(h)).collect();
    Ok(attention_with_keys(model, &whk, s_prev, hseq))
}

/// One decode step: attention context from `s_prev`, decoder LSTM over
/// `[embedding(y_prev); context]`, softmax head. `y_prev` may be the
/// start-of-sequence row for the first step.
pub fn seq2dgt_step(
    model: &Seq2DgtModel,
    y_prev: usize,
    s_prev: &LstmState,
    hseq: &[Vec<f64>],
) -> Result<(Vec<f64>, LstmState), SeqModelError> {
    model.check_hseq(hseq)?;
    let whk = hseq.iter().map(|h| model.w_h.matvec(h)).collect();
    let enc = EncodedSeq {
        hseq: hseq.to_vec(),
        whk,
        init: LstmState::zeros(model.hyper.dec_hidden),
    };
    model.step_cached(&enc, y_prev, s_prev)
}

/// Teacher-forced log-score of a symbol sequence: the sum of per-step
/// log-probabilities of `targets` under the model.
pub fn score_sequence(
    model: &Seq2DgtModel,
    xs: &[Vec<f64>],
    targets: &[usize],
) -> Result<f64, SeqModelError> {
    if targets.is_empty() {
        return Err(SeqModelError::EmptyTarget);
    }
    for &y in targets {
        model.check_symbol(y, false)?;
    }
    let enc = model.encode_for_decode(xs)?;
    let mut state = enc.init.clone();
    let mut y_prev = model.vocab.sos_row();
    let mut total = 0.0;
    for &y in targets {
        let (probs, next) = model.step_cached(&enc, y_prev, &state)?;
        total += log_prob(probs[y]);
        state = next;
        y_prev = y;
    }
    Ok(total)
}

/// Cached teacher-forced pass; `losses` holds per-step cross-entropies.
pub struct Seq2DgtTrace {
    bi: BiTrace,
    hseq: Vec<Vec<f64>>,
    concat0: Vec<f64>,
    init: LstmState,
    steps: Vec<DecStep>,
    pub losses: Vec<f64>,
}

impl Seq2DgtTrace {
    /// Sample loss: mean of per-step cross-entropies.
    pub fn loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

struct DecStep {
    y_prev: usize,
    target: usize,
    attn_w: Vec<f64>,
    attn_t: Vec<Vec<f64>>,
    cache: StepCache,
    in_mask: Option<Vec<f64>>,
    head_mask: Option<Vec<f64>>,
    probs: Vec<f64>,
}

/// Gradient accumulator shaped like the model, in
/// [`Seq2DgtModel::named_tensors`] order.
#[derive(Clone, Debug)]
pub struct Seq2DgtGrads {
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub dec: LstmParams,
    pub w_init: Matrix2,
    pub b_init: Matrix2,
    pub w_s: Matrix2,
    pub w_h: Matrix2,
    pub v: Matrix2,
    pub embed: Matrix2,
    pub w_out: Matrix2,
    pub b_out: Matrix2,
}

impl Seq2DgtGrads {
    pub fn zeros(model: &Seq2DgtModel) -> Self {
        let z = |m: &Matrix2| Matrix2::zeros(m.rows(), m.cols());
        Self {
            enc_fwd: model.enc_fwd.zeros_like(),
            enc_bwd: model.enc_bwd.zeros_like(),
            dec: model.dec.zeros_like(),
            w_init: z(&model.w_init),
            b_init: z(&model.b_init),
            w_s: z(&model.w_s),
            w_h: z(&model.w_h),
            v: z(&model.v),
            embed: z(&model.embed),
            w_out: z(&model.w_out),
            b_out: z(&model.b_out),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix2> {
        let mut out: Vec<&Matrix2> = Vec::new();
        for (_, m) in self.enc_fwd.tensors() {
            out.push(m);
        }
        for (_, m) in self.enc_bwd.tensors() {
            out.push(m);
        }
        for (_, m) in self.dec.tensors() {
            out.push(m);
        }
        out.extend([
            &self.w_init,
            &self.b_init,
            &self.w_s,
            &self.w_h,
            &self.v,
            &self.embed,
            &self.w_out,
            &self.b_out,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2> {
        let mut out: Vec<&mut Matrix2> = Vec::new();
        for (_, m) in self.enc_fwd.tensors_mut() {
            out.push(m);
        }
        for (_, m) in self.enc_bwd.tensors_mut() {
            out.push(m);
        }
        for (_, m) in self.dec.tensors_mut() {
            out.push(m);
        }
        out.push(&mut self.w_init);
        out.push(&mut self.b_init);
        out.push(&mut self.w_s);
        out.push(&mut self.w_h);
        out.push(&mut self.v);
        out.push(&mut self.embed);
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{adam_step, finite_diff_grad, AdamState};

    fn tiny_hyper() -> Seq2DgtHyper {
        Seq2DgtHyper {
            input_dim: 2,
            enc_hidden: 3,
            dec_hidden: 4,
            attn_dim: 3,
            embed_dim: 2,
        }
    }

    fn tiny(seed: u64) -> Seq2DgtModel {
        let mut rng = SeededRng::new(seed);
        Seq2DgtModel::init(
            tiny_hyper(),
            Vocab::custom(vec![1, 2], true),
            InputNorm::identity(2),
            &mut rng,
        )
        .unwrap()
    }

    fn rand_xs(t: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..d).map(|_| rng.normal()).collect())
            .collect()
    }

    #[test]
    fn identical_states_get_uniform_attention() {
        let model = tiny(3);
        let h = vec![0.4, -0.2, 0.9, 0.1, -0.6, 0.3];
        let hseq = vec![h.clone(); 5];
        let s = vec![0.2; 4];
        let (ctx, weights) = attention(&model, &s, &hseq).unwrap();
        for w in &weights {
            assert!((w - 0.2).abs() < 1e-15);
        }
        for (c, x) in ctx.iter().zip(&h) {
            assert!((c - x).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let model = tiny(5);
        let mut rng = SeededRng::new(6);
        for t in [1usize, 3, 17] {
            let hseq: Vec<Vec<f64>> =
                (0..t).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
            let s: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let (_, weights) = attention(&model, &s, &hseq).unwrap();
            assert_eq!(weights.len(), t);
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(weights.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn attention_rejects_bad_shapes() {
        let model = tiny(7);
        assert!(matches!(
            attention(&model, &[0.0; 4], &[]),
            Err(SeqModelError::EmptyInput)
        ));
        assert!(attention(&model, &[0.0; 4], &[vec![0.0; 5]]).is_err());
        assert!(attention(&model, &[0.0; 3], &[vec![0.0; 6]]).is_err());
    }

    #[test]
    fn step_emits_a_distribution_and_is_deterministic() {
        let model = tiny(9);
        let mut rng = SeededRng::new(10);
        let xs = rand_xs(6, 2, &mut rng);
        let enc = model.encode_for_decode(&xs).unwrap();
        let (p1, s1) = seq2dgt_step(&model, model.vocab.sos_row(), &enc.init, &enc.hseq).unwrap();
        let (p2, s2) = seq2dgt_step(&model, model.vocab.sos_row(), &enc.init, &enc.hseq).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1.h, s2.h);
        assert_eq!(p1.len(), 3);
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // A digit symbol is also a valid previous token; one past the
        // SOS row is not.
        assert!(seq2dgt_step(&model, 2, &s1, &enc.hseq).is_ok());
        assert!(matches!(
            seq2dgt_step(&model, 4, &s1, &enc.hseq),
            Err(SeqModelError::BadSymbol { got: 4, vocab: 3 })
        ));
    }

    #[test]
    fn zero_head_scores_are_uniform() {
        let model = Seq2DgtModel::zeros(
            tiny_hyper(),
            Vocab::custom(vec![1, 2], true),
            InputNorm::identity(2),
        )
        .unwrap();
        let mut rng = SeededRng::new(11);
        let xs = rand_xs(5, 2, &mut rng);
        let score = score_sequence(&model, &xs, &[0, 1, 2, 0]).unwrap();
        assert!((score + 4.0 * 3.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn appending_a_symbol_strictly_lowers_the_score() {
        let model = tiny(13);
        let mut rng = SeededRng::new(14);
        let xs = rand_xs(7, 2, &mut rng);
        let short = score_sequence(&model, &xs, &[0, 1]).unwrap();
        let long = score_sequence(&model, &xs, &[0, 1, 2]).unwrap();
        assert!(long < short);
    }

    #[test]
    fn score_rejects_bad_targets() {
        let model = tiny(15);
        let mut rng = SeededRng::new(16);
        let xs = rand_xs(4, 2, &mut rng);
        assert!(matches!(
            score_sequence(&model, &xs, &[]),
            Err(SeqModelError::EmptyTarget)
        ));
        // The SOS row is an input-only token, not a scoreable target.
        assert!(matches!(
            score_sequence(&model, &xs, &[0, 3]),
            Err(SeqModelError::BadSymbol { got: 3, vocab: 3 })
        ));
    }

    #[test]
    fn teacher_forced_losses_match_score() {
        let model = tiny(17);
        let mut rng = SeededRng::new(18);
        let xs = rand_xs(6, 2, &mut rng);
        let targets = [1usize, 0, 2];
        let trace = model.forward_trace(&xs, &targets, None).unwrap();
        let score = score_sequence(&model, &xs, &targets).unwrap();
        assert_eq!(score, -trace.losses.iter().sum::<f64>());
        assert!((trace.loss() - trace.losses.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    }

    /// With a zeroed embedding table the per-step distributions cannot
    /// depend on earlier output choices, so the stepwise argmax sequence
    /// is the global maximum and beats every single-symbol change.
    #[test]
    fn greedy_beats_single_swaps_when_history_blind() {
        let mut model = tiny(19);
        model.embed.fill(0.0);
        let mut rng = SeededRng::new(20);
        let xs = rand_xs(5, 2, &mut rng);
        let enc = model.encode_for_decode(&xs).unwrap();
        let mut state = enc.init.clone();
        let mut y_prev = model.vocab.sos_row();
        let mut greedy = Vec::new();
        for _ in 0..3 {
            let (probs, next) = model.step_cached(&enc, y_prev, &state).unwrap();
            let best = (0..probs.len())
                .max_by(|a, b| probs[*a].total_cmp(&probs[*b]))
                .unwrap();
            greedy.push(best);
            state = next;
            y_prev = best;
        }
        let base = score_sequence(&model, &xs, &greedy).unwrap();
        for pos in 0..3 {
            for sym in 0..3 {
                if sym == greedy[pos] {
                    continue;
                }
                let mut other = greedy.clone();
                other[pos] = sym;
                let swapped = score_sequence(&model, &xs, &other).unwrap();
                assert!(swapped <= base, "swap at {pos} to {sym} beat greedy");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = tiny(23);
        let mut rng = SeededRng::new(24);
        let xs = rand_xs(5, 2, &mut rng);
        let targets = [0usize, 2, 1];

        let flat: Vec<f64> = model
            .named_tensors()
            .iter()
            .flat_map(|(_, m)| m.data().to_vec())
            .collect();
        let rebuild = |vals: &[f64]| {
            let mut m = model.clone();
            let mut at = 0;
            for t in m.tensors_mut() {
                let n = t.data().len();
                t.data_mut().copy_from_slice(&vals[at..at + n]);
                at += n;
            }
            m
        };
        let numeric = finite_diff_grad(
            |v| rebuild(v).forward_trace(&xs, &targets, None).unwrap().loss(),
            &flat,
            1e-5,
        )
        .unwrap();

        let trace = model.forward_trace(&xs, &targets, None).unwrap();
        let mut grads = Seq2DgtGrads::zeros(&model);
        model.backward(&trace, 1.0, &mut grads);
        let analytic: Vec<f64> = grads
            .tensors()
            .iter()
            .flat_map(|m| m.data().to_vec())
            .collect();
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-3));
        }
        assert!(worst < 1e-4, "max relative error {worst:.3e}");
    }

    #[test]
    fn overfit_one_pair_reproduces_it_greedily() {
        let mut model = tiny(27);
        let mut rng = SeededRng::new(28);
        let xs = rand_xs(6, 2, &mut rng);
        let targets = [1usize, 0, 0, 2];
        let mut adam = AdamState::new(1e-2);
        for _ in 0..500 {
            let trace = model.forward_trace(&xs, &targets, None).unwrap();
            if trace.loss() < 1e-3 {
                break;
            }
            let mut grads = Seq2DgtGrads::zeros(&model);
            model.backward(&trace, 1.0, &mut grads);
            let gs = grads.tensors();
            adam_step(&mut model.tensors_mut(), &gs, &mut adam).unwrap();
        }
        let enc = model.encode_for_decode(&xs).unwrap();
        let mut state = enc.init.clone();
        let mut y_prev = model.vocab.sos_row();
        let mut decoded = Vec::new();
        for _ in 0..targets.len() {
            let (probs, next) = model.step_cached(&enc, y_prev, &state).unwrap();
            let best = (0..probs.len())
                .max_by(|a, b| probs[*a].total_cmp(&probs[*b]))
                .unwrap();
            decoded.push(best);
            state = next;
            y_prev = best;
        }
        assert_eq!(decoded, targets);
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let model = tiny(31);
        let mut rng = SeededRng::new(32);
        let xs = rand_xs(5, 2, &mut rng);
        let targets = [0usize, 1];
        let clean = model.forward_trace(&xs, &targets, None).unwrap();
        let mut drop_rng = SeededRng::new(33);
        let dropped = model
            .forward_trace(&xs, &targets, Some((0.5, &mut drop_rng)))
            .unwrap();
        assert_ne!(clean.losses, dropped.losses);
        let mut p0_rng = SeededRng::new(33);
        let p0 = model
            .forward_trace(&xs, &targets, Some((0.0, &mut p0_rng)))
            .unwrap();
        assert_eq!(clean.losses, p0.losses);
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let model = tiny(41);
        let text = model.to_json();
        let back = Seq2DgtModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        let mut rng = SeededRng::new(42);
        let xs = rand_xs(7, 2, &mut rng);
        assert_eq!(
            score_sequence(&model, &xs, &[0, 1, 2]).unwrap(),
            score_sequence(&back, &xs, &[0, 1, 2]).unwrap()
        );
        assert!(Seq2DgtModel::from_json(&model.to_json().replace(
            "\"kind\":\"seq2dgt\"",
            "\"kind\":\"seq2pwd\""
        ))
        .is_err());
    }
}
