//! LSTM cell, unrolled forward passes with cached activations, exact
//! reverse-mode gradients, and the bidirectional encoder.

use serde::{Deserialize, Serialize};

use crate::numerics::{
    sigmoid, sigmoid_prime_from_output, tanh_prime_from_output, Matrix2, SeededRng,
};

use super::SeqModelError;

/// Gate parameters of one LSTM. Weight shapes are H x D for the input
/// maps, H x H for the recurrent maps, H x 1 for biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_xi: Matrix2,
    pub w_hi: Matrix2,
    pub b_i: Matrix2,
    pub w_xg: Matrix2,
    pub w_hg: Matrix2,
    pub b_g: Matrix2,
    pub w_xf: Matrix2,
    pub w_hf: Matrix2,
    pub b_f: Matrix2,
    pub w_xo: Matrix2,
    pub w_ho: Matrix2,
    pub b_o: Matrix2,
}

impl LstmParams {
    /// Seeded uniform init scaled by 1/sqrt(fan-in); the forget-gate
    /// bias starts at 1 so early training does not erase the cell.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let lx = 1.0 / (input_dim as f64).sqrt();
        let lh = 1.0 / (hidden_dim as f64).sqrt();
        let mut mk = |rows: usize, cols: usize, limit: f64| {
            let mut m = Matrix2::zeros(rows, cols);
            m.fill_uniform(rng, limit);
            m
        };
        let mut p = Self {
            w_xi: mk(hidden_dim, input_dim, lx),
            w_hi: mk(hidden_dim, hidden_dim, lh),
            b_i: Matrix2::zeros(hidden_dim, 1),
            w_xg: mk(hidden_dim, input_dim, lx),
            w_hg: mk(hidden_dim, hidden_dim, lh),
            b_g: Matrix2::zeros(hidden_dim, 1),
            w_xf: mk(hidden_dim, input_dim, lx),
            w_hf: mk(hidden_dim, hidden_dim, lh),
            b_f: Matrix2::zeros(hidden_dim, 1),
            w_xo: mk(hidden_dim, input_dim, lx),
            w_ho: mk(hidden_dim, hidden_dim, lh),
            b_o: Matrix2::zeros(hidden_dim, 1),
        };
        p.b_f.fill(1.0);
        p
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_xi: Matrix2::zeros(hidden_dim, input_dim),
            w_hi: Matrix2::zeros(hidden_dim, hidden_dim),
            b_i: Matrix2::zeros(hidden_dim, 1),
            w_xg: Matrix2::zeros(hidden_dim, input_dim),
            w_hg: Matrix2::zeros(hidden_dim, hidden_dim),
            b_g: Matrix2::zeros(hidden_dim, 1),
            w_xf: Matrix2::zeros(hidden_dim, input_dim),
            w_hf: Matrix2::zeros(hidden_dim, hidden_dim),
            b_f: Matrix2::zeros(hidden_dim, 1),
            w_xo: Matrix2::zeros(hidden_dim, input_dim),
            w_ho: Matrix2::zeros(hidden_dim, hidden_dim),
            b_o: Matrix2::zeros(hidden_dim, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xi.rows()
    }

    /// Tensors in a fixed order shared by gradients, the optimizer, and
    /// serialization.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix2)> {
        vec![
            ("w_xi", &self.w_xi),
            ("w_hi", &self.w_hi),
            ("b_i", &self.b_i),
            ("w_xg", &self.w_xg),
            ("w_hg", &self.w_hg),
            ("b_g", &self.b_g),
            ("w_xf", &self.w_xf),
            ("w_hf", &self.w_hf),
            ("b_f", &self.b_f),
            ("w_xo", &self.w_xo),
            ("w_ho", &self.w_ho),
            ("b_o", &self.b_o),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix2)> {
        vec![
            ("w_xi", &mut self.w_xi),
            ("w_hi", &mut self.w_hi),
            ("b_i", &mut self.b_i),
            ("w_xg", &mut self.w_xg),
            ("w_hg", &mut self.w_hg),
            ("b_g", &mut self.b_g),
            ("w_xf", &mut self.w_xf),
            ("w_hf", &mut self.w_hf),
            ("b_f", &mut self.b_f),
            ("w_xo", &mut self.w_xo),
            ("w_ho", &mut self.w_ho),
            ("b_o", &mut self.b_o),
        ]
    }

    fn check_input(&self, x: &[f64], op: &'static str) -> Result<(), SeqModelError> {
        if x.len() != self.input_dim() {
            return Err(SeqModelError::ShapeMismatch {
                op,
                expected: format!("input of {}", self.input_dim()),
                got: format!("{}", x.len()),
            });
        }
        Ok(())
    }
}

/// Hidden and cell state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Gate activations and states cached for one step's backward pass.
#[derive(Clone, Debug)]
pub(super) struct StepCache {
    pub(super) x: Vec<f64>,
    pub(super) i: Vec<f64>,
    pub(super) g: Vec<f64>,
    pub(super) f: Vec<f64>,
    pub(super) o: Vec<f64>,
    pub(super) c: Vec<f64>,
    pub(super) h: Vec<f64>,
}

/// Unrolled forward pass: initial state plus one cache per step.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    h0: Vec<f64>,
    c0: Vec<f64>,
    steps: Vec<StepCache>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, k: usize) -> &[f64] {
        &self.steps[k].h
    }

    pub fn last_state(&self) -> LstmState {
        match self.steps.last() {
            Some(s) => LstmState {
                h: s.h.clone(),
                c: s.c.clone(),
            },
            None => LstmState {
                h: self.h0.clone(),
                c: self.c0.clone(),
            },
        }
    }
}

fn gates(params: &LstmParams, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = params.hidden_dim();
    let mut ai = params.b_i.data().to_vec();
    let mut ag = params.b_g.data().to_vec();
    let mut af = params.b_f.data().to_vec();
    let mut ao = params.b_o.data().to_vec();
    params.w_xi.matvec_acc(x, &mut ai);
    params.w_hi.matvec_acc(h_prev, &mut ai);
    params.w_xg.matvec_acc(x, &mut ag);
    params.w_hg.matvec_acc(h_prev, &mut ag);
    params.w_xf.matvec_acc(x, &mut af);
    params.w_hf.matvec_acc(h_prev, &mut af);
    params.w_xo.matvec_acc(x, &mut ao);
    params.w_ho.matvec_acc(h_prev, &mut ao);
    for j in 0..hd {
        ai[j] = sigmoid(ai[j]);
        ag[j] = ag[j].tanh();
        af[j] = sigmoid(af[j]);
        ao[j] = sigmoid(ao[j]);
    }
    (ai, ag, af, ao)
}

/// One cell update: `i,g,f,o` gates from the current input and previous
/// hidden state, then `c' = f*c + i*g` and `h' = o * tanh(c')`.
pub fn lstm_step(
    params: &LstmParams,
    x: &[f64],
    state: &LstmState,
) -> Result<LstmState, SeqModelError> {
    params.check_input(x, "lstm_step")?;
    if state.h.len() != params.hidden_dim() || state.c.len() != params.hidden_dim() {
        return Err(SeqModelError::ShapeMismatch {
            op: "lstm_step",
            expected: format!("state of {}", params.hidden_dim()),
            got: format!("{}/{}", state.h.len(), state.c.len()),
        });
    }
    let cache = lstm_step_traced(params, x.to_vec(), &state.h, &state.c)?;
    Ok(LstmState {
        h: cache.h,
        c: cache.c,
    })
}

/// One step with all activations retained; the building block of both
/// the unrolled forward pass and the attention decoder's manual loop.
pub(super) fn lstm_step_traced(
    params: &LstmParams,
    x: Vec<f64>,
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<StepCache, SeqModelError> {
    params.check_input(&x, "lstm_step")?;
    let hd = params.hidden_dim();
    let (i, g, f, o) = gates(params, &x, h_prev);
    let mut c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for j in 0..hd {
        c[j] = f[j] * c_prev[j] + i[j] * g[j];
        h[j] = o[j] * c[j].tanh();
    }
    Ok(StepCache { x, i, g, f, o, c, h })
}

/// Runs the cell over a whole sequence from the given initial state,
/// caching every activation for [`lstm_backward`].
pub fn lstm_forward(
    params: &LstmParams,
    xs: &[Vec<f64>],
    init: &LstmState,
) -> Result<LstmTrace, SeqModelError> {
    if xs.is_empty() {
        return Err(SeqModelError::EmptyInput);
    }
    let mut trace = LstmTrace {
        h0: init.h.clone(),
        c0: init.c.clone(),
        steps: Vec::with_capacity(xs.len()),
    };
    for x in xs {
        let (h_prev, c_prev) = match trace.steps.last() {
            Some(s) => (&s.h[..], &s.c[..]),
            None => (&trace.h0[..], &trace.c0[..]),
        };
        let cache = lstm_step_traced(params, x.clone(), h_prev, c_prev)?;
        trace.steps.push(cache);
    }
    Ok(trace)
}

/// One step of reverse-mode through the cell. `dh` and `dc` are the
/// gradients arriving at this step's outputs; returns (dh_prev, dc_prev)
/// and accumulates parameter gradients into `grads`. When `dx` is given
/// the input gradient is accumulated there (needed for embeddings and
/// attention contexts; plain data inputs skip it).
#[allow(clippy::too_many_arguments)]
pub(super) fn lstm_step_backward(
    params: &LstmParams,
    cache: &StepCache,
    h_prev: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc_in: &[f64],
    grads: &mut LstmParams,
    dx: Option<&mut [f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let hd = params.hidden_dim();
    let mut da_i = vec![0.0; hd];
    let mut da_g = vec![0.0; hd];
    let mut da_f = vec![0.0; hd];
    let mut da_o = vec![0.0; hd];
    let mut dc_prev = vec![0.0; hd];
    for j in 0..hd {
        let tc = cache.c[j].tanh();
        let d_o = dh[j] * tc;
        let dc = dc_in[j] + dh[j] * cache.o[j] * tanh_prime_from_output(tc);
        let d_i = dc * cache.g[j];
        let d_g = dc * cache.i[j];
        let d_f = dc * c_prev[j];
        dc_prev[j] = dc * cache.f[j];
        da_i[j] = d_i * sigmoid_prime_from_output(cache.i[j]);
        da_g[j] = d_g * tanh_prime_from_output(cache.g[j]);
        da_f[j] = d_f * sigmoid_prime_from_output(cache.f[j]);
        da_o[j] = d_o * sigmoid_prime_from_output(cache.o[j]);
    }
    grads.w_xi.add_outer(&da_i, &cache.x, 1.0);
    grads.w_xg.add_outer(&da_g, &cache.x, 1.0);
    grads.w_xf.add_outer(&da_f, &cache.x, 1.0);
    grads.w_xo.add_outer(&da_o, &cache.x, 1.0);
    grads.w_hi.add_outer(&da_i, h_prev, 1.0);
    grads.w_hg.add_outer(&da_g, h_prev, 1.0);
    grads.w_hf.add_outer(&da_f, h_prev, 1.0);
    grads.w_ho.add_outer(&da_o, h_prev, 1.0);
    for j in 0..hd {
        grads.b_i.data_mut()[j] += da_i[j];
        grads.b_g.data_mut()[j] += da_g[j];
        grads.b_f.data_mut()[j] += da_f[j];
        grads.b_o.data_mut()[j] += da_o[j];
    }
    let mut dh_prev = vec![0.0; hd];
    params.w_hi.matvec_t_acc(&da_i, &mut dh_prev);
    params.w_hg.matvec_t_acc(&da_g, &mut dh_prev);
    params.w_hf.matvec_t_acc(&da_f, &mut dh_prev);
    params.w_ho.matvec_t_acc(&da_o, &mut dh_prev);
    if let Some(dx) = dx {
        params.w_xi.matvec_t_acc(&da_i, dx);
        params.w_xg.matvec_t_acc(&da_g, dx);
        params.w_xf.matvec_t_acc(&da_f, dx);
        params.w_xo.matvec_t_acc(&da_o, dx);
    }
    (dh_prev, dc_prev)
}

/// Backpropagation through time over a cached forward pass. `dh_seq`
/// carries the loss gradient reaching each step's hidden output from
/// outside the recurrence; the recurrent contributions are added
/// internally. Accumulates into `grads`; optionally fills per-step
/// input gradients and returns (dh0, dc0) for an upstream initial-state
/// map.
pub fn lstm_backward(
    params: &LstmParams,
    trace: &LstmTrace,
    dh_seq: &[Vec<f64>],
    grads: &mut LstmParams,
    mut dxs: Option<&mut [Vec<f64>]>,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(dh_seq.len(), trace.len(), "dh per step");
    let hd = params.hidden_dim();
    let mut dh_carry = vec![0.0; hd];
    let mut dc_carry = vec![0.0; hd];
    for k in (0..trace.len()).rev() {
        let cache = &trace.steps[k];
        let (h_prev, c_prev) = if k == 0 {
            (&trace.h0[..], &trace.c0[..])
        } else {
            (&trace.steps[k - 1].h[..], &trace.steps[k - 1].c[..])
        };
        let mut dh = dh_seq[k].clone();
        for j in 0..hd {
            dh[j] += dh_carry[j];
        }
        let dx = dxs.as_mut().map(|v| &mut v[k][..]);
        let (dh_prev, dc_prev) =
            lstm_step_backward(params, cache, h_prev, c_prev, &dh, &dc_carry, grads, dx);
        dh_carry = dh_prev;
        dc_carry = dc_prev;
    }
    (dh_carry, dc_carry)
}

/// Forward and backward traces of the bidirectional encoder. The
/// backward trace's step `j` consumed source step `T-1-j`.
#[derive(Clone, Debug)]
pub struct BiTrace {
    pub fwd: LstmTrace,
    pub bwd: LstmTrace,
}

impl BiTrace {
    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwd.is_empty()
    }

    /// Concatenated per-step state `[h_fwd_k ; h_bwd_k]`.
    pub fn hseq(&self) -> Vec<Vec<f64>> {
        let t = self.len();
        (0..t)
            .map(|k| {
                let mut row = self.fwd.hidden(k).to_vec();
                row.extend_from_slice(self.bwd.hidden(t - 1 - k));
                row
            })
            .collect()
    }

    pub fn h_fwd_last(&self) -> &[f64] {
        self.fwd.hidden(self.fwd.len() - 1)
    }

    /// Backward state at source step 1 = the backward trace's last step.
    pub fn h_bwd_first(&self) -> &[f64] {
        self.bwd.hidden(self.bwd.len() - 1)
    }
}

pub(super) fn encode_bidirectional_trace(
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: &[Vec<f64>],
) -> Result<BiTrace, SeqModelError> {
    if xs.is_empty() {
        return Err(SeqModelError::EmptyInput);
    }
    let init_f = LstmState::zeros(fwd.hidden_dim());
    let init_b = LstmState::zeros(bwd.hidden_dim());
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    Ok(BiTrace {
        fwd: lstm_forward(fwd, xs, &init_f)?,
        bwd: lstm_forward(bwd, &rev, &init_b)?,
    })
}

/// Runs both directions over the input. Returns the per-step
/// concatenation `[h_fwd_k ; h_bwd_k]` (T x 2H), the forward state at
/// the last step, and the backward state at the first step; the latter
/// two feed the whole-sequence classification head.
#[allow(clippy::type_complexity)]
pub fn encode_bidirectional(
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>), SeqModelError> {
    let trace = encode_bidirectional_trace(fwd, bwd, xs)?;
    Ok((
        trace.hseq(),
        trace.h_fwd_last().to_vec(),
        trace.h_bwd_first().to_vec(),
    ))
}

/// Backward through both encoder directions. `d_hseq` is the gradient
/// on each concatenated step; `d_fwd_last` / `d_bwd_first` are extra
/// gradients on the two head outputs. Accumulates into the gradient
/// params.
#[allow(clippy::too_many_arguments)]
pub(super) fn encode_backward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    trace: &BiTrace,
    d_hseq: &[Vec<f64>],
    d_fwd_last: &[f64],
    d_bwd_first: &[f64],
    g_fwd: &mut LstmParams,
    g_bwd: &mut LstmParams,
) {
    let t = trace.len();
    let hf = fwd.hidden_dim();
    let hb = bwd.hidden_dim();
    let mut dh_f: Vec<Vec<f64>> = (0..t).map(|k| d_hseq[k][..hf].to_vec()).collect();
    for j in 0..hf {
        dh_f[t - 1][j] += d_fwd_last[j];
    }
    // Backward-direction step j consumed source step t-1-j, so its dh
    // sequence is the reversed tail of each concatenated gradient.
    let mut dh_b: Vec<Vec<f64>> = (0..t).map(|j| d_hseq[t - 1 - j][hf..].to_vec()).collect();
    for j in 0..hb {
        dh_b[t - 1][j] += d_bwd_first[j];
    }
    lstm_backward(fwd, &trace.fwd, &dh_f, g_fwd, None);
    lstm_backward(bwd, &trace.bwd, &dh_b, g_bwd, None);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, finite_diff_grad};

    fn rand_xs(t: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..d).map(|_| rng.normal() * 0.8).collect())
            .collect()
    }

    #[test]
    fn zero_parameter_step_is_analytic() {
        let p = LstmParams::zeros(3, 2);
        let s = lstm_step(&p, &[1.0, -2.0, 0.5], &LstmState::zeros(2)).unwrap();
        // All gates sit at sigma(0)=0.5, g at tanh(0)=0, so c'=0, h'=0.
        assert_eq!(s.c, vec![0.0, 0.0]);
        assert_eq!(s.h, vec![0.0, 0.0]);

        let c0 = [0.8, -1.2];
        let s = lstm_step(
            &p,
            &[0.0; 3],
            &LstmState {
                h: vec![0.0; 2],
                c: c0.to_vec(),
            },
        )
        .unwrap();
        for j in 0..2 {
            assert!((s.c[j] - c0[j] / 2.0).abs() < 1e-15);
            assert!((s.h[j] - 0.5 * (c0[j] / 2.0).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn step_rejects_dim_mismatch() {
        let p = LstmParams::zeros(3, 2);
        assert!(lstm_step(&p, &[1.0, 2.0], &LstmState::zeros(2)).is_err());
        assert!(lstm_step(&p, &[1.0, 2.0, 3.0], &LstmState::zeros(5)).is_err());
    }

    #[test]
    fn forward_trace_matches_repeated_steps() {
        let mut rng = SeededRng::new(9);
        let p = LstmParams::init(4, 3, &mut rng);
        let xs = rand_xs(6, 4, &mut rng);
        let trace = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        let mut state = LstmState::zeros(3);
        for (k, x) in xs.iter().enumerate() {
            state = lstm_step(&p, x, &state).unwrap();
            assert_eq!(state.h, trace.hidden(k));
        }
        assert_eq!(trace.last_state().h, state.h);
    }

    #[test]
    fn empty_sequence_is_error() {
        let p = LstmParams::zeros(2, 2);
        assert!(matches!(
            lstm_forward(&p, &[], &LstmState::zeros(2)),
            Err(SeqModelError::EmptyInput)
        ));
        assert!(encode_bidirectional(&p, &p, &[]).is_err());
    }

    /// Flattens params, runs a scalar loss, and compares BPTT gradients
    /// against central differences entry by entry.
    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = SeededRng::new(77);
        let d = 2;
        let h = 3;
        let t = 5;
        let p0 = LstmParams::init(d, h, &mut rng);
        let xs = rand_xs(t, d, &mut rng);
        // Loss: sum over steps of dot(w, h_k) with a fixed probe vector,
        // nonlinear in every parameter through the recurrence.
        let probe: Vec<f64> = (0..h).map(|_| rng.normal()).collect();

        let flat = |p: &LstmParams| -> Vec<f64> {
            p.tensors().iter().flat_map(|(_, m)| m.data().to_vec()).collect()
        };
        let unflat = |vals: &[f64]| -> LstmParams {
            let mut p = p0.clone();
            let mut at = 0usize;
            for (_, m) in p.tensors_mut() {
                let n = m.data().len();
                m.data_mut().copy_from_slice(&vals[at..at + n]);
                at += n;
            }
            p
        };

        let loss = |p: &LstmParams| -> f64 {
            let tr = lstm_forward(p, &xs, &LstmState::zeros(h)).unwrap();
            (0..t).map(|k| dot(&probe, tr.hidden(k))).sum()
        };

        let trace = lstm_forward(&p0, &xs, &LstmState::zeros(h)).unwrap();
        let dh_seq: Vec<Vec<f64>> = (0..t).map(|_| probe.clone()).collect();
        let mut grads = p0.zeros_like();
        lstm_backward(&p0, &trace, &dh_seq, &mut grads, None);

        let numeric = finite_diff_grad(|v| loss(&unflat(v)), &flat(&p0), 1e-5).unwrap();
        let analytic = flat(&grads);
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst:.3e}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(78);
        let p = LstmParams::init(2, 3, &mut rng);
        let xs = rand_xs(4, 2, &mut rng);
        let probe: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let loss = |flat_x: &[f64]| -> f64 {
            let xs: Vec<Vec<f64>> = flat_x.chunks(2).map(|c| c.to_vec()).collect();
            let tr = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
            (0..4).map(|k| dot(&probe, tr.hidden(k))).sum()
        };
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let numeric = finite_diff_grad(loss, &flat, 1e-5).unwrap();

        let trace = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        let dh_seq: Vec<Vec<f64>> = (0..4).map(|_| probe.clone()).collect();
        let mut grads = p.zeros_like();
        let mut dxs: Vec<Vec<f64>> = vec![vec![0.0; 2]; 4];
        lstm_backward(&p, &trace, &dh_seq, &mut grads, Some(&mut dxs));
        let analytic: Vec<f64> = dxs.into_iter().flatten().collect();
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-3);
            assert!(rel < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn single_step_bidirectional_uses_same_input_twice() {
        let mut rng = SeededRng::new(21);
        let f = LstmParams::init(3, 2, &mut rng);
        let b = LstmParams::init(3, 2, &mut rng);
        let x = vec![vec![0.3, -0.7, 1.1]];
        let (hseq, h_f, h_b) = encode_bidirectional(&f, &b, &x).unwrap();
        assert_eq!(hseq.len(), 1);
        assert_eq!(hseq[0].len(), 4);
        let sf = lstm_step(&f, &x[0], &LstmState::zeros(2)).unwrap();
        let sb = lstm_step(&b, &x[0], &LstmState::zeros(2)).unwrap();
        assert_eq!(h_f, sf.h);
        assert_eq!(h_b, sb.h);
        assert_eq!(&hseq[0][..2], &sf.h[..]);
        assert_eq!(&hseq[0][2..], &sb.h[..]);
    }

    #[test]
    fn tied_weights_make_directions_mirror_images() {
        let mut rng = SeededRng::new(33);
        let p = LstmParams::init(2, 3, &mut rng);
        let xs = rand_xs(7, 2, &mut rng);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        // With both directions sharing parameters, the forward states of
        // the reversed input equal the backward states of the original,
        // step for step.
        let t_orig = encode_bidirectional_trace(&p, &p, &xs).unwrap();
        let t_rev = encode_bidirectional_trace(&p, &p, &rev).unwrap();
        for k in 0..7 {
            assert_eq!(t_rev.fwd.hidden(k), t_orig.bwd.hidden(k));
        }
    }

    #[test]
    fn output_shape_is_t_by_2h() {
        let mut rng = SeededRng::new(4);
        let f = LstmParams::init(2, 5, &mut rng);
        let b = LstmParams::init(2, 5, &mut rng);
        for t in [1usize, 2, 9] {
            let xs = rand_xs(t, 2, &mut rng);
            let (hseq, _, _) = encode_bidirectional(&f, &b, &xs).unwrap();
            assert_eq!(hseq.len(), t);
            assert!(hseq.iter().all(|r| r.len() == 10));
        }
    }

    #[test]
    fn encoding_is_independent_of_other_samples() {
        let mut rng = SeededRng::new(60);
        let f = LstmParams::init(2, 3, &mut rng);
        let b = LstmParams::init(2, 3, &mut rng);
        let sample = rand_xs(5, 2, &mut rng);
        let unrelated = rand_xs(8, 2, &mut rng);
        let first = encode_bidirectional(&f, &b, &sample).unwrap();
        encode_bidirectional(&f, &b, &unrelated).unwrap();
        let second = encode_bidirectional(&f, &b, &sample).unwrap();
        assert_eq!(first.0, second.0);
        assert_eq!(first.1, second.1);
        assert_eq!(first.2, second.2);
    }

    #[test]
    fn hidden_state_stays_tanh_bounded() {
        let mut rng = SeededRng::new(55);
        let p = LstmParams::init(3, 4, &mut rng);
        let xs = rand_xs(50, 3, &mut rng);
        let tr = lstm_forward(&p, &xs, &LstmState::zeros(4)).unwrap();
        for k in 0..50 {
            assert!(tr.hidden(k).iter().all(|v| v.abs() <= 1.0));
        }
    }
}
