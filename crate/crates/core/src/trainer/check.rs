//! Finite-difference verification of the analytic gradients, tensor by
//! tensor, with a fault-injection mode that proves the harness can
//! actually see a wrong gradient.

use crate::numerics::{finite_diff_grad, Matrix2, SeededRng};
use crate::passwords::{AplPattern, Password, Pin};
use crate::seqmodels::{
    log_prob, InputNorm, Seq2DgtGrads, Seq2DgtHyper, Seq2DgtModel, Seq2PwdGrads, Seq2PwdHyper,
    Seq2PwdModel, Vocab,
};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Seq2Pwd,
    Seq2Dgt,
}

/// Per-tensor comparison of analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(tensor name, max relative error)` in the model's tensor order.
    pub per_tensor: Vec<(String, f64)>,
    /// Tensor whose analytic gradient had one entry zeroed before the
    /// comparison, when fault injection was requested.
    pub fault: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|)`
/// floored here, so near-zero gradients compare by absolute error.
const REL_FLOOR: f64 = 1e-4;
const SEQ_LEN: usize = 20;
const HIDDEN: usize = 8;

/// Builds a small fixed model of the requested kind (hidden width 8,
/// input length 20), runs one loss backward pass, and compares every
/// parameter gradient against central differences.
pub fn grad_check(kind: ModelKind) -> Result<GradCheckReport, TrainError> {
    grad_check_impl(kind, false)
}

/// Same harness with the largest analytic gradient entry zeroed before
/// the comparison; a working harness must report its tensor well above
/// the passing threshold.
pub fn grad_check_faulted(kind: ModelKind) -> Result<GradCheckReport, TrainError> {
    grad_check_impl(kind, true)
}

fn grad_check_impl(kind: ModelKind, fault: bool) -> Result<GradCheckReport, TrainError> {
    let mut rng = SeededRng::new(0x6ead_c4ec);
    match kind {
        ModelKind::Seq2Pwd => {
            let classes: Vec<Password> = (0..5)
                .map(|i| Password::Pin(Pin::from_index(i * 997)))
                .collect();
            let hyper = Seq2PwdHyper {
                input_dim: 6,
                hidden: HIDDEN,
            };
            let model = Seq2PwdModel::init(hyper, classes, InputNorm::identity(6), &mut rng)?;
            let xs = rand_rows(SEQ_LEN, 6, &mut rng);
            let target = 2;

            let mut grads = Seq2PwdGrads::zeros(&model);
            let trace = model.forward_trace(&xs, None)?;
            model.backward(&trace, target, 1.0, &mut grads)?;
            let layout = tensor_layout(&model.named_tensors());
            let mut analytic = flatten(&grads.tensors());

            let base = flatten_named(&model.named_tensors());
            let mut scratch = model.clone();
            let numeric = finite_diff_grad(
                |flat| {
                    write_flat(scratch.tensors_mut(), flat);
                    match scratch.forward_trace(&xs, None) {
                        Ok(t) => -log_prob(t.probs[target]),
                        Err(_) => f64::NAN,
                    }
                },
                &base,
                FD_STEP,
            )?;
            Ok(build_report(&layout, &mut analytic, &numeric, fault))
        }
        ModelKind::Seq2Dgt => {
            let hyper = Seq2DgtHyper {
                input_dim: 6,
                enc_hidden: HIDDEN,
                dec_hidden: HIDDEN,
                attn_dim: 4,
                embed_dim: 4,
            };
            let vocab = Vocab::apl();
            let targets = vocab
                .password_to_symbols(&Password::Apl(AplPattern::new(vec![1, 2, 3, 6]).unwrap()))
                .expect("pattern fits the vocabulary");
            let model = Seq2DgtModel::init(hyper, vocab, InputNorm::identity(6), &mut rng)?;
            let xs = rand_rows(SEQ_LEN, 6, &mut rng);

            let mut grads = Seq2DgtGrads::zeros(&model);
            let trace = model.forward_trace(&xs, &targets, None)?;
            model.backward(&trace, 1.0, &mut grads);
            let layout = tensor_layout(&model.named_tensors());
            let mut analytic = flatten(&grads.tensors());

            let base = flatten_named(&model.named_tensors());
            let mut scratch = model.clone();
            let numeric = finite_diff_grad(
                |flat| {
                    write_flat(scratch.tensors_mut(), flat);
                    match scratch.forward_trace(&xs, &targets, None) {
                        Ok(t) => t.loss(),
                        Err(_) => f64::NAN,
                    }
                },
                &base,
                FD_STEP,
            )?;
            Ok(build_report(&layout, &mut analytic, &numeric, fault))
        }
    }
}

fn rand_rows(t: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect()
}

fn tensor_layout(named: &[(String, &Matrix2)]) -> Vec<(String, usize)> {
    named
        .iter()
        .map(|(n, t)| (n.clone(), t.data().len()))
        .collect()
}

fn flatten(tensors: &[&Matrix2]) -> Vec<f64> {
    let mut flat = Vec::new();
    for t in tensors {
        flat.extend_from_slice(t.data());
    }
    flat
}

fn flatten_named(named: &[(String, &Matrix2)]) -> Vec<f64> {
    let mut flat = Vec::new();
    for (_, t) in named {
        flat.extend_from_slice(t.data());
    }
    flat
}

fn write_flat(tensors: Vec<&mut Matrix2>, flat: &[f64]) {
    let mut off = 0;
    for t in tensors {
        let d = t.data_mut();
        d.copy_from_slice(&flat[off..off + d.len()]);
        off += d.len();
    }
}

fn build_report(
    layout: &[(String, usize)],
    analytic: &mut [f64],
    numeric: &[f64],
    fault: bool,
) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut fault_name = None;
    if fault {
        let idx = analytic
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        analytic[idx] = 0.0;
        let mut off = 0;
        for (name, len) in layout {
            if idx < off + len {
                fault_name = Some(name.clone());
                break;
            }
            off += len;
        }
    }
    let mut per_tensor = Vec::new();
    let mut off = 0;
    for (name, len) in layout {
        let mut worst = 0.0f64;
        for j in off..off + len {
            let a = analytic[j];
            let n = numeric[j];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        per_tensor.push((name.clone(), worst));
        off += len;
    }
    GradCheckReport {
        per_tensor,
        fault: fault_name,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_gradients_check_out() {
        let report = grad_check(ModelKind::Seq2Pwd).unwrap();
        assert_eq!(report.per_tensor.len(), 26);
        assert!(report.fault.is_none());
        assert!(
            report.max_rel_err() < 1e-4,
            "max rel err {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn decoder_gradients_check_out() {
        let report = grad_check(ModelKind::Seq2Dgt).unwrap();
        assert_eq!(report.per_tensor.len(), 44);
        assert!(report.fault.is_none());
        assert!(
            report.max_rel_err() < 1e-4,
            "max rel err {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn fault_injection_is_detected() {
        for kind in [ModelKind::Seq2Pwd, ModelKind::Seq2Dgt] {
            let report = grad_check_faulted(kind).unwrap();
            let fault = report.fault.as_deref().expect("a fault was injected");
            let (_, err) = report
                .per_tensor
                .iter()
                .find(|(n, _)| n == fault)
                .expect("faulted tensor is reported");
            assert!(*err > 1e-2, "{kind:?}: fault in {fault} scored only {err}");
            assert!(report.max_rel_err() > 1e-2);
        }
    }

    #[test]
    fn report_covers_every_tensor_once() {
        let report = grad_check(ModelKind::Seq2Dgt).unwrap();
        let names: Vec<&str> = report.per_tensor.iter().map(|(n, _)| n.as_str()).collect();
        for expected in ["enc_fwd.w_xi", "enc_bwd.b_o", "dec.w_hg", "w_init", "v", "embed", "w_out"] {
            assert!(names.contains(&expected), "missing {expected}");
        }
        let mut dedup = names.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len(), "duplicate tensor names");
    }
}
