//! Batched backpropagation through time with global-norm clipping.
//!
//! Per-sample passes run in parallel, but their results are collected
//! into sample order and reduced sequentially, so the summed gradient
//! is bitwise independent of the worker count.

use rayon::prelude::*;

use crate::numerics::{Matrix2, SeededRng};
use crate::seqmodels::{
    AnyModel, DropoutCtx, Seq2DgtGrads, Seq2DgtModel, Seq2PwdGrads, Seq2PwdModel, SeqModelError,
};

use super::{cross_entropy, Sample, Target, TrainError};

/// What the generic training machinery needs from a model: gradient
/// buffers, tensor access in a stable shared order, and per-sample
/// loss/gradient passes keyed by the sample's target kind.
pub(super) trait TrainableSeq: Clone + Send + Sync {
    type Grads: Send;

    fn zero_grads(&self) -> Self::Grads;
    fn grad_tensors(grads: &Self::Grads) -> Vec<&Matrix2>;
    fn grad_tensors_mut(grads: &mut Self::Grads) -> Vec<&mut Matrix2>;
    fn accumulate(into: &mut Self::Grads, other: &Self::Grads);
    fn params_mut(&mut self) -> Vec<&mut Matrix2>;
    fn check_target(&self, target: &Target) -> Result<(), TrainError>;
    /// Adds `scale` times this sample's loss gradient into `grads` and
    /// returns the unscaled loss.
    fn loss_grad(
        &self,
        sample: &Sample,
        scale: f64,
        dropout: DropoutCtx<'_>,
        grads: &mut Self::Grads,
    ) -> Result<f64, TrainError>;
    /// Evaluation-mode loss (no dropout).
    fn loss(&self, sample: &Sample) -> Result<f64, TrainError>;
}

impl TrainableSeq for Seq2PwdModel {
    type Grads = Seq2PwdGrads;

    fn zero_grads(&self) -> Seq2PwdGrads {
        Seq2PwdGrads::zeros(self)
    }

    fn grad_tensors(grads: &Seq2PwdGrads) -> Vec<&Matrix2> {
        grads.tensors()
    }

    fn grad_tensors_mut(grads: &mut Seq2PwdGrads) -> Vec<&mut Matrix2> {
        grads.tensors_mut()
    }

    fn accumulate(into: &mut Seq2PwdGrads, other: &Seq2PwdGrads) {
        into.add(other);
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix2> {
        self.tensors_mut()
    }

    fn check_target(&self, target: &Target) -> Result<(), TrainError> {
        match target {
            Target::Class(c) if *c < self.classes.len() => Ok(()),
            Target::Class(c) => Err(TrainError::BadLabel {
                got: *c,
                classes: self.classes.len(),
            }),
            Target::Symbols(_) => Err(TrainError::TargetMismatch),
        }
    }

    fn loss_grad(
        &self,
        sample: &Sample,
        scale: f64,
        dropout: DropoutCtx<'_>,
        grads: &mut Seq2PwdGrads,
    ) -> Result<f64, TrainError> {
        let Target::Class(c) = &sample.target else {
            return Err(TrainError::TargetMismatch);
        };
        let trace = self.forward_trace(&sample.xs, dropout)?;
        Ok(self.backward(&trace, *c, scale, grads)?)
    }

    fn loss(&self, sample: &Sample) -> Result<f64, TrainError> {
        let Target::Class(c) = &sample.target else {
            return Err(TrainError::TargetMismatch);
        };
        let trace = self.forward_trace(&sample.xs, None)?;
        cross_entropy(&trace.probs, *c)
    }
}

impl TrainableSeq for Seq2DgtModel {
    type Grads = Seq2DgtGrads;

    fn zero_grads(&self) -> Seq2DgtGrads {
        Seq2DgtGrads::zeros(self)
    }

    fn grad_tensors(grads: &Seq2DgtGrads) -> Vec<&Matrix2> {
        grads.tensors()
    }

    fn grad_tensors_mut(grads: &mut Seq2DgtGrads) -> Vec<&mut Matrix2> {
        grads.tensors_mut()
    }

    fn accumulate(into: &mut Seq2DgtGrads, other: &Seq2DgtGrads) {
        into.add(other);
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix2> {
        self.tensors_mut()
    }

    fn check_target(&self, target: &Target) -> Result<(), TrainError> {
        match target {
            Target::Symbols(ys) if ys.is_empty() => {
                Err(TrainError::Model(SeqModelError::EmptyTarget))
            }
            Target::Symbols(ys) => match ys.iter().find(|y| **y >= self.vocab.size()) {
                Some(y) => Err(TrainError::BadLabel {
                    got: *y,
                    classes: self.vocab.size(),
                }),
                None => Ok(()),
            },
            Target::Class(_) => Err(TrainError::TargetMismatch),
        }
    }

    fn loss_grad(
        &self,
        sample: &Sample,
        scale: f64,
        dropout: DropoutCtx<'_>,
        grads: &mut Seq2DgtGrads,
    ) -> Result<f64, TrainError> {
        let Target::Symbols(ys) = &sample.target else {
            return Err(TrainError::TargetMismatch);
        };
        let trace = self.forward_trace(&sample.xs, ys, dropout)?;
        self.backward(&trace, scale, grads);
        Ok(trace.loss())
    }

    fn loss(&self, sample: &Sample) -> Result<f64, TrainError> {
        let Target::Symbols(ys) = &sample.target else {
            return Err(TrainError::TargetMismatch);
        };
        Ok(self.forward_trace(&sample.xs, ys, None)?.loss())
    }
}

/// Mean-loss gradients over a batch, clipped to `clip_norm`. With
/// `dropout = Some((p, seeds))`, sample `i` applies masks drawn from
/// its own stream seeded by `seeds[i]`, so the result does not depend
/// on scheduling.
pub(super) fn batch_grads<M: TrainableSeq>(
    model: &M,
    batch: &[&Sample],
    clip_norm: f64,
    dropout: Option<(f64, &[u64])>,
) -> Result<(M::Grads, f64), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Empty("batch"));
    }
    if let Some((_, seeds)) = dropout {
        debug_assert_eq!(seeds.len(), batch.len());
    }
    let scale = 1.0 / batch.len() as f64;
    let per: Vec<(f64, M::Grads)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut grads = model.zero_grads();
            let mut rng = dropout.map(|(_, seeds)| SeededRng::new(seeds[i]));
            let ctx: DropoutCtx<'_> = match (dropout, rng.as_mut()) {
                (Some((p, _)), Some(r)) => Some((p, r)),
                _ => None,
            };
            let loss = model.loss_grad(sample, scale, ctx, &mut grads)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { sample: i });
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut per = per.into_iter();
    let (first_loss, mut grads) = per.next().expect("batch checked non-empty");
    let mut loss_sum = first_loss;
    for (loss, g) in per {
        loss_sum += loss;
        M::accumulate(&mut grads, &g);
    }
    clip_grads::<M>(&mut grads, clip_norm)?;
    Ok((grads, loss_sum / batch.len() as f64))
}

fn clip_grads<M: TrainableSeq>(grads: &mut M::Grads, clip_norm: f64) -> Result<(), TrainError> {
    let sq: f64 = M::grad_tensors(grads).iter().map(|t| t.sq_norm()).sum();
    if !sq.is_finite() {
        return Err(TrainError::NonFinite("gradients"));
    }
    let norm = sq.sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for t in M::grad_tensors_mut(grads) {
            t.scale(s);
        }
    }
    Ok(())
}

pub(super) fn mean_loss_impl<M: TrainableSeq>(
    model: &M,
    samples: &[Sample],
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Empty("samples"));
    }
    let mut sum = 0.0;
    for (i, sample) in samples.iter().enumerate() {
        let loss = model.loss(sample)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { sample: i });
        }
        sum += loss;
    }
    Ok(sum / samples.len() as f64)
}

/// Gradients for either model kind, in the model's tensor order.
pub enum AnyGrads {
    Seq2Pwd(Box<Seq2PwdGrads>),
    Seq2Dgt(Box<Seq2DgtGrads>),
}

impl AnyGrads {
    pub fn tensors(&self) -> Vec<&Matrix2> {
        match self {
            AnyGrads::Seq2Pwd(g) => g.tensors(),
            AnyGrads::Seq2Dgt(g) => g.tensors(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.sq_norm())
            .sum::<f64>()
            .sqrt()
    }
}

/// Reverse-mode gradients of the batch's mean loss, global-norm
/// clipped to `clip_norm`. Returns the gradients and the mean loss.
/// The decoder model is teacher forced: each step is conditioned on
/// the true previous symbol, not its own prediction.
pub fn bptt_gradients(
    model: &AnyModel,
    batch: &[Sample],
    clip_norm: f64,
) -> Result<(AnyGrads, f64), TrainError> {
    if !(clip_norm.is_finite() && clip_norm > 0.0) {
        return Err(TrainError::BadConfig(format!(
            "grad_clip_norm must be positive, got {clip_norm}"
        )));
    }
    let refs: Vec<&Sample> = batch.iter().collect();
    match model {
        AnyModel::Seq2Pwd(m) => batch_grads(&**m, &refs, clip_norm, None)
            .map(|(g, l)| (AnyGrads::Seq2Pwd(Box::new(g)), l)),
        AnyModel::Seq2Dgt(m) => batch_grads(&**m, &refs, clip_norm, None)
            .map(|(g, l)| (AnyGrads::Seq2Dgt(Box::new(g)), l)),
    }
}

/// Evaluation-mode mean loss over `samples` (dropout off).
pub fn mean_loss(model: &AnyModel, samples: &[Sample]) -> Result<f64, TrainError> {
    match model {
        AnyModel::Seq2Pwd(m) => mean_loss_impl(&**m, samples),
        AnyModel::Seq2Dgt(m) => mean_loss_impl(&**m, samples),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::passwords::{AplPattern, Password, Pin};
    use crate::seqmodels::{score_sequence, InputNorm, Seq2DgtHyper, Seq2PwdHyper, Vocab};

    fn pins(n: usize) -> Vec<Password> {
        (0..n)
            .map(|i| Password::Pin(Pin::from_index(i * 1111)))
            .collect()
    }

    fn tiny_pwd(seed: u64) -> Seq2PwdModel {
        let mut rng = SeededRng::new(seed);
        Seq2PwdModel::init(
            Seq2PwdHyper {
                input_dim: 2,
                hidden: 3,
            },
            pins(5),
            InputNorm::identity(2),
            &mut rng,
        )
        .unwrap()
    }

    fn tiny_dgt(seed: u64) -> Seq2DgtModel {
        let mut rng = SeededRng::new(seed);
        Seq2DgtModel::init(
            Seq2DgtHyper {
                input_dim: 2,
                enc_hidden: 3,
                dec_hidden: 4,
                attn_dim: 3,
                embed_dim: 2,
            },
            Vocab::apl(),
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

    fn flatten(tensors: &[&Matrix2]) -> Vec<f64> {
        let mut flat = Vec::new();
        for t in tensors {
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

    #[test]
    fn batch_gradients_match_finite_differences() {
        let model = tiny_pwd(21);
        let mut rng = SeededRng::new(22);
        let batch = vec![
            Sample {
                xs: rand_xs(3, 2, &mut rng),
                target: Target::Class(1),
            },
            Sample {
                xs: rand_xs(4, 2, &mut rng),
                target: Target::Class(3),
            },
        ];
        let any = AnyModel::Seq2Pwd(Box::new(model.clone()));
        let (grads, mean) = bptt_gradients(&any, &batch, 1e9).unwrap();
        assert!(mean.is_finite() && mean > 0.0);

        let base = flatten(
            &model
                .named_tensors()
                .into_iter()
                .map(|(_, t)| t)
                .collect::<Vec<_>>(),
        );
        let mut scratch = model.clone();
        let batch_fd = batch.clone();
        let numeric = finite_diff_grad(
            |flat| {
                write_flat(scratch.tensors_mut(), flat);
                batch_fd
                    .iter()
                    .map(|s| scratch.loss(s).unwrap())
                    .sum::<f64>()
                    / batch_fd.len() as f64
            },
            &base,
            1e-5,
        )
        .unwrap();
        let analytic = flatten(&grads.tensors());
        assert_eq!(analytic.len(), numeric.len());
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn duplicated_batch_leaves_mean_gradient_unchanged() {
        let model = tiny_dgt(23);
        let mut rng = SeededRng::new(24);
        let ys = Vocab::apl()
            .password_to_symbols(&Password::Apl(AplPattern::new(vec![1, 2, 3, 6]).unwrap()))
            .unwrap();
        let s1 = Sample {
            xs: rand_xs(4, 2, &mut rng),
            target: Target::Symbols(ys.clone()),
        };
        let s2 = Sample {
            xs: rand_xs(5, 2, &mut rng),
            target: Target::Symbols(ys),
        };
        let any = AnyModel::Seq2Dgt(Box::new(model));
        let (g1, l1) = bptt_gradients(&any, &[s1.clone(), s2.clone()], 1e12).unwrap();
        let (g2, l2) = bptt_gradients(&any, &[s1.clone(), s2.clone(), s1, s2], 1e12).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn saturated_model_has_vanishing_gradient() {
        let mut model = tiny_pwd(25);
        model.b_u.set(2, 0, 200.0);
        let mut rng = SeededRng::new(26);
        let batch = vec![Sample {
            xs: rand_xs(4, 2, &mut rng),
            target: Target::Class(2),
        }];
        let any = AnyModel::Seq2Pwd(Box::new(model));
        let (grads, loss) = bptt_gradients(&any, &batch, 1e9).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
        assert!(grads.global_norm() < 1e-6, "norm {}", grads.global_norm());
    }

    #[test]
    fn clipping_bounds_and_preserves_direction() {
        let model = tiny_pwd(27);
        let mut rng = SeededRng::new(28);
        let batch = vec![Sample {
            xs: rand_xs(5, 2, &mut rng),
            target: Target::Class(0),
        }];
        let any = AnyModel::Seq2Pwd(Box::new(model));
        let (raw, _) = bptt_gradients(&any, &batch, 1e9).unwrap();
        let norm = raw.global_norm();
        assert!(norm > 0.01, "setup needs a non-trivial gradient");
        let clip = 0.01;
        let (clipped, _) = bptt_gradients(&any, &batch, clip).unwrap();
        assert!(clipped.global_norm() <= clip + 1e-9);
        let s = clip / norm;
        for (a, b) in raw.tensors().iter().zip(clipped.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x * s - y).abs() <= 1e-12, "{} vs {y}", x * s);
            }
        }
    }

    #[test]
    fn nan_input_aborts_with_an_error() {
        let model = tiny_pwd(29);
        let batch = vec![Sample {
            xs: vec![vec![0.1, f64::NAN], vec![0.0, 0.0]],
            target: Target::Class(0),
        }];
        let any = AnyModel::Seq2Pwd(Box::new(model));
        assert!(bptt_gradients(&any, &batch, 5.0).is_err());
    }

    #[test]
    fn decoder_mean_loss_matches_sequence_score() {
        let model = tiny_dgt(30);
        let mut rng = SeededRng::new(31);
        let xs = rand_xs(6, 2, &mut rng);
        let ys = model
            .vocab
            .password_to_symbols(&Password::Apl(AplPattern::new(vec![1, 5, 9, 6]).unwrap()))
            .unwrap();
        let score = score_sequence(&model, &xs, &ys).unwrap();
        let any = AnyModel::Seq2Dgt(Box::new(model));
        let ml = mean_loss(
            &any,
            &[Sample {
                xs,
                target: Target::Symbols(ys.clone()),
            }],
        )
        .unwrap();
        assert_eq!(ml, -score / ys.len() as f64);
    }

    #[test]
    fn target_kind_must_match_model() {
        let pwd = AnyModel::Seq2Pwd(Box::new(tiny_pwd(32)));
        let mut rng = SeededRng::new(33);
        let sample = Sample {
            xs: rand_xs(3, 2, &mut rng),
            target: Target::Symbols(vec![0, 9]),
        };
        assert!(matches!(
            bptt_gradients(&pwd, &[sample.clone()], 5.0),
            Err(TrainError::TargetMismatch)
        ));
        assert!(matches!(
            mean_loss(&pwd, &[sample]),
            Err(TrainError::TargetMismatch)
        ));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let any = AnyModel::Seq2Pwd(Box::new(tiny_pwd(34)));
        assert!(matches!(
            bptt_gradients(&any, &[], 5.0),
            Err(TrainError::Empty("batch"))
        ));
        assert!(matches!(
            mean_loss(&any, &[]),
            Err(TrainError::Empty("samples"))
        ));
    }

    #[test]
    fn non_positive_clip_is_a_config_error() {
        let any = AnyModel::Seq2Pwd(Box::new(tiny_pwd(35)));
        let mut rng = SeededRng::new(36);
        let batch = vec![Sample {
            xs: rand_xs(3, 2, &mut rng),
            target: Target::Class(0),
        }];
        assert!(matches!(
            bptt_gradients(&any, &batch, 0.0),
            Err(TrainError::BadConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn clipped_global_norm_is_bounded(seed in 0u64..512, clip in 1e-3f64..2.0) {
            let model = tiny_pwd(seed);
            let mut rng = SeededRng::new(seed ^ 0x9e3779b97f4a7c15);
            let batch = vec![Sample {
                xs: rand_xs(4, 2, &mut rng),
                target: Target::Class((seed % 5) as usize),
            }];
            let any = AnyModel::Seq2Pwd(Box::new(model));
            let (grads, _) = bptt_gradients(&any, &batch, clip).unwrap();
            prop_assert!(grads.global_norm() <= clip + 1e-9);
        }
    }
}
