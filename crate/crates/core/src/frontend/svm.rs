//! Linear SVM trained with Pegasos (stochastic subgradient descent on
//! the hinge loss with step 1/(lambda*t)). The bias term is left out of
//! the regularizer. Feature standardization is fitted at train time and
//! stored with the model so callers always pass raw feature vectors.

use serde::{Deserialize, Serialize};

use super::{FeatureVector, FrontendError, FEATURE_DIMS};
use crate::numerics::SeededRng;

pub const SVM_LAMBDA: f64 = 1e-4;
pub const SVM_EPOCHS: usize = 50;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LinearSvm {
    fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    /// Mean hinge loss plus (lambda/2)||w||^2 over a raw dataset.
    pub fn objective(&self, xs: &[FeatureVector], ys: &[i8]) -> f64 {
        let mut z = vec![0.0; self.w.len()];
        let mut hinge = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.standardize(x.as_slice(), &mut z);
            let m = dot(&self.w, &z) + self.b;
            hinge += (1.0 - y as f64 * m).max(0.0);
        }
        hinge / xs.len() as f64
            + 0.5 * self.lambda * self.w.iter().map(|v| v * v).sum::<f64>()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Train on labelled feature vectors; labels are +1/-1. Requires both
/// classes to be present. The epoch-level visit order is a seeded
/// shuffle, so identical inputs and seed give identical models.
pub fn svm_train(
    xs: &[FeatureVector],
    ys: &[i8],
    lambda: f64,
    epochs: usize,
    rng: &mut SeededRng,
) -> Result<LinearSvm, FrontendError> {
    if xs.is_empty() {
        return Err(FrontendError::EmptyInput("svm training set"));
    }
    if xs.len() != ys.len() {
        return Err(FrontendError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if !ys.contains(&1) || !ys.contains(&-1) {
        return Err(FrontendError::SingleClass);
    }
    assert!(lambda > 0.0 && epochs >= 1);

    let d = FEATURE_DIMS;
    let n = xs.len();
    let mut mean = vec![0.0; d];
    for x in xs {
        for i in 0..d {
            mean[i] += x.0[i];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut std = vec![0.0; d];
    for x in xs {
        for i in 0..d {
            let dlt = x.0[i] - mean[i];
            std[i] += dlt * dlt;
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt().max(1e-9);
    }

    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..d).map(|i| (x.0[i] - mean[i]) / std[i]).collect())
        .collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0u64;
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            t += 1;
            // Shifted 1/(lambda*t) schedule: same asymptotics, but the
            // first steps stay below 1 so the unregularized bias cannot
            // blow up.
            let eta = 1.0 / (lambda * t as f64 + 1.0);
            let y = ys[i] as f64;
            let margin = y * (dot(&w, &z[i]) + b);
            let shrink = 1.0 - eta * lambda;
            if margin < 1.0 {
                for j in 0..d {
                    w[j] = shrink * w[j] + eta * y * z[i][j];
                }
                b += eta * y;
            } else {
                for wj in &mut w {
                    *wj *= shrink;
                }
            }
        }
    }

    let model = LinearSvm {
        w,
        b,
        lambda,
        mean,
        std,
    };
    debug_assert!(model.objective(xs, ys) <= 1.0 + 1e-9, "worse than w=0");
    Ok(model)
}

/// Signed decision for one raw feature vector: (label, margin) where
/// label is +1 for margin >= 0 and -1 otherwise.
pub fn svm_predict(model: &LinearSvm, x: &FeatureVector) -> Result<(i8, f64), FrontendError> {
    if model.w.is_empty() {
        return Err(FrontendError::UntrainedModel);
    }
    if model.w.len() != x.0.len() {
        return Err(FrontendError::LengthMismatch {
            left: model.w.len(),
            right: x.0.len(),
        });
    }
    let mut z = vec![0.0; model.w.len()];
    model.standardize(x.as_slice(), &mut z);
    let margin = dot(&model.w, &z) + model.b;
    Ok((if margin >= 0.0 { 1 } else { -1 }, margin))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two gaussian blobs separated along a couple of feature axes,
    /// embedded in the full 41-dimensional space.
    fn blobs(n_per: usize, gap: f64, seed: u64) -> (Vec<FeatureVector>, Vec<i8>) {
        let mut rng = SeededRng::new(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for cls in [1i8, -1] {
            for _ in 0..n_per {
                let mut f = [0.0; FEATURE_DIMS];
                for v in f.iter_mut() {
                    *v = rng.normal() * 0.3;
                }
                f[0] += cls as f64 * gap;
                f[9] -= cls as f64 * gap * 0.5;
                xs.push(FeatureVector(f));
                ys.push(cls);
            }
        }
        (xs, ys)
    }

    #[test]
    fn separable_data_classifies_perfectly() {
        let (xs, ys) = blobs(80, 3.0, 11);
        let mut rng = SeededRng::new(1);
        let m = svm_train(&xs, &ys, SVM_LAMBDA, SVM_EPOCHS, &mut rng).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            let (label, _) = svm_predict(&m, x).unwrap();
            assert_eq!(label, y);
        }
    }

    #[test]
    fn objective_no_worse_than_zero_model() {
        let (xs, ys) = blobs(60, 1.0, 7);
        let mut rng = SeededRng::new(2);
        let m = svm_train(&xs, &ys, SVM_LAMBDA, SVM_EPOCHS, &mut rng).unwrap();
        // w=0, b=0 has objective exactly 1 (every point inside the margin).
        assert!(m.objective(&xs, &ys) <= 1.0 + 1e-9);
    }

    #[test]
    fn stronger_regularization_shrinks_weights() {
        let (xs, ys) = blobs(60, 2.0, 5);
        let mut norms = Vec::new();
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let mut rng = SeededRng::new(3);
            let m = svm_train(&xs, &ys, lambda, SVM_EPOCHS, &mut rng).unwrap();
            norms.push(m.w.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        for w in norms.windows(2) {
            assert!(w[1] < w[0], "norms not decreasing: {norms:?}");
        }
    }

    #[test]
    fn duplicated_dataset_same_objective_and_decisions() {
        let (xs, ys) = blobs(50, 2.5, 9);
        let mut xs2 = xs.clone();
        xs2.extend(xs.iter().cloned());
        let mut ys2 = ys.clone();
        ys2.extend(ys.iter().cloned());

        let mut rng = SeededRng::new(4);
        let m = svm_train(&xs, &ys, SVM_LAMBDA, SVM_EPOCHS, &mut rng).unwrap();
        // Averaged objective is invariant under duplicating the dataset.
        let a = m.objective(&xs, &ys);
        let b = m.objective(&xs2, &ys2);
        assert!((a - b).abs() < 1e-12);

        let mut rng2 = SeededRng::new(4);
        let m2 = svm_train(&xs2, &ys2, SVM_LAMBDA, SVM_EPOCHS, &mut rng2).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(svm_predict(&m2, x).unwrap().0, y);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let (xs, _) = blobs(10, 1.0, 1);
        let ys = vec![1i8; xs.len()];
        let mut rng = SeededRng::new(1);
        assert!(matches!(
            svm_train(&xs, &ys, SVM_LAMBDA, 5, &mut rng),
            Err(FrontendError::SingleClass)
        ));
    }

    #[test]
    fn untrained_model_rejects_prediction() {
        let m = LinearSvm {
            w: vec![],
            b: 0.0,
            lambda: SVM_LAMBDA,
            mean: vec![],
            std: vec![],
        };
        let x = FeatureVector([0.0; FEATURE_DIMS]);
        assert!(matches!(
            svm_predict(&m, &x),
            Err(FrontendError::UntrainedModel)
        ));
    }

    #[test]
    fn margin_zero_on_hyperplane() {
        let mut m = LinearSvm {
            w: vec![0.0; FEATURE_DIMS],
            b: 0.0,
            lambda: SVM_LAMBDA,
            mean: vec![0.0; FEATURE_DIMS],
            std: vec![1.0; FEATURE_DIMS],
        };
        m.w[0] = 1.0;
        let x = FeatureVector([0.0; FEATURE_DIMS]);
        let (label, margin) = svm_predict(&m, &x).unwrap();
        assert_eq!(margin, 0.0);
        assert_eq!(label, 1);
    }

    #[test]
    fn same_seed_same_model() {
        let (xs, ys) = blobs(40, 1.5, 6);
        let mut r1 = SeededRng::new(77);
        let mut r2 = SeededRng::new(77);
        let m1 = svm_train(&xs, &ys, SVM_LAMBDA, 10, &mut r1).unwrap();
        let m2 = svm_train(&xs, &ys, SVM_LAMBDA, 10, &mut r2).unwrap();
        assert_eq!(m1.w, m2.w);
        assert_eq!(m1.b, m2.b);
    }
}
