//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::{Matrix2, NumericsError};

/// Optimizer state for one set of named parameter tensors.
///
/// `m` and `v` track the first and second gradient moments per tensor,
/// shape-matched to the parameters they follow. `t` counts completed
/// steps and is incremented before bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Matrix2>,
    v: Vec<Matrix2>,
}

impl AdamState {
    /// Defaults: lr 1e-3, beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn ensure_slots(&mut self, params: &[&mut Matrix2]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix2::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
    }

    pub fn moments(&self) -> (&[Matrix2], &[Matrix2]) {
        (&self.m, &self.v)
    }
}

/// One Adam update over matched parameter/gradient tensor lists.
///
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, then the
/// bias-corrected step `p -= lr * m(t) / (sqrt(v(t)) + eps)`.
pub fn adam_step(
    params: &mut [&mut Matrix2],
    grads: &[&Matrix2],
    state: &mut AdamState,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            expected: format!("{} tensors", params.len()),
            got: format!("{}", grads.len()),
        });
    }
    state.ensure_slots(params);
    if state.m.len() != params.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            expected: format!("{} state slots", state.m.len()),
            got: format!("{} tensors", params.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if !p.same_shape(g) || !state.m[i].same_shape(g) {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                expected: format!("{}x{}", p.rows(), p.cols()),
                got: format!("{}x{}", g.rows(), g.cols()),
            });
        }
    }

    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        let gd = g.data();
        for j in 0..pd.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gd[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gd[j] * gd[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pd[j] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_are_identity() {
        let mut p = Matrix2::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let orig = p.clone();
        let g = Matrix2::zeros(2, 2);
        let mut state = AdamState::new(0.05);
        for _ in 0..25 {
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        }
        assert_eq!(p, orig);
        let (m, v) = state.moments();
        assert!(m[0].data().iter().all(|x| *x == 0.0));
        assert!(v[0].data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // theta = 0, grad = 1, lr = 0.1: bias corrections cancel at t = 1,
        // so the step is -lr * 1/(1 + eps) ~ -0.1.
        let mut p = Matrix2::zeros(1, 1);
        let g = Matrix2::from_vec(1, 1, vec![1.0]).unwrap();
        let mut state = AdamState::new(0.1);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert!((p.get(0, 0) + 0.1).abs() < 1e-8, "got {}", p.get(0, 0));
    }

    #[test]
    fn serialized_state_resumes_identically() {
        let mut rng = crate::numerics::SeededRng::new(11);
        let mut p1 = Matrix2::zeros(3, 4);
        p1.fill_uniform(&mut rng, 1.0);
        let mut p2 = p1.clone();
        let mut g = Matrix2::zeros(3, 4);
        g.fill_uniform(&mut rng, 0.3);

        let mut s1 = AdamState::new(0.01);
        adam_step(&mut [&mut p1], &[&g], &mut s1).unwrap();
        // Round-trip state and params through serialization, then take one
        // more step on each side.
        let s_json = serde_json::to_string(&s1).unwrap();
        let p_json = serde_json::to_string(&p1).unwrap();
        let mut s2: AdamState = serde_json::from_str(&s_json).unwrap();
        let mut p2b: Matrix2 = serde_json::from_str(&p_json).unwrap();
        adam_step(&mut [&mut p1], &[&g], &mut s1).unwrap();
        adam_step(&mut [&mut p2b], &[&g], &mut s2).unwrap();
        assert_eq!(p1, p2b);

        // Two engines fed identical steps agree bitwise.
        let mut s3 = AdamState::new(0.01);
        adam_step(&mut [&mut p2], &[&g], &mut s3).unwrap();
        adam_step(&mut [&mut p2], &[&g], &mut s3).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = Matrix2::zeros(2, 2);
        let g = Matrix2::zeros(2, 3);
        let mut state = AdamState::new(0.1);
        assert!(adam_step(&mut [&mut p], &[&g], &mut state).is_err());
    }
}
