//! Dense linear algebra, activations, a seedable PRNG, Adam, and a
//! finite-difference gradient oracle.
//!
//! All arithmetic is `f64` with a fixed summation order (row-major,
//! left-to-right) so that results are bit-identical across runs and
//! worker counts.

mod adam;
mod fd;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamState};
pub use fd::finite_diff_grad;
pub use matrix::Matrix2;
pub use rng::SeededRng;

use thiserror::Error;

/// Errors raised by the numeric kernel.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Logistic sigmoid, elementwise over a scalar.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid expressed through its output value.
#[inline]
pub fn sigmoid_prime_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Derivative of tanh expressed through its output value.
#[inline]
pub fn tanh_prime_from_output(t: f64) -> f64 {
    1.0 - t * t
}

/// Numerically stable softmax (max-subtraction before exponentiation).
///
/// The output is a probability vector: entries are non-negative and sum
/// to 1 within 1e-12.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::EmptyInput("softmax"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite("softmax"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(out)
}

/// In-place softmax over a mutable slice; panics on empty input.
/// Hot-path variant of [`softmax`] for internal use.
pub fn softmax_in_place(v: &mut [f64]) {
    assert!(!v.is_empty(), "softmax over empty slice");
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Dot product with fixed left-to-right accumulation.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// `y += s * x`, elementwise.
#[inline]
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += s * x[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[0.3, -1.2]).unwrap();
        let b = softmax(&[0.3 + 7.5, -1.2 + 7.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_log_counts() {
        // softmax([ln 1, ln 2, ln 3]) = [1/6, 2/6, 3/6]
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        assert!((p[0] - 1.0 / 6.0).abs() < 1e-14);
        assert!((p[1] - 2.0 / 6.0).abs() < 1e-14);
        assert!((p[2] - 3.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_sums_to_one_on_random_inputs() {
        let mut rng = SeededRng::new(7);
        for _ in 0..200 {
            let v: Vec<f64> = (0..17).map(|_| rng.normal() * 50.0).collect();
            let p = softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn activation_values() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(0f64.tanh(), 0.0);
        assert!((sigmoid(1.0) - 0.73105857863).abs() < 1e-10);
        // sigma(-x) = 1 - sigma(x)
        for x in [-3.0, -0.7, 0.2, 5.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
        assert!(sigmoid(40.0) <= 1.0 && sigmoid(40.0) > 0.99);
        assert!(sigmoid(-40.0) >= 0.0 && sigmoid(-40.0) < 1e-12);
        assert!(sigmoid(-40.0) > 0.0);
    }
}
