//! Central-difference gradient oracle.

use super::NumericsError;

/// Numeric gradient of `f` at `params` by central differences:
/// `(f(p + h e_i) - f(p - h e_i)) / (2h)` per coordinate.
///
/// `f` must be a pure function of the parameter vector; any non-finite
/// evaluation aborts with an error.
pub fn finite_diff_grad<F>(
    mut f: F,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite_diff_grad requires h > 0");
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work);
        work[i] = orig - h;
        let fm = f(&work);
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NumericsError::NonFinite("finite_diff_grad"));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.3], 1e-5).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn product_function() {
        let g = finite_diff_grad(|p| p[0] * p[1], &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-6);
        assert!((g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_evaluation_is_error() {
        let r = finite_diff_grad(|p| p[0].ln(), &[0.0], 1e-5);
        assert!(r.is_err());
    }
}
