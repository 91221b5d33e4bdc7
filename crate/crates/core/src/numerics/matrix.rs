//! Row-major dense `f64` matrix.

use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense row-major matrix of 64-bit reals.
///
/// All reductions run row-major, left-to-right, so repeated evaluation is
/// bit-identical. Entries stay finite after every public operation on
/// finite inputs; constructors reject non-finite data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                op: "Matrix2::from_vec",
                expected: format!("{} entries", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite("Matrix2::from_vec"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Column vector from a slice.
    pub fn col_from(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Matrix product `self * other`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul dims: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.data[i * self.cols + k] * other.data[k * other.cols + j];
                }
                out.data[i * other.cols + j] = acc;
            }
        }
        out
    }

    /// `self * x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dims: {}x{} * {}", self.rows, self.cols, x.len());
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = super::dot(self.row(i), x);
        }
        out
    }

    /// `self * x`, accumulated into `out` (`out += self * x`).
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(self.cols, x.len());
        assert_eq!(self.rows, out.len());
        for i in 0..self.rows {
            out[i] += super::dot(self.row(i), x);
        }
    }

    /// `self^T * x` for a vector `x` of length `rows`, accumulated into `out`.
    pub fn matvec_t_acc(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(self.rows, x.len());
        assert_eq!(self.cols, out.len());
        for i in 0..self.rows {
            let xi = x[i];
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                out[j] += row[j] * xi;
            }
        }
    }

    /// Rank-1 update `self += scale * u * v^T`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        assert_eq!(self.rows, u.len());
        assert_eq!(self.cols, v.len());
        for i in 0..self.rows {
            let s = scale * u[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                row[j] += s * v[j];
            }
        }
    }

    /// `self += scale * other`, elementwise. Shapes must match.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        assert!(self.same_shape(other), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> f64 {
        let mut acc = 0.0;
        for x in &self.data {
            acc += x * x;
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Fill with i.i.d. uniform entries in `[-limit, limit)`.
    pub fn fill_uniform(&mut self, rng: &mut super::SeededRng, limit: f64) {
        for x in &mut self.data {
            *x = (rng.next_f64() * 2.0 - 1.0) * limit;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    /// Naive triple-loop product used as the independent oracle.
    fn matmul_oracle(a: &Matrix2, b: &Matrix2) -> Matrix2 {
        let mut out = Matrix2::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = SeededRng::new(42);
        for _ in 0..20 {
            let mut a = Matrix2::zeros(5, 5);
            let mut b = Matrix2::zeros(5, 5);
            a.fill_uniform(&mut rng, 2.0);
            b.fill_uniform(&mut rng, 2.0);
            let got = a.matmul(&b);
            let want = matmul_oracle(&a, &b);
            // Same summation order means bit-equality, not just closeness.
            assert_eq!(got.data(), want.data());
        }
    }

    #[test]
    fn matvec_transpose_consistency() {
        let mut rng = SeededRng::new(3);
        let mut a = Matrix2::zeros(4, 6);
        a.fill_uniform(&mut rng, 1.0);
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let mut yt = vec![0.0; 6];
        a.matvec_t_acc(&x, &mut yt);
        // Compare against explicit transpose-then-multiply.
        let mut at = Matrix2::zeros(6, 4);
        for i in 0..4 {
            for j in 0..6 {
                at.set(j, i, a.get(i, j));
            }
        }
        let want = at.matvec(&x);
        for (g, w) in yt.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_bad_shape_and_nan() {
        assert!(Matrix2::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix2::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }
}
