//! Dense row-major matrix storage used by the tape, the model and the
//! dynamics code. All shapes here are small (node counts and layer
//! widths), so everything is plain scalar loops over a `Vec`.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Contract(format!(
                    "ragged rows: expected {} columns, found {}",
                    c,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, value: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] += value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::dimension("matmul", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == T::zero() {
                    continue;
                }
                let lhs = k * other.cols;
                let dst = i * other.cols;
                for j in 0..other.cols {
                    out.data[dst + j] += a * other.data[lhs + j];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    fn zip_map(&self, other: &Matrix<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(op, self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Matrix<T> {
        self.map(|v| v * factor)
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dimension("add_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of absolute entries (entrywise L1).
    pub fn sum_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc + v.abs())
    }

    /// Sum of squared entries (squared Frobenius / entrywise L2²).
    pub fn sum_squares(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Column means collapsed to a single row.
    pub fn mean_rows(&self) -> Matrix<T> {
        let inv = T::one() / T::of_usize(self.rows.max(1));
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c] += self.at(r, c);
            }
        }
        for v in out.data.iter_mut() {
            *v *= inv;
        }
        out
    }

    /// Copy of columns `start .. start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Matrix<T>> {
        if start + len > self.cols {
            return Err(Error::Contract(format!(
                "column slice {}..{} out of range for width {}",
                start,
                start + len,
                self.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, len);
        for r in 0..self.rows {
            for c in 0..len {
                out.set(r, c, self.at(r, start + c));
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(parts: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of zero matrices".into()))?
            .rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for part in parts {
            if part.rows != rows {
                return Err(Error::dimension("concat_cols", (rows, 0), part.shape()));
            }
            for r in 0..rows {
                for c in 0..part.cols {
                    out.set(r, offset + c, part.at(r, c));
                }
            }
            offset += part.cols;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_leaves_operand_unchanged() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let id = Matrix::<f64>::identity(3);
        assert_eq!(m.matmul(&id).unwrap(), m);
        let id2 = Matrix::<f64>::identity(2);
        assert_eq!(id2.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_expanded_dot_products() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let prod = a.matmul(&b).unwrap();
        assert_eq!(prod, Matrix::from_rows(&[vec![17.0], vec![39.0]]).unwrap());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "unexpected message: {msg}");
    }

    #[test]
    fn sum_abs_matches_hand_sum() {
        let m = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(m.sum_abs(), 6.0);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let m = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap();
        let ones = Matrix::filled(2, 2, 1.0);
        assert_eq!(m.hadamard(&ones).unwrap(), m);
    }

    #[test]
    fn matmul_associativity_on_random_triples() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(7, 0);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 3, 4);
            let b = random_matrix(&mut rng, 4, 2);
            let c = random_matrix(&mut rng, 2, 5);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            let diff = left.sub(&right).unwrap().max_abs();
            assert!(diff / scale < 1e-9, "associativity violated: {diff}");
        }

        fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix<f64> {
            let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            Matrix::from_vec(r, c, data).unwrap()
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let joined = Matrix::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(joined.slice_cols(0, 2).unwrap(), a);
        assert_eq!(joined.slice_cols(2, 1).unwrap(), b);
    }

    #[test]
    fn mean_rows_is_column_average() {
        let m = Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 20.0]]).unwrap();
        let mean = m.mean_rows();
        assert_eq!(mean, Matrix::from_rows(&[vec![2.0, 15.0]]).unwrap());
    }

    #[test]
    fn works_at_f32() {
        let a = Matrix::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::<f32>::identity(2);
        assert_eq!(a.matmul(&b).unwrap(), a);
    }
}
