use crate::error::{Error, Result};

/// Dense 2-D matrix of f64, row-major. The universal value carrier for
/// embeddings, weights and activations.
///
/// Every public operation validates that the result is finite, so NaN/Inf
/// surfaces as an error at the op that produced it instead of propagating.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "from_vec",
                format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    /// Construct from nested row slices. Intended for tests and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::invalid("from_rows", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        // i-k-j order keeps the inner loop contiguous in both operands.
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[kk * m..(kk + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        let out = Matrix::from_vec_unchecked(n, m, out);
        out.check_finite("matmul")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_vec_unchecked(self.cols, self.rows, out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let m = Matrix::from_vec_unchecked(self.rows, self.cols, data);
        m.check_finite(op)?;
        Ok(m)
    }

    pub fn scale(&self, c: f64) -> Result<Matrix> {
        let m = self.map(|v| v * c);
        m.check_finite("scale")?;
        Ok(m)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Stack matrices vertically. All operands must share a column count.
    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts
            .iter()
            .find(|p| p.rows > 0)
            .map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.rows > 0 && p.cols != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix::from_vec_unchecked(rows, cols, data))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Matrix> {
        if start + len > self.rows {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {}..{} out of bounds for {} rows", start, start + len, self.rows),
            ));
        }
        Ok(Matrix::from_vec_unchecked(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        ))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Max absolute entrywise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^-|x|) avoids overflow on large inputs
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization to zero mean and unit variance (epsilon 1e-5).
pub fn layer_norm_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Row-wise softmax with max subtraction, so huge logits cannot overflow.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_matches_triple_loop_reference() {
        // Naive reference: out[i][j] = sum_k a[i][k] * b[k][j]
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]).unwrap();
        let mut reference = Matrix::zeros(2, 1);
        for i in 0..2 {
            for j in 0..1 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                reference.set(i, j, acc);
            }
        }
        assert_eq!(reference, Matrix::from_rows(&[&[2.0], &[4.0]]).unwrap());
        assert_eq!(a.matmul(&b).unwrap(), reference);
    }

    #[test]
    fn matmul_zero_case() {
        let z = Matrix::zeros(2, 2);
        let b = Matrix::from_rows(&[&[5.0, 6.0, 7.0], &[8.0, 9.0, 10.0]]).unwrap();
        assert_eq!(z.matmul(&b).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("2x3"), "message should carry shapes: {err}");
    }

    #[test]
    fn softmax_uniform_row() {
        let m = Matrix::from_rows(&[&[0.0, 0.0, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        for j in 0..3 {
            assert!((s.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let m = Matrix::from_rows(&[&[0.0, 2.0f64.ln()]]).unwrap();
        let s = softmax_rows(&m);
        assert!((s.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_no_overflow_on_large_logits() {
        let m = Matrix::from_rows(&[&[1000.0, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.get(0, 1) < 1e-12);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn silu_at_zero() {
        assert_eq!(silu(0.0), 0.0);
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let ln = layer_norm_rows(&m);
        let row = ln.row(0);
        let mean = row.iter().sum::<f64>() / 3.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        // variance comes out at var/(var+eps), just shy of 1
        assert!((var - 1.0).abs() < 1e-4, "var = {var}");
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn concat_and_slice_rows_roundtrip() {
        let a = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let c = Matrix::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(c.rows(), 3);
        assert_eq!(c.slice_rows(0, 1).unwrap(), a);
        assert_eq!(c.slice_rows(1, 2).unwrap(), b);
    }
}
