//! Dense row-major f64 arrays. Everything numeric in this crate is 64-bit;
//! the gradient checks the test suite relies on are not meaningful at f32.

use crate::error::{Error, Result};
use crate::par;

/// Dense array of f64 values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        assert!(shape.iter().all(|&d| d >= 1), "shape entries must be >= 1");
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut a = Self::zeros(shape);
        a.data.fill(value);
        a
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        assert!(shape.iter().all(|&d| d >= 1), "shape entries must be >= 1");
        Array {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Single scalar value of a one-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on array with {} elements", self.numel());
        self.data[0]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Array {
        Array::from_vec(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise a + b.
    pub fn add(&self, other: &Array) -> Array {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Array {
            shape: self.shape.clone(),
            data,
        }
    }

    /// In-place self += scale * other.
    pub fn axpy(&mut self, scale: f64, other: &Array) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn transposed2(&self) -> Array {
        assert_eq!(self.rank(), 2, "transpose needs rank 2");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Array::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        out
    }
}

/// Work size above which matmul fans out over rows.
const MATMUL_PAR_FLOPS: usize = 1 << 15;

/// C = A (m x k) * B (k x n). Rows of C are computed independently, each with
/// a fixed-order inner loop, so the result is identical with and without the
/// parallel feature.
pub fn matmul(a: &Array, b: &Array) -> Array {
    assert_eq!(a.rank(), 2, "matmul lhs must be rank 2");
    assert_eq!(b.rank(), 2, "matmul rhs must be rank 2");
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul inner dims {} vs {}", k, k2);
    let mut out = Array::zeros(&[m, n]);
    if m * n * k >= MATMUL_PAR_FLOPS {
        let ad = &a.data;
        let bd = &b.data;
        par::for_each_row_chunk(&mut out.data, n, 1, |row, chunk| {
            matmul_row(ad, bd, row, k, n, chunk);
        });
    } else {
        matmul_serial_into(a, b, &mut out);
    }
    out
}

/// Sequential matmul used as the bench baseline for the parallel path.
pub fn matmul_serial(a: &Array, b: &Array) -> Array {
    let (m, n) = (a.shape[0], b.shape[1]);
    let mut out = Array::zeros(&[m, n]);
    matmul_serial_into(a, b, &mut out);
    out
}

fn matmul_serial_into(a: &Array, b: &Array, out: &mut Array) {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    for i in 0..m {
        matmul_row(&a.data, &b.data, i, k, n, &mut out.data[i * n..(i + 1) * n]);
    }
}

#[inline]
fn matmul_row(a: &[f64], b: &[f64], row: usize, k: usize, n: usize, out_row: &mut [f64]) {
    for kk in 0..k {
        let av = a[row * k + kk];
        if av == 0.0 {
            continue;
        }
        let brow = &b[kk * n..(kk + 1) * n];
        for (o, bv) in out_row.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// Row-wise softmax of a rank-2 array. Rows sum to one within 1e-12.
pub fn softmax_rows(m: &Array) -> Result<Array> {
    if m.rank() != 2 {
        return Err(Error::Shape(format!(
            "softmax_rows needs rank 2, got shape {:?}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numeric(
            "softmax_rows input contains non-finite entries".into(),
        ));
    }
    Ok(softmax_rows_unchecked(m))
}

/// Softmax without the finite check, for callers that already validated.
pub(crate) fn softmax_rows_unchecked(m: &Array) -> Array {
    let (rows, cols) = (m.shape[0], m.shape[1]);
    let mut out = Array::zeros(&[rows, cols]);
    for r in 0..rows {
        let row = &m.data[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out_row = &mut out.data[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_serial() {
        let a = Array::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        assert_eq!(matmul_serial(&a, &b).data(), c.data());
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let m = Array::zeros(&[2, 2]);
        let s = softmax_rows(&m).unwrap();
        for &v in s.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_hand_example() {
        let m = Array::from_vec(&[1, 2], vec![0.0, 3.0_f64.ln()]);
        let s = softmax_rows(&m).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        for c in [-1e6, -3.5, 0.0, 42.0, 7e5] {
            let m = Array::from_vec(&[1, 2], vec![c, c]);
            let s = softmax_rows(&m).unwrap();
            assert!((s.data()[0] - 0.5).abs() < 1e-12);
            assert!((s.data()[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Array::from_vec(&[1, 2], vec![f64::NAN, 0.0]);
        assert!(softmax_rows(&m).is_err());
        let m = Array::from_vec(&[1, 2], vec![f64::INFINITY, 0.0]);
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Array::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.transposed2().transposed2(), a);
    }
}
