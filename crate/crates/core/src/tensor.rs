//! Small dense `f64` matrices and the handful of kernels the model needs.
//!
//! Everything here is sized for the tiny per-sample problems of the
//! aggregator (a few tokens, tens of dimensions), so the kernels are plain
//! loops over row-major slices.

use serde::{Deserialize, Serialize};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn mean_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(1.0, self.row(r), &mut out);
        }
        let inv = 1.0 / self.rows as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = x · w + bias` for every row of `x`; `w` is `(x.cols, out_cols)`.
pub fn affine(x: &Matrix, w: &Matrix, bias: Option<&[f64]>) -> Matrix {
    debug_assert_eq!(x.cols, w.rows);
    let mut out = Matrix::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        let o = out.row_mut(r);
        if let Some(b) = bias {
            o.copy_from_slice(b);
        }
        for (k, &xv) in x.row(r).iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, w.row(k), o);
            }
        }
    }
    out
}

/// Backward of [`affine`]: accumulates `dw += xᵀ·dout`, `dbias += Σ dout`,
/// and `dx += dout·wᵀ` (when `dx` is given).
pub fn affine_backward(
    x: &Matrix,
    w: &Matrix,
    dout: &Matrix,
    dw: &mut Matrix,
    dbias: Option<&mut [f64]>,
    dx: Option<&mut Matrix>,
) {
    for r in 0..x.rows {
        let g = dout.row(r);
        for (k, &xv) in x.row(r).iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, g, dw.row_mut(k));
            }
        }
    }
    if let Some(db) = dbias {
        for r in 0..dout.rows {
            axpy(1.0, dout.row(r), db);
        }
    }
    if let Some(dx) = dx {
        for r in 0..x.rows {
            let g = dout.row(r);
            let dxr = dx.row_mut(r);
            for (k, d) in dxr.iter_mut().enumerate() {
                *d += dot(w.row(k), g);
            }
        }
    }
}

/// Row-wise layer normalization. Returns the normalized (pre-affine) row and
/// the inverse standard deviation used.
pub fn normalize(x: &[f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    for (h, v) in xhat.iter_mut().zip(x) {
        *h = (v - mean) * inv_std;
    }
    inv_std
}

/// Given `dxhat` for one normalized row, returns `dx` in place of `dxhat`.
pub fn normalize_backward(xhat: &[f64], inv_std: f64, dxhat: &mut [f64]) {
    let n = xhat.len() as f64;
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dot(dxhat, xhat) / n;
    for (d, h) in dxhat.iter_mut().zip(xhat) {
        *d = inv_std * (*d - mean_d - h * mean_dx);
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_product() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]);
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![3.0, 1.0, -1.0]]);
        let out = affine(&x, &w, Some(&[0.5, 0.5, 0.5]));
        assert_eq!(out.row(0), &[7.5, 2.5, 0.5]);
        assert_eq!(out.row(1), &[-2.5, -0.5, 1.5]);
    }

    #[test]
    fn normalized_row_statistics() {
        let x = [1.0, 4.0, -2.0, 7.0];
        let mut h = [0.0; 4];
        let inv = normalize(&x, &mut h);
        let mean: f64 = h.iter().sum::<f64>() / 4.0;
        let var: f64 = h.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let raw_var = 1.0 / (inv * inv) - LN_EPS;
        assert!((var - raw_var / (raw_var + LN_EPS)).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn normalize_backward_matches_difference() {
        let x = [0.3, -1.2, 2.0, 0.5, 0.9];
        let w = [0.7, -0.2, 1.1, 0.4, -0.9];
        let loss = |x: &[f64]| {
            let mut h = [0.0; 5];
            normalize(x, &mut h);
            dot(&h, &w)
        };
        let mut h = [0.0; 5];
        let inv = normalize(&x, &mut h);
        let mut g = w;
        normalize_backward(&h, inv, &mut g);
        for i in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_and_lse() {
        let mut r = [1000.0, 1000.0];
        softmax_in_place(&mut r);
        assert_eq!(r, [0.5, 0.5]);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
