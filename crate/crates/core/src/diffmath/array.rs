use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray2")]
pub struct Array2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawArray2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawArray2> for Array2 {
    type Error = Error;

    fn try_from(raw: RawArray2) -> Result<Self> {
        Array2::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Array2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn col_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single entry of a 1×1 matrix.
    pub fn item(&self) -> Option<f64> {
        (self.shape() == (1, 1)).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub(crate) fn matmul_nt(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.cols);
        Self::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// `selfᵀ · other`.
    pub(crate) fn matmul_tn(&self, other: &Self) -> Self {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Self::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Array2) -> Array2 {
    let mut out = m.clone();
    let cols = m.cols();
    for row in out.data.chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Leading and trailing zero-pad widths for a "same" convolution with `taps`
/// taps. For even kernels the extra tap trails the centre.
#[inline]
pub(crate) fn same_padding(taps: usize) -> (usize, usize) {
    ((taps - 1) / 2, taps / 2)
}

/// Single-channel "same" cross-correlation: `out[j] = bias + Σ_m kernel[m]·x[j + m - lead]`.
pub fn conv1d_same(x: &[f64], kernel: &[f64], bias: f64) -> Result<Vec<f64>> {
    check_conv_sizes(x.len(), kernel.len())?;
    let (lead, _) = same_padding(kernel.len());
    Ok((0..x.len())
        .map(|j| {
            let mut acc = bias;
            for (m, &w) in kernel.iter().enumerate() {
                if let Some(&v) = (j + m).checked_sub(lead).and_then(|p| x.get(p)) {
                    acc += w * v;
                }
            }
            acc
        })
        .collect())
}

pub(crate) fn check_conv_sizes(len: usize, taps: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::InputTooShort { len, min: 1 });
    }
    if taps == 0 || taps > 2 * len + 1 {
        return Err(crate::error::config(alloc::format!(
            "kernel of {taps} taps does not fit an input of length {len}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_dot() {
        let a = Array2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(Array2::identity(2).matmul(&a).unwrap(), a);
        let r = Array2::row_vector(&[1.0, 2.0]);
        let c = Array2::col_vector(&[3.0, 4.0]);
        assert_eq!(r.matmul(&c).unwrap().item(), Some(11.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Array2::zeros(2, 3);
        let b = Array2::zeros(2, 3);
        match a.matmul(&b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = Array2::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        let b = Array2::from_fn(4, 2, |i, j| (i + 3 * j) as f64 * 0.5);
        assert_eq!(a.matmul_nt(&b), a.matmul(&b.transpose()).unwrap());
        let c = Array2::from_fn(3, 4, |i, j| (i as f64) - (j as f64));
        assert_eq!(a.matmul_tn(&c), a.transpose().matmul(&c).unwrap());
    }

    #[test]
    fn conv_examples() {
        assert_eq!(
            conv1d_same(&[1.0, 2.0, 3.0], &[1.0], 0.0).unwrap(),
            [1.0, 2.0, 3.0]
        );
        assert_eq!(
            conv1d_same(&[5.0, 5.0, 5.0], &[0.0], 3.0).unwrap(),
            [3.0, 3.0, 3.0]
        );
        assert_eq!(
            conv1d_same(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 0.0).unwrap(),
            [3.0, 5.0, 7.0, 4.0]
        );
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        assert!(matches!(
            conv1d_same(&[1.0], &[1.0; 4], 0.0),
            Err(Error::Config(_))
        ));
        assert!(conv1d_same(&[1.0], &[1.0; 3], 0.0).is_ok());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Array2::row_vector(&[0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Array2::row_vector(&[1000.0, 1000.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Array2::row_vector(&[0.0, 3.0f64.ln()]));
        assert!((s.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn deserialize_rejects_bad_length() {
        let raw = RawArray2 {
            rows: 2,
            cols: 2,
            data: vec![1.0],
        };
        assert!(Array2::try_from(raw).is_err());
    }
}
