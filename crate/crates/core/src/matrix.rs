//! Dense row-major matrices and the measure/plan newtypes built on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
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

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Aᵀ y`.
    pub fn matvec_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        Ok(out)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_cols(&self, keep: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, keep.len(), |i, j| self.get(i, keep[j]))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Vertically stacks matrices with equal column counts.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in blocks {
            check_len(cols, m.cols)?;
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }
}

/// Nonnegative weights with optional, strictly increasing grid coordinates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    weights: Vec<f64>,
    coords: Option<Vec<f64>>,
}

impl Histogram {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!(
                "histogram weight {w} is negative or not finite"
            )));
        }
        Ok(Self {
            weights,
            coords: None,
        })
    }

    pub fn on_grid(weights: Vec<f64>, coords: Vec<f64>) -> Result<Self> {
        check_len(weights.len(), coords.len())?;
        if coords.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "grid coordinates must be strictly increasing".into(),
            ));
        }
        let mut h = Self::new(weights)?;
        h.coords = Some(coords);
        Ok(h)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> Option<&[f64]> {
        self.coords.as_deref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Rescales the weights to unit total mass.
    pub fn normalized(mut self) -> Result<Self> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::InvalidInput(
                "cannot normalize a histogram with zero mass".into(),
            ));
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        Ok(self)
    }
}

/// Dense nonnegative transport plan.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CouplingPlan(Matrix);

impl CouplingPlan {
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(
                "plan entries must be nonnegative".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub(crate) fn from_matrix_unchecked(entries: Matrix) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.0.row_sums()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        self.0.col_sums()
    }

    /// `diag(mu)^{-1} π`; rows with zero mass stay zero.
    pub fn row_normalized(&self, mu: &[f64]) -> Result<Matrix> {
        check_len(self.0.rows(), mu.len())?;
        let mut out = self.0.clone();
        for (i, &m) in mu.iter().enumerate() {
            let row = out.row_mut(i);
            if m > 0.0 {
                row.iter_mut().for_each(|v| *v /= m);
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_values() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        assert_eq!(
            a.matvec_transpose(&[1.0, 1.0]).unwrap(),
            vec![5.0, 7.0, 9.0]
        );
        assert_eq!(a.col_sums(), vec![5.0, 7.0, 9.0]);
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn histogram_rejects_bad_input() {
        assert!(Histogram::new(vec![0.5, -0.1]).is_err());
        assert!(Histogram::on_grid(vec![0.5, 0.5], vec![1.0, 1.0]).is_err());
        assert!(Histogram::on_grid(vec![0.5], vec![1.0, 2.0]).is_err());
        let h = Histogram::on_grid(vec![1.0, 3.0], vec![0.0, 1.0])
            .unwrap()
            .normalized()
            .unwrap();
        assert_eq!(h.weights(), &[0.25, 0.75]);
    }
}
