//! Gibbs kernels `K = exp(−c/ε)` and the operator interface the transport
//! solvers use. Only the dense variant lives here; FFT-backed variants are in
//! the `gisot` crate and plug in through [`KernelOperator`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::exp;
use crate::matrix::Matrix;

/// Matrix–vector access to a (possibly implicit) kernel.
pub trait KernelOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `K a`.
    fn apply(&self, a: &[f64]) -> Result<Vec<f64>>;
    /// `Kᵀ a`.
    fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>>;
    /// Materializes the kernel.
    fn to_dense(&self) -> Matrix;
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseKernel {
    k: Matrix,
}

impl DenseKernel {
    /// Elementwise `exp(−c/ε)`.
    pub fn from_cost(cost: &Matrix, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        let mut k = cost.clone();
        k.as_mut_slice()
            .iter_mut()
            .for_each(|c| *c = exp(-*c / epsilon));
        Ok(Self { k })
    }

    pub fn from_matrix(k: Matrix) -> Result<Self> {
        if k.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(
                "kernel entries must be nonnegative".into(),
            ));
        }
        Ok(Self { k })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.k
    }
}

impl KernelOperator for DenseKernel {
    fn rows(&self) -> usize {
        self.k.rows()
    }

    fn cols(&self) -> usize {
        self.k.cols()
    }

    fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.k.matvec(a)
    }

    fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.k.matvec_transpose(a)
    }

    fn to_dense(&self) -> Matrix {
        self.k.clone()
    }
}

impl<T: KernelOperator + ?Sized> KernelOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(a)
    }
    fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>> {
        (**self).apply_transpose(a)
    }
    fn to_dense(&self) -> Matrix {
        (**self).to_dense()
    }
}

/// `cᵢⱼ = f(xᵢ, yⱼ)`.
pub fn cost_matrix(x: &[f64], y: &[f64], f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_fn(x.len(), y.len(), |i, j| f(x[i], y[j]))
}

/// `cᵢⱼ = (xᵢ − yⱼ)²`.
pub fn squared_distance_cost(x: &[f64], y: &[f64]) -> Matrix {
    cost_matrix(x, y, |a, b| (a - b) * (a - b))
}

/// Squared geodesic distance on a circle of the given period.
pub fn torus_squared_distance_cost(x: &[f64], period: f64) -> Matrix {
    cost_matrix(x, x, |a, b| {
        let d = torus_distance(a, b, period);
        d * d
    })
}

fn torus_distance(a: f64, b: f64, period: f64) -> f64 {
    let mut d = (a - b).abs() % period;
    if d > period - d {
        d = period - d;
    }
    d
}

/// Spacing of an equidistant grid, or `None` when some gap deviates from the
/// mean spacing by more than `tol`.
pub fn equidistant_spacing(grid: &[f64], tol: f64) -> Option<f64> {
    if grid.len() < 2 {
        return None;
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(h > 0.0) {
        return None;
    }
    grid.windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= tol)
        .then_some(h)
}

/// Length-`2M` symmetric embedding `(0, d₂², …, d_M², 0, d_M², …, d₂²)` of the
/// first row of a squared-distance Toeplitz matrix.
pub fn toeplitz_embedding(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut s = vec![0.0; 2 * m];
    for k in 1..m {
        let d = grid[k] - grid[0];
        s[k] = d * d;
        s[2 * m - k] = d * d;
    }
    s
}

/// First row of the circulant squared-distance matrix on a torus grid with
/// spacing `h`, using the wrap-around distance `min(k, M − k)·h`.
pub fn circulant_first_row(m: usize, h: f64) -> Vec<f64> {
    (0..m)
        .map(|k| {
            let d = k.min(m - k) as f64 * h;
            d * d
        })
        .collect()
}

/// Dense circulant matrix `Kᵢⱼ = exp(−t_{(j−i) mod M}/ε)`.
pub fn circulant_dense(first_row: &[f64], epsilon: f64) -> Result<DenseKernel> {
    let m = first_row.len();
    let cost = Matrix::from_fn(m, m, |i, j| first_row[(j + m - i) % m]);
    DenseKernel::from_cost(&cost, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cost_gives_ones_and_large_epsilon_tends_to_one() {
        let k = DenseKernel::from_cost(&Matrix::zeros(2, 3), 0.1).unwrap();
        assert!(k.matrix().as_slice().iter().all(|v| *v == 1.0));
        let x = [0.0, 0.5, 1.0];
        let k = DenseKernel::from_cost(&squared_distance_cost(&x, &x), 1e6).unwrap();
        assert!(k
            .matrix()
            .as_slice()
            .iter()
            .all(|v| (*v - 1.0).abs() < 1e-6));
        assert!(DenseKernel::from_cost(&Matrix::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn grid_checks() {
        assert_eq!(equidistant_spacing(&[0.0, 0.5, 1.0], 1e-12), Some(0.5));
        assert_eq!(equidistant_spacing(&[0.0, 0.4, 1.0], 1e-12), None);
        assert_eq!(
            toeplitz_embedding(&[0.0, 1.0, 2.0]),
            vec![0.0, 1.0, 4.0, 0.0, 4.0, 1.0]
        );
        assert_eq!(circulant_first_row(4, 1.0), vec![0.0, 1.0, 4.0, 1.0]);
    }

    #[test]
    fn circulant_matches_geodesic_cost() {
        let m = 6;
        let h = 1.0 / m as f64;
        let x: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
        let a = circulant_dense(&circulant_first_row(m, h), 0.3).unwrap();
        let b = DenseKernel::from_cost(&torus_squared_distance_cost(&x, 1.0), 0.3).unwrap();
        for (u, v) in a.matrix().as_slice().iter().zip(b.matrix().as_slice()) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
