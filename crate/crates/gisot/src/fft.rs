//! Gibbs kernels applied through FFTs on equidistant grids.
//!
//! On an equidistant line grid the squared-distance kernel is Toeplitz, so
//! `K a` is a linear convolution: embed the first row in a circulant matrix
//! of size `2M`, zero-pad `a`, and multiply spectra. On a torus grid the
//! kernel is already circulant and no padding is needed. Neither variant
//! stores the `M × M` matrix.

use std::fmt;
use std::sync::Arc;

use gisot_core::kernel::{
    circulant_first_row, equidistant_spacing, squared_distance_cost, toeplitz_embedding,
    KernelOperator,
};
use gisot_core::{DenseKernel, Error, Matrix, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Largest spacing deviation still treated as equidistant.
pub const GRID_TOL: f64 = 1e-12;

/// Outputs smaller than this multiple of the FFT roundoff bound are
/// recomputed by a direct sum, so every entry keeps about `1/NOISE_GUARD`
/// relative accuracy however widely the input spans magnitudes.
pub const NOISE_GUARD: f64 = 1e10;

/// Cyclic convolution `y = IFFT(L ⊙ FFT(pad(a)))`, truncated to `m` entries.
#[derive(Clone)]
pub struct FftConvolution {
    m: usize,
    column: Vec<f64>,
    column_norm: f64,
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FftConvolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftConvolution")
            .field("m", &self.m)
            .field("len", &self.spectrum.len())
            .finish()
    }
}

impl FftConvolution {
    /// `column` holds `c_r` with `(K a)_i = Σ_j c_{(i − j) mod n} a_j`.
    fn new(m: usize, column: &[f64]) -> Self {
        let n = column.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spectrum: Vec<Complex64> = column.iter().map(|&c| Complex64::new(c, 0.0)).collect();
        forward.process(&mut spectrum);
        Self {
            m,
            column: column.to_vec(),
            column_norm: column.iter().map(|c| c * c).sum::<f64>().sqrt(),
            spectrum,
            forward,
            inverse,
        }
    }

    fn run(&self, a: &[f64], conjugate: bool) -> Result<Vec<f64>> {
        if a.len() != self.m {
            return Err(Error::Dimension {
                expected: self.m,
                got: a.len(),
            });
        }
        let n = self.spectrum.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &v) in buf.iter_mut().zip(a) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= if conjugate { s.conj() } else { *s };
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        let mut out: Vec<f64> = buf[..self.m].iter().map(|c| c.re * scale).collect();

        // FFT roundoff is absolute: about eps · log n · ‖a‖ · ‖c‖ per entry
        let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let noise = 4.0 * f64::EPSILON * ((n as f64).log2() + 1.0) * a_norm * self.column_norm;
        let floor = noise * NOISE_GUARD;
        for (i, y) in out.iter_mut().enumerate() {
            if *y < floor {
                *y = self.direct(a, i, conjugate);
            }
        }
        Ok(out)
    }

    /// One output entry by direct summation.
    fn direct(&self, a: &[f64], i: usize, transpose: bool) -> f64 {
        let n = self.column.len();
        a.iter()
            .enumerate()
            .map(|(j, &aj)| {
                let r = if transpose {
                    (j + n - i) % n
                } else {
                    (i + n - j) % n
                };
                self.column[r] * aj
            })
            .sum()
    }
}

/// `K = exp(−c/ε)` in one of three storage schemes.
#[derive(Debug, Clone)]
pub enum GibbsKernel {
    Dense(DenseKernel),
    /// Equidistant line grid; spectrum of the length-`2M` circulant embedding.
    Toeplitz(FftConvolution),
    /// Equidistant torus grid; spectrum of the length-`M` first column.
    Circulant(FftConvolution),
}

impl GibbsKernel {
    pub fn dense(cost: &Matrix, epsilon: f64) -> Result<Self> {
        DenseKernel::from_cost(cost, epsilon).map(Self::Dense)
    }

    /// Squared-distance kernel on an equidistant line grid.
    pub fn toeplitz(grid: &[f64], epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if grid.len() == 1 {
            return Ok(Self::Toeplitz(FftConvolution::new(1, &[1.0])));
        }
        if equidistant_spacing(grid, GRID_TOL).is_none() {
            return Err(Error::UnsupportedGrid(
                "Toeplitz FFT needs an equidistant grid".into(),
            ));
        }
        let column: Vec<f64> = toeplitz_embedding(grid)
            .iter()
            .map(|s| (-s / epsilon).exp())
            .collect();
        Ok(Self::Toeplitz(FftConvolution::new(grid.len(), &column)))
    }

    /// Circulant kernel from the squared distances of its first row.
    pub fn circulant(first_row: &[f64], epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let m = first_row.len();
        if m == 0 {
            return Err(Error::InvalidInput("empty first row".into()));
        }
        // Kᵢⱼ = k_{(j − i) mod M}, so the convolution column is c_r = k_{(−r) mod M}
        let column: Vec<f64> = (0..m)
            .map(|r| (-first_row[(m - r) % m] / epsilon).exp())
            .collect();
        Ok(Self::Circulant(FftConvolution::new(m, &column)))
    }

    /// Squared geodesic kernel on `m` equispaced points of a circle of length `period`.
    pub fn torus(m: usize, period: f64, epsilon: f64) -> Result<Self> {
        if m == 0 || period.is_nan() || period <= 0.0 {
            return Err(Error::InvalidInput(
                "torus grid needs points and a positive period".into(),
            ));
        }
        Self::circulant(&circulant_first_row(m, period / m as f64), epsilon)
    }

    /// Toeplitz FFT when the grid is equidistant, dense otherwise.
    pub fn line(grid: &[f64], epsilon: f64) -> Result<Self> {
        match Self::toeplitz(grid, epsilon) {
            Err(Error::UnsupportedGrid(_)) => {
                Self::dense(&squared_distance_cost(grid, grid), epsilon)
            }
            other => other,
        }
    }

    pub fn is_fft(&self) -> bool {
        !matches!(self, Self::Dense(_))
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Dense(_) => "dense",
            Self::Toeplitz(_) => "toeplitz-fft",
            Self::Circulant(_) => "circulant-fft",
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput("epsilon must be positive".into()))
    }
}

impl KernelOperator for GibbsKernel {
    fn rows(&self) -> usize {
        match self {
            Self::Dense(k) => k.rows(),
            Self::Toeplitz(c) | Self::Circulant(c) => c.m,
        }
    }

    fn cols(&self) -> usize {
        match self {
            Self::Dense(k) => k.cols(),
            Self::Toeplitz(c) | Self::Circulant(c) => c.m,
        }
    }

    fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Dense(k) => k.apply(a),
            Self::Toeplitz(c) | Self::Circulant(c) => c.run(a, false),
        }
    }

    fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Dense(k) => k.apply_transpose(a),
            Self::Toeplitz(c) | Self::Circulant(c) => c.run(a, true),
        }
    }

    fn to_dense(&self) -> Matrix {
        match self {
            Self::Dense(k) => k.matrix().clone(),
            _ => {
                let m = self.cols();
                let mut out = Matrix::zeros(m, m);
                let mut e = vec![0.0; m];
                for j in 0..m {
                    e[j] = 1.0;
                    let col = self.apply(&e).expect("length matches");
                    for (i, v) in col.into_iter().enumerate() {
                        out.set(i, j, v);
                    }
                    e[j] = 0.0;
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vector_gives_first_column() {
        let grid: Vec<f64> = (0..8).map(|i| i as f64 * 0.125).collect();
        let k = GibbsKernel::toeplitz(&grid, 0.1).unwrap();
        let mut e = vec![0.0; 8];
        e[0] = 1.0;
        let col = k.apply(&e).unwrap();
        for (i, v) in col.iter().enumerate() {
            let d = grid[i] - grid[0];
            assert!((v - (-d * d / 0.1).exp()).abs() < 1e-14);
        }
        assert!(k.apply(&[0.0; 8]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uneven_grid_is_rejected_or_falls_back() {
        let grid = [0.0, 0.1, 0.3];
        assert!(matches!(
            GibbsKernel::toeplitz(&grid, 0.1),
            Err(Error::UnsupportedGrid(_))
        ));
        assert!(!GibbsKernel::line(&grid, 0.1).unwrap().is_fft());
    }

    #[test]
    fn circulant_keeps_constants() {
        let k = GibbsKernel::torus(6, 1.0, 0.05).unwrap();
        let y = k.apply(&[1.0; 6]).unwrap();
        assert!(y.iter().all(|v| (v - y[0]).abs() < 1e-14));
    }

    #[test]
    fn small_outputs_keep_relative_accuracy() {
        let m = 40;
        let k = GibbsKernel::torus(m, 2.0 * std::f64::consts::PI, 0.1).unwrap();
        let dense = gisot_core::kernel::circulant_dense(
            &circulant_first_row(m, 2.0 * std::f64::consts::PI / m as f64),
            0.1,
        )
        .unwrap();
        // 30 orders of magnitude between neighbouring regions
        let a: Vec<f64> = (0..m)
            .map(|i| if i < m / 2 { 1e15 } else { 1e-15 })
            .collect();
        for (transpose, (x, y)) in [
            (false, (k.apply(&a), dense.apply(&a))),
            (true, (k.apply_transpose(&a), dense.apply_transpose(&a))),
        ] {
            for (u, v) in x.unwrap().iter().zip(y.unwrap()) {
                assert!(
                    (u - v).abs() <= 1e-9 * v,
                    "transpose {transpose}: {u} vs {v}"
                );
            }
        }
    }

    #[test]
    fn dimension_is_checked() {
        let k = GibbsKernel::torus(4, 1.0, 0.05).unwrap();
        assert!(k.apply(&[1.0; 3]).is_err());
    }
}
