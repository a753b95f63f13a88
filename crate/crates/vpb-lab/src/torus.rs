//! Fourier modes on the 2π-periodic torus 𝕋ᵈ (d ∈ {1, 2}) and zero-padded
//! transforms between mode coefficients and physical grid values.
//!
//! Coefficients are volume normalized: f(x) = Σ_n f̂(n) e^{i n·x}, so
//! ‖f‖² = (2π)^{-d} ∫ |f|² dx = Σ_n |f̂(n)|².

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Truncated mode set `|n|_∞ ≤ n_max` with a padded transform grid.
#[derive(Clone)]
pub struct Torus {
    dim: usize,
    n_max: usize,
    modes: Vec<[i64; 2]>,
    grid: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Torus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Torus").field("dim", &self.dim).field("n_max", &self.n_max).field("grid", &self.grid).finish()
    }
}

impl Torus {
    /// Modes in lexicographic order (n₁ outer, n₂ inner); the padded grid has
    /// `3·n_max + 1` points per axis so quadratic products are alias free.
    pub fn new(dim: usize, n_max: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::validation("dim", "spatial dimension must be 1 or 2"));
        }
        if n_max == 0 {
            return Err(Error::validation("modes", "mode cut must be at least 1"));
        }
        let nm = n_max as i64;
        let mut modes = Vec::new();
        for a in -nm..=nm {
            if dim == 1 {
                modes.push([a, 0]);
            } else {
                for b in -nm..=nm {
                    modes.push([a, b]);
                }
            }
        }
        let grid = 3 * n_max + 1;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid);
        let inverse = planner.plan_fft_inverse(grid);
        Ok(Torus { dim, n_max, modes, grid, forward, inverse })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn modes(&self) -> &[[i64; 2]] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mode(&self, i: usize) -> [i64; 2] {
        self.modes[i]
    }

    /// Flat index of mode `n`, if inside the truncation.
    pub fn index_of(&self, n: [i64; 2]) -> Option<usize> {
        let nm = self.n_max as i64;
        if n[0].abs() > nm || n[1].abs() > nm || (self.dim == 1 && n[1] != 0) {
            return None;
        }
        let side = 2 * nm + 1;
        Some(if self.dim == 1 { (n[0] + nm) as usize } else { ((n[0] + nm) * side + n[1] + nm) as usize })
    }

    pub fn zero_index(&self) -> usize {
        self.index_of([0, 0]).unwrap()
    }

    /// Index of `−n`.
    pub fn neg_index(&self, i: usize) -> usize {
        self.len() - 1 - i
    }

    /// True for the zero mode and for modes whose first nonzero component is positive.
    pub fn is_canonical(&self, i: usize) -> bool {
        i >= self.zero_index()
    }

    /// `|n|²`.
    pub fn norm2(&self, i: usize) -> f64 {
        let n = self.modes[i];
        (n[0] * n[0] + n[1] * n[1]) as f64
    }

    /// Mode as a real vector in ℝ³ (unused components zero).
    pub fn wavevector(&self, i: usize) -> [f64; 3] {
        let n = self.modes[i];
        [n[0] as f64, n[1] as f64, 0.0]
    }

    /// Points per axis of the padded grid.
    pub fn grid_size(&self) -> usize {
        self.grid
    }

    /// Total number of physical grid points.
    pub fn grid_points(&self) -> usize {
        self.grid.pow(self.dim as u32)
    }

    /// Physical coordinates of grid point `p`.
    pub fn point(&self, p: usize) -> [f64; 2] {
        let h = 2.0 * std::f64::consts::PI / self.grid as f64;
        if self.dim == 1 {
            [p as f64 * h, 0.0]
        } else {
            [(p / self.grid) as f64 * h, (p % self.grid) as f64 * h]
        }
    }

    fn slot(&self, n: [i64; 2]) -> usize {
        let m = self.grid as i64;
        let a = n[0].rem_euclid(m) as usize;
        if self.dim == 1 {
            a
        } else {
            a * self.grid + n[1].rem_euclid(m) as usize
        }
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        if self.dim == 1 {
            plan.process(buf);
        } else {
            let m = self.grid;
            for row in buf.chunks_mut(m) {
                plan.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); m];
            for c in 0..m {
                for r in 0..m {
                    col[r] = buf[r * m + c];
                }
                plan.process(&mut col);
                for r in 0..m {
                    buf[r * m + c] = col[r];
                }
            }
        }
    }

    /// Rows of `spec` are fields given by mode coefficients (columns follow mode
    /// order); returns real grid values, one row per field.
    pub fn to_physical(&self, spec: &DMatrix<Complex64>) -> DMatrix<f64> {
        let p = self.grid_points();
        let mut out = DMatrix::zeros(spec.nrows(), p);
        let mut buf = vec![Complex64::new(0.0, 0.0); p];
        for r in 0..spec.nrows() {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for (i, n) in self.modes.iter().enumerate() {
                buf[self.slot(*n)] = spec[(r, i)];
            }
            self.transform(&mut buf, &self.inverse);
            for (j, z) in buf.iter().enumerate() {
                out[(r, j)] = z.re;
            }
        }
        out
    }

    /// Inverse of [`Torus::to_physical`] followed by truncation to the mode set.
    pub fn to_spectral(&self, phys: &DMatrix<f64>) -> DMatrix<Complex64> {
        let p = self.grid_points();
        let scale = 1.0 / p as f64;
        let mut out = DMatrix::zeros(phys.nrows(), self.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); p];
        for r in 0..phys.nrows() {
            for (j, z) in buf.iter_mut().enumerate() {
                *z = Complex64::new(phys[(r, j)], 0.0);
            }
            self.transform(&mut buf, &self.forward);
            for (i, n) in self.modes.iter().enumerate() {
                out[(r, i)] = buf[self.slot(*n)] * scale;
            }
        }
        out
    }
}
