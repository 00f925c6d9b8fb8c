//! Periodic cell grids and the n-dimensional DFT helpers used throughout.
//!
//! All fields share a single row-major cell ordering: the last axis varies
//! fastest. Frequencies are the centered integer frequencies scaled by
//! `2*pi/n` along each axis; the Nyquist row (even `n`) keeps the positive
//! sign and is treated like any other nonzero frequency.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dims: Vec<usize>,
}

impl PeriodicGrid {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::invalid(format!(
                "grid must be 2D or 3D, got {} dims",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("every grid dimension must be >= 2"));
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total cell count N.
    pub fn n(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major linear index of a multi-index.
    pub fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for (c, d) in coords.iter().zip(&self.dims) {
            idx = idx * d + c;
        }
        idx
    }

    /// Multi-index of a row-major linear index.
    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim()];
        for ax in (0..self.ndim()).rev() {
            out[ax] = idx % self.dims[ax];
            idx /= self.dims[ax];
        }
        out
    }

    /// Centered integer frequency for position `i` along an axis of length `n`.
    pub fn int_freq(i: usize, n: usize) -> f64 {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    }

    /// Frequency vector xi at a linear index, components `2*pi*f_k/n_k`.
    pub fn freq_vector(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .iter()
            .zip(&self.dims)
            .map(|(&i, &n)| 2.0 * PI * Self::int_freq(i, n) / n as f64)
            .collect()
    }

    /// Linear index of the cell shifted by `offset` with periodic wrap.
    pub fn shifted_index(&self, idx: usize, offset: &[usize]) -> usize {
        let c = self.coords(idx);
        let shifted: Vec<usize> = c
            .iter()
            .zip(offset)
            .zip(&self.dims)
            .map(|((&ci, &oi), &n)| (ci + oi) % n)
            .collect();
        self.index(&shifted)
    }
}

/// Unnormalized forward / `1/N`-normalized inverse DFT over a periodic grid.
pub struct NdFft {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn new(grid: &PeriodicGrid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid
            .dims()
            .iter()
            .map(|&n| planner.plan_fft(n, FftDirection::Forward))
            .collect();
        let inverse = grid
            .dims()
            .iter()
            .map(|&n| planner.plan_fft(n, FftDirection::Inverse))
            .collect();
        Self {
            dims: grid.dims().to_vec(),
            forward,
            inverse,
        }
    }

    fn n(&self) -> usize {
        self.dims.iter().product()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let ndim = self.dims.len();
        for ax in 0..ndim {
            let n = self.dims[ax];
            // stride between consecutive elements along `ax` in row-major order
            let stride: usize = self.dims[ax + 1..].iter().product();
            let fft = if inverse {
                &self.inverse[ax]
            } else {
                &self.forward[ax]
            };
            let mut line = vec![Complex64::default(); n];
            let outer: usize = self.dims[..ax].iter().product();
            let block = stride * n;
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * block + s;
                    for i in 0..n {
                        line[i] = data[base + i * stride];
                    }
                    fft.process(&mut line);
                    for i in 0..n {
                        data[base + i * stride] = line[i];
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.n() as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut c, false);
        c
    }

    pub fn forward_inplace(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub fn inverse_inplace(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// Inverse transform discarding the (numerically tiny) imaginary parts.
    pub fn inverse_real(&self, data: &[Complex64]) -> Vec<f64> {
        let mut c = data.to_vec();
        self.transform(&mut c, true);
        c.iter().map(|v| v.re).collect()
    }
}
