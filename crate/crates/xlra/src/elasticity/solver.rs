//! FFT fixed-point solver for the periodic strain localization problem:
//! the ground-truth oracle behind every trained surrogate.
//!
//! The basic scheme iterates `eps <- mean - ifft(Gamma * fft(Ctilde eps))`
//! about the homogeneous reference medium; the accelerated scheme applies
//! conjugate gradients to the same operator, which keeps iteration counts
//! manageable at high elastic contrast.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NdFft, PeriodicGrid};

use super::{
    hooke, strain_components, strain_dim, StiffnessField, StiffnessTensor, StrainField,
    VoigtField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Basic,
    /// Krylov (conjugate-gradient) iteration on the same spectral operator.
    Accelerated,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            scheme: Scheme::Basic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

fn voigt_pairs(ndim: usize) -> &'static [(usize, usize)] {
    if ndim == 2 {
        &[(0, 0), (1, 1), (0, 1)]
    } else {
        &[(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
    }
}

fn voigt_mults(ndim: usize) -> &'static [f64] {
    if ndim == 2 {
        &[1.0, 1.0, 2.0]
    } else {
        &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]
    }
}

/// Rows/cols of the 6x6 Voigt matrix acting on the in-plane subspace.
fn plane_map(ndim: usize) -> &'static [usize] {
    if ndim == 2 {
        &[0, 1, 5]
    } else {
        &[0, 1, 2, 3, 4, 5]
    }
}

fn invert_small(k: &[f64], nd: usize) -> Option<Vec<f64>> {
    if nd == 2 {
        let det = k[0] * k[3] - k[1] * k[2];
        if det.abs() < 1e-300 {
            return None;
        }
        Some(vec![k[3] / det, -k[1] / det, -k[2] / det, k[0] / det])
    } else {
        let m = |i: usize, j: usize| k[i * 3 + j];
        let c00 = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
        let c01 = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
        let c02 = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
        let det = m(0, 0) * c00 + m(0, 1) * c01 + m(0, 2) * c02;
        if det.abs() < 1e-300 {
            return None;
        }
        let mut inv = vec![0.0; 9];
        inv[0] = c00 / det;
        inv[3] = c01 / det;
        inv[6] = c02 / det;
        inv[1] = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / det;
        inv[4] = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / det;
        inv[7] = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / det;
        inv[2] = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / det;
        inv[5] = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / det;
        inv[8] = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / det;
        Some(inv)
    }
}

/// Green operator of the reference medium at frequency `xi`, assembled as a
/// `v x v` Voigt matrix mapping stress polarization to strain fluctuation
/// (engineering shear rows doubled). `xi = 0` yields the zero operator.
pub fn gamma_hat(reference: &StiffnessTensor, xi: &[f64]) -> Result<Vec<f64>> {
    let nd = xi.len();
    let v = strain_dim(nd);
    if xi.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; v * v]);
    }
    // acoustic tensor K_ik = C_ijkl xi_j xi_l
    let mut k = vec![0.0; nd * nd];
    for i in 0..nd {
        for kk in 0..nd {
            let mut sum = 0.0;
            for j in 0..nd {
                for l in 0..nd {
                    sum += reference.tensor(i, j, kk, l) * xi[j] * xi[l];
                }
            }
            k[i * nd + kk] = sum;
        }
    }
    let n = invert_small(&k, nd).ok_or_else(|| {
        Error::NotPositiveDefinite("singular acoustic tensor in gamma_hat".into())
    })?;
    let nm = |i: usize, j: usize| n[i * nd + j];

    let pairs = voigt_pairs(nd);
    let mults = voigt_mults(nd);
    let mut g = vec![0.0; v * v];
    for (a, &(i, j)) in pairs.iter().enumerate() {
        for (b, &(kk, l)) in pairs.iter().enumerate() {
            let gamma = 0.25
                * (nm(kk, i) * xi[l] * xi[j]
                    + nm(l, i) * xi[kk] * xi[j]
                    + nm(kk, j) * xi[l] * xi[i]
                    + nm(l, j) * xi[kk] * xi[i]);
            g[a * v + b] = mults[a] * gamma * mults[b];
        }
    }
    Ok(g)
}

/// Per-frequency Green operators for a whole grid (zero row at xi = 0).
fn gamma_table(reference: &StiffnessTensor, grid: &PeriodicGrid) -> Result<Vec<f64>> {
    let v = strain_dim(grid.ndim());
    let mut table = vec![0.0; grid.n() * v * v];
    for idx in 0..grid.n() {
        let xi = grid.freq_vector(idx);
        let g = gamma_hat(reference, &xi)?;
        table[idx * v * v..(idx + 1) * v * v].copy_from_slice(&g);
    }
    Ok(table)
}

/// In-plane `v x v` Voigt submatrix of a 6x6 stiffness.
fn sub_voigt(c: &StiffnessTensor, ndim: usize) -> Vec<f64> {
    let map = plane_map(ndim);
    let v = map.len();
    let mut out = vec![0.0; v * v];
    for (a, &ma) in map.iter().enumerate() {
        for (b, &mb) in map.iter().enumerate() {
            out[a * v + b] = c.voigt()[(ma, mb)];
        }
    }
    out
}

struct Workspace {
    grid: PeriodicGrid,
    ndim: usize,
    v: usize,
    fft: NdFft,
    gammas: Vec<f64>,
    /// per-cell in-plane stiffness minus reference
    ctilde: Vec<f64>,
    cref: Vec<f64>,
}

impl Workspace {
    fn new(c_field: &StiffnessField) -> Result<Self> {
        let grid = c_field.grid.clone();
        let ndim = grid.ndim();
        let v = strain_dim(ndim);
        let cref = sub_voigt(&c_field.reference, ndim);
        let mut ctilde = Vec::with_capacity(grid.n() * v * v);
        for c in &c_field.cells {
            let s = sub_voigt(c, ndim);
            for (a, &sv) in s.iter().enumerate() {
                ctilde.push(sv - cref[a]);
            }
        }
        Ok(Self {
            fft: NdFft::new(&grid),
            gammas: gamma_table(&c_field.reference, &grid)?,
            grid,
            ndim,
            v,
            ctilde,
            cref,
        })
    }

    fn n(&self) -> usize {
        self.grid.n()
    }

    /// y = M x per cell, M from a packed per-cell table.
    fn cellwise_mul(&self, table: &[f64], x: &[f64], y: &mut [f64]) {
        let v = self.v;
        for idx in 0..self.n() {
            let m = &table[idx * v * v..(idx + 1) * v * v];
            let xc = &x[idx * v..(idx + 1) * v];
            let yc = &mut y[idx * v..(idx + 1) * v];
            for a in 0..v {
                let mut s = 0.0;
                for b in 0..v {
                    s += m[a * v + b] * xc[b];
                }
                yc[a] = s;
            }
        }
    }

    /// Split a cell-major field into per-component spectra.
    fn to_spectra(&self, field: &[f64]) -> Vec<Vec<Complex64>> {
        let v = field.len() / self.n();
        (0..v)
            .map(|c| {
                let comp: Vec<f64> = field.iter().skip(c).step_by(v).copied().collect();
                self.fft.forward_real(&comp)
            })
            .collect()
    }

    fn from_spectra(&self, spectra: &[Vec<Complex64>]) -> Vec<f64> {
        let v = spectra.len();
        let mut out = vec![0.0; self.n() * v];
        for (c, spec) in spectra.iter().enumerate() {
            let real = self.fft.inverse_real(spec);
            for (idx, val) in real.iter().enumerate() {
                out[idx * v + c] = *val;
            }
        }
        out
    }

    /// Gamma convolution: y = ifft(Gamma_hat . fft(tau)), zero mean.
    fn gamma_convolve(&self, tau: &[f64]) -> Vec<f64> {
        let v = self.v;
        let mut spectra = self.to_spectra(tau);
        let mut out_spec = vec![vec![Complex64::default(); self.n()]; v];
        for idx in 0..self.n() {
            let g = &self.gammas[idx * v * v..(idx + 1) * v * v];
            for a in 0..v {
                let mut s = Complex64::default();
                for b in 0..v {
                    s += g[a * v + b] * spectra[b][idx];
                }
                out_spec[a][idx] = s;
            }
        }
        spectra.clear();
        self.from_spectra(&out_spec)
    }

    /// Equilibrium residual of the strain field (relative spectral
    /// divergence of the stress, full out-of-plane components included).
    fn residual_of(&self, c_field: &StiffnessField, eps: &[f64], mean: &[f64]) -> Result<f64> {
        let strain = VoigtField {
            grid: self.grid.clone(),
            components: strain_components(self.ndim),
            mean: mean.to_vec(),
            data: eps.to_vec(),
        };
        let stress = hooke(c_field, &strain)?;
        equilibrium_residual_of_stress(&stress)
    }
}

/// Relative spectral equilibrium residual of a stress field:
/// `||xi_j sigma_ij||_2` over nonzero frequencies divided by `||sigma||_2`.
pub fn equilibrium_residual_of_stress(stress: &VoigtField) -> Result<f64> {
    let grid = &stress.grid;
    let nd = grid.ndim();
    let fft = NdFft::new(grid);
    let nc = stress.ncomp();
    let spectra: Vec<Vec<Complex64>> = (0..nc)
        .map(|c| fft.forward_real(&stress.component(c)))
        .collect();

    // component index of sigma_ij in the stored layout
    let comp_of = |i: usize, j: usize| -> usize {
        if nd == 2 {
            // layout s11 s22 s33 s12
            match (i.min(j), i.max(j)) {
                (0, 0) => 0,
                (1, 1) => 1,
                (0, 1) => 3,
                _ => unreachable!(),
            }
        } else {
            super::voigt_index(i, j)
        }
    };
    let norm_mults: &[f64] = if nd == 2 {
        &[1.0, 1.0, 1.0, 2.0] // s33 counted once, s12 twice
    } else {
        &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]
    };

    let mut num = 0.0;
    let mut den = 0.0;
    for idx in 0..grid.n() {
        let xi = grid.freq_vector(idx);
        for (c, spec) in spectra.iter().enumerate() {
            den += norm_mults[c] * spec[idx].norm_sqr();
        }
        if xi.iter().all(|&x| x == 0.0) {
            continue;
        }
        for i in 0..nd {
            let mut div = Complex64::default();
            for (j, &xij) in xi.iter().enumerate() {
                div += xij * spectra[comp_of(i, j)][idx];
            }
            num += div.norm_sqr();
        }
    }
    if den == 0.0 {
        return Ok(0.0); // zero stress field
    }
    Ok((num / den).sqrt())
}

/// Relative spectral equilibrium residual of `sigma = C : eps`.
pub fn equilibrium_residual(c_field: &StiffnessField, strain: &StrainField) -> Result<f64> {
    let stress = hooke(c_field, strain)?;
    equilibrium_residual_of_stress(&stress)
}

/// Solve the periodic strain localization problem to the requested
/// equilibrium tolerance. The volume mean of the result equals
/// `mean_strain` exactly at every iteration.
pub fn solve_local_strain(
    c_field: &StiffnessField,
    mean_strain: &[f64],
    opts: &SolverOptions,
) -> Result<(StrainField, SolveReport)> {
    let ws = Workspace::new(c_field)?;
    if mean_strain.len() != ws.v {
        return Err(Error::invalid(format!(
            "mean strain needs {} Voigt components",
            ws.v
        )));
    }
    if opts.tol <= 0.0 {
        return Err(Error::invalid("solver tolerance must be > 0"));
    }

    let (eps, report) = match opts.scheme {
        Scheme::Basic => basic_iteration(&ws, c_field, mean_strain, opts)?,
        Scheme::Accelerated => cg_iteration(&ws, c_field, mean_strain, opts)?,
    };

    Ok((
        StrainField {
            grid: ws.grid.clone(),
            components: strain_components(ws.ndim),
            mean: mean_strain.to_vec(),
            data: eps,
        },
        report,
    ))
}

/// Remove roundoff drift so the volume mean matches exactly.
fn recenter(eps: &mut [f64], mean: &[f64]) {
    let v = mean.len();
    let n = (eps.len() / v) as f64;
    for (a, &m) in mean.iter().enumerate() {
        let avg: f64 = eps.iter().skip(a).step_by(v).sum::<f64>() / n;
        let shift = m - avg;
        for x in eps.iter_mut().skip(a).step_by(v) {
            *x += shift;
        }
    }
}

fn check_finite(eps: &[f64]) -> Result<()> {
    if eps.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("NaN encountered in strain update".into()));
    }
    Ok(())
}

fn basic_iteration(
    ws: &Workspace,
    c_field: &StiffnessField,
    mean: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = ws.n();
    let v = ws.v;
    let mut eps = vec![0.0; n * v];
    for idx in 0..n {
        eps[idx * v..(idx + 1) * v].copy_from_slice(mean);
    }
    let mut tau = vec![0.0; n * v];
    let mut last_res = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let res = ws.residual_of(c_field, &eps, mean)?;
        if res <= opts.tol {
            return Ok((
                eps,
                SolveReport {
                    iterations: iter,
                    residual: res,
                },
            ));
        }
        last_res = res;
        ws.cellwise_mul(&ws.ctilde, &eps, &mut tau);
        let corr = ws.gamma_convolve(&tau);
        for idx in 0..n {
            for a in 0..v {
                eps[idx * v + a] = mean[a] - corr[idx * v + a];
            }
        }
        recenter(&mut eps, mean);
        check_finite(&eps)?;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last_res,
    })
}

/// Reference-weighted inner product `sum_x a(x) . (C_ref b(x))`. The
/// Lippmann-Schwinger operator is self-adjoint positive definite in this
/// metric on the compatible zero-mean subspace, which is what makes plain
/// conjugate gradients applicable.
fn dot(ws: &Workspace, a: &[f64], b: &[f64]) -> f64 {
    let v = ws.v;
    let mut s = 0.0;
    for idx in 0..a.len() / v {
        let ac = &a[idx * v..(idx + 1) * v];
        let bc = &b[idx * v..(idx + 1) * v];
        for i in 0..v {
            let mut cb = 0.0;
            for j in 0..v {
                cb += ws.cref[i * v + j] * bc[j];
            }
            s += ac[i] * cb;
        }
    }
    s
}

fn cg_iteration(
    ws: &Workspace,
    c_field: &StiffnessField,
    mean: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = ws.n();
    let v = ws.v;
    let len = n * v;
    // operator A(x) = x + Gamma * (Ctilde x); solve A(x) = -Gamma * (Ctilde mean)
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut tau = vec![0.0; len];
        ws.cellwise_mul(&ws.ctilde, x, &mut tau);
        let mut out = ws.gamma_convolve(&tau);
        for (o, xv) in out.iter_mut().zip(x) {
            *o += xv;
        }
        out
    };
    let mut mean_field = vec![0.0; len];
    for idx in 0..n {
        mean_field[idx * v..(idx + 1) * v].copy_from_slice(mean);
    }
    let mut tau = vec![0.0; len];
    ws.cellwise_mul(&ws.ctilde, &mean_field, &mut tau);
    let b: Vec<f64> = ws.gamma_convolve(&tau).iter().map(|x| -x).collect();

    let mut x = vec![0.0; len];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(ws, &r, &r);
    let mut eps = mean_field.clone();
    let mut last_res = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let res = ws.residual_of(c_field, &eps, mean)?;
        if res <= opts.tol {
            return Ok((
                eps,
                SolveReport {
                    iterations: iter,
                    residual: res,
                },
            ));
        }
        last_res = res;
        if iter % 100 == 0 {
            // periodic residual replacement + restart: plain CG loses
            // orthogonality at high contrast and stalls a couple of orders
            // of magnitude above the attainable floor without this
            let ax = apply(&x);
            for i in 0..len {
                r[i] = b[i] - ax[i];
            }
            rs = dot(ws, &r, &r);
            p.copy_from_slice(&r);
        }
        let ap = apply(&p);
        let pap = dot(ws, &p, &ap);
        if pap.abs() < 1e-300 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(ws, &r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
        for i in 0..len {
            eps[i] = mean_field[i] + x[i];
        }
        recenter(&mut eps, mean);
        check_finite(&eps)?;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last_res,
    })
}
