//! Per-frequency low-rank surrogate for local strain/stress fields.
//!
//! A model is an ordered list of rank terms. Each term was regressed against
//! log-shifted (residual) targets in DFT space: for every frequency
//! independently, complex least squares fits `E_p(xi) = sum_j c_j Psi_{j,p}(xi)`
//! across training instances `p`, where `Psi_j` is the DFT of the j-th texture
//! basis field of an instance. Prediction inverts the pipeline — spectral
//! reconstruction, exponential, shift removal — and sums the ranks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::grid::{NdFft, PeriodicGrid};
use crate::microstructure::Microstructure;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// percent error threshold for the adaptive rank loop; infinity disables
    /// corrections entirely (rank-1 model)
    pub delta_t: f64,
    pub r_max: usize,
    /// Tikhonov parameter, relative to the mean diagonal of the normal matrix
    pub ridge: f64,
    /// stop once the fraction of unresolved training cells drops below this
    pub stop_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta_t: 0.5,
            r_max: 4,
            ridge: 1e-8,
            stop_fraction: 0.005,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.delta_t > 0.0) {
            return Err(Error::invalid("delta_t must be > 0"));
        }
        if self.r_max < 1 {
            return Err(Error::invalid("r_max must be >= 1"));
        }
        if self.ridge < 0.0 {
            return Err(Error::invalid("ridge must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.stop_fraction) {
            return Err(Error::invalid("stop_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RankTerm {
    /// log-shift constant shared by all training instances of this rank
    pub beta: f64,
    /// per basis index: complex coefficients over the full frequency grid
    pub coeffs: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone)]
pub struct XlraModel {
    pub basis: BasisSpec,
    pub dims: Vec<usize>,
    /// which oracle field this model predicts (e.g. "e11" or "von_mises")
    pub target: String,
    /// normalization applied to targets before the log transform; predictions
    /// are multiplied back by this, so the model transfers across load
    /// magnitudes by linearity
    pub scale: f64,
    pub ranks: Vec<RankTerm>,
    pub config: TrainConfig,
}

/// DFT of every basis field of one instance: M arrays over the frequency grid.
pub fn featurize(ms: &Microstructure, basis: &BasisSpec) -> Result<Vec<Vec<Complex64>>> {
    let n = ms.grid.n();
    let m = basis.dim();
    let mut fields = vec![vec![0.0; n]; m];
    for idx in 0..n {
        let vals = basis.eval_cell(ms, idx)?;
        for (j, v) in vals.iter().enumerate() {
            fields[j][idx] = *v;
        }
    }
    let fft = NdFft::new(&ms.grid);
    Ok(fields.iter().map(|f| fft.forward_real(f)).collect())
}

/// Shift a field into strictly positive territory and take the log.
/// `beta = beta_floor + max(0, -min(field))`, so the shifted minimum is at
/// least `beta_floor`. Returns the log field and the shift.
pub fn log_shift(field: &[f64], beta_floor: f64) -> (Vec<f64>, f64) {
    let min = field.iter().copied().fold(f64::INFINITY, f64::min);
    let beta = beta_floor + (-min).max(0.0);
    (field.iter().map(|&v| (v + beta).ln()).collect(), beta)
}

fn shared_beta(targets: &[Vec<f64>], beta_floor: f64) -> f64 {
    let min = targets
        .iter()
        .flat_map(|t| t.iter().copied())
        .fold(f64::INFINITY, f64::min);
    beta_floor + (-min).max(0.0)
}

/// Default log-shift floor for a batch of (residual) targets.
fn default_beta_floor(targets: &[Vec<f64>]) -> f64 {
    let amp = targets
        .iter()
        .flat_map(|t| t.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if amp > 0.0 {
        1e-3 * amp
    } else {
        // all-zero target: log(0 + 1) = 0 represents it exactly
        1.0
    }
}

/// Solve the Hermitian positive (semi-)definite system `(G + lambda I) c = rhs`.
fn solve_regularized(
    g: DMatrix<Complex64>,
    rhs: &[Complex64],
    ridge: f64,
) -> Option<Vec<Complex64>> {
    let n = g.nrows();
    let mean_diag: f64 = (0..n).map(|i| g[(i, i)].re).sum::<f64>() / n as f64;
    if mean_diag <= 0.0 {
        // every feature is zero at this frequency; nothing to fit
        return None;
    }
    let lambda = ridge * mean_diag;
    let mut a = g;
    for i in 0..n {
        a[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let b = DMatrix::from_column_slice(n, 1, rhs);
    a.clone()
        .cholesky()
        .map(|ch| ch.solve(&b))
        .or_else(|| a.lu().solve(&b))
        .map(|sol| sol.column(0).iter().copied().collect())
}

/// Fit one rank term: shared log shift, per-instance DFT of the shifted
/// targets, then an independent complex ridge regression at every frequency.
pub fn train_rank(
    grid: &PeriodicGrid,
    targets: &[Vec<f64>],
    features: &[Vec<Vec<Complex64>>],
    ridge: f64,
    beta_floor: f64,
) -> Result<RankTerm> {
    let p = targets.len();
    if p == 0 || features.len() != p {
        return Err(Error::invalid(
            "train_rank needs matching non-empty targets and features",
        ));
    }
    let n = grid.n();
    let m = features[0].len();
    if targets.iter().any(|t| t.len() != n)
        || features.iter().any(|f| f.len() != m || f.iter().any(|c| c.len() != n))
    {
        return Err(Error::GridMismatch("train_rank: instance shapes".into()));
    }

    let beta = shared_beta(targets, beta_floor);
    let fft = NdFft::new(grid);
    let spectra: Vec<Vec<Complex64>> = targets
        .iter()
        .map(|t| {
            let logged: Vec<f64> = t.iter().map(|&v| (v + beta).ln()).collect();
            fft.forward_real(&logged)
        })
        .collect();

    let mut coeffs = vec![vec![Complex64::default(); n]; m];
    for xi in 0..n {
        let x: Vec<Vec<Complex64>> = (0..p)
            .map(|pi| (0..m).map(|j| features[pi][j][xi]).collect())
            .collect();
        let y: Vec<Complex64> = (0..p).map(|pi| spectra[pi][xi]).collect();
        let c = if p >= m {
            // normal equations: (X^H X + lambda I) c = X^H y
            let mut g = DMatrix::<Complex64>::zeros(m, m);
            let mut rhs = vec![Complex64::default(); m];
            for pi in 0..p {
                for j in 0..m {
                    let xj = x[pi][j].conj();
                    rhs[j] += xj * y[pi];
                    for k in 0..m {
                        g[(j, k)] += xj * x[pi][k];
                    }
                }
            }
            solve_regularized(g, &rhs, ridge)
        } else {
            // minimum-norm: solve (X X^H + lambda I) d = y, then c = X^H d
            let mut g = DMatrix::<Complex64>::zeros(p, p);
            for pi in 0..p {
                for qi in 0..p {
                    let mut s = Complex64::default();
                    for j in 0..m {
                        s += x[pi][j] * x[qi][j].conj();
                    }
                    g[(pi, qi)] = s;
                }
            }
            solve_regularized(g, &y, ridge).map(|d| {
                (0..m)
                    .map(|j| (0..p).map(|pi| x[pi][j].conj() * d[pi]).sum())
                    .collect()
            })
        };
        if let Some(c) = c {
            for (j, cj) in c.iter().enumerate() {
                coeffs[j][xi] = *cj;
            }
        }
    }
    if coeffs
        .iter()
        .any(|cj| cj.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()))
    {
        return Err(Error::Numerical("non-finite regression coefficients".into()));
    }
    Ok(RankTerm { beta, coeffs })
}

/// Reconstruction of one rank for one featurized instance, in target scale
/// units (i.e. before multiplying by `model.scale`).
fn rank_contribution(
    fft: &NdFft,
    term: &RankTerm,
    features: &[Vec<Complex64>],
) -> Vec<f64> {
    let n = features[0].len();
    let mut spec = vec![Complex64::default(); n];
    for (cj, fj) in term.coeffs.iter().zip(features) {
        for xi in 0..n {
            spec[xi] += cj[xi] * fj[xi];
        }
    }
    fft.inverse_real(&spec)
        .iter()
        .map(|&s| s.exp() - term.beta)
        .collect()
}

fn predict_ranks(model: &XlraModel, ms: &Microstructure, n_ranks: usize) -> Result<Vec<f64>> {
    if ms.grid.dims() != model.dims.as_slice() {
        return Err(Error::GridMismatch("predict: model vs microstructure dims".into()));
    }
    let features = featurize(ms, &model.basis)?;
    let fft = NdFft::new(&ms.grid);
    let mut out = vec![0.0; ms.grid.n()];
    for term in model.ranks.iter().take(n_ranks) {
        for (o, c) in out.iter_mut().zip(rank_contribution(&fft, term, &features)) {
            *o += c;
        }
    }
    for o in out.iter_mut() {
        *o *= model.scale;
    }
    Ok(out)
}

/// Oracle-free prediction: sum of all trained rank contributions.
pub fn predict(model: &XlraModel, ms: &Microstructure) -> Result<Vec<f64>> {
    predict_ranks(model, ms, model.ranks.len())
}

/// Prediction using only the first rank term.
pub fn predict_rank1(model: &XlraModel, ms: &Microstructure) -> Result<Vec<f64>> {
    predict_ranks(model, ms, 1)
}

/// Cellwise percent relative error `|oracle - prediction| / |oracle| * 100`,
/// with the denominator clamped at `machine-eps * max|oracle|`. Returns the
/// field and the indices of clamped cells.
pub fn delta_field(oracle: &[f64], prediction: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let amp = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let clamp = f64::EPSILON * amp;
    let mut flagged = Vec::new();
    let values = oracle
        .iter()
        .zip(prediction)
        .enumerate()
        .map(|(i, (&o, &p))| {
            let denom = if o.abs() < clamp || clamp == 0.0 {
                flagged.push(i);
                if clamp > 0.0 { clamp } else { f64::EPSILON }
            } else {
                o.abs()
            };
            (o - p).abs() / denom * 100.0
        })
        .collect();
    (values, flagged)
}

/// Train the full adaptive model: rank 1 on the (normalized) targets, then
/// correction ranks on training residuals while too many cells exceed the
/// error threshold.
pub fn fit(
    instances: &[Microstructure],
    targets: &[Vec<f64>],
    basis: &BasisSpec,
    target_label: &str,
    scale: f64,
    config: &TrainConfig,
) -> Result<XlraModel> {
    config.validate()?;
    if instances.is_empty() || instances.len() != targets.len() {
        return Err(Error::invalid(
            "fit needs matching non-empty instances and targets",
        ));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid("target scale must be > 0"));
    }
    let grid = instances[0].grid.clone();
    if instances.iter().any(|ms| ms.grid != grid) {
        return Err(Error::GridMismatch("fit: instances on different grids".into()));
    }

    let features: Vec<Vec<Vec<Complex64>>> = instances
        .iter()
        .map(|ms| featurize(ms, basis))
        .collect::<Result<_>>()?;
    let scaled: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| t.iter().map(|&v| v / scale).collect())
        .collect();

    let first = train_rank(
        &grid,
        &scaled,
        &features,
        config.ridge,
        default_beta_floor(&scaled),
    )?;
    let mut model = XlraModel {
        basis: basis.clone(),
        dims: grid.dims().to_vec(),
        target: target_label.to_string(),
        scale,
        ranks: vec![first],
        config: *config,
    };

    let fft = NdFft::new(&grid);
    let n = grid.n();
    while model.ranks.len() < config.r_max {
        // residuals of the current model on the training set, in scaled units
        let mut residuals = Vec::with_capacity(scaled.len());
        let mut unresolved = 0usize;
        let mut err_before = 0.0;
        for (t, f) in scaled.iter().zip(&features) {
            let mut pred = vec![0.0; n];
            for term in &model.ranks {
                for (o, c) in pred.iter_mut().zip(rank_contribution(&fft, term, f)) {
                    *o += c;
                }
            }
            let (delta, _) = delta_field(t, &pred);
            unresolved += delta.iter().filter(|&&d| d > config.delta_t).count();
            let resid: Vec<f64> = t.iter().zip(&pred).map(|(a, b)| a - b).collect();
            err_before += resid.iter().map(|v| v * v).sum::<f64>();
            residuals.push(resid);
        }
        let fraction = unresolved as f64 / (n * scaled.len()) as f64;
        if fraction <= config.stop_fraction {
            break;
        }
        let term = train_rank(
            &grid,
            &residuals,
            &features,
            config.ridge,
            default_beta_floor(&residuals),
        )?;
        // keep the correction only if it actually helps on the training set:
        // the regression minimizes log-space error, which the exponential
        // back-transform does not always translate into a linear-space gain
        let mut err_after = 0.0;
        for (r, f) in residuals.iter().zip(&features) {
            let contrib = rank_contribution(&fft, &term, f);
            err_after += r
                .iter()
                .zip(&contrib)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        if err_after >= err_before {
            break;
        }
        model.ranks.push(term);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use crate::microstructure::{gen_two_phase, Microstructure};

    fn two_phase_basis() -> BasisSpec {
        BasisSpec::Primitive { n_phases: 2 }
    }

    fn all_hard(dims: &[usize]) -> Microstructure {
        let grid = PeriodicGrid::new(dims).unwrap();
        Microstructure {
            n_phases: 2,
            phase: Some(vec![1; grid.n()]),
            orientation: None,
            grid,
        }
    }

    /// smooth positive synthetic target correlated with the phase map
    fn synthetic_target(ms: &Microstructure, gain: f64) -> Vec<f64> {
        let phases = ms.phase.as_ref().unwrap();
        (0..ms.grid.n())
            .map(|i| {
                let c = ms.grid.coords(i);
                let wob = (c[0] as f64 * 0.9).sin() * 0.1;
                if phases[i] == 1 {
                    0.5 + wob
                } else {
                    0.5 + gain + wob
                }
            })
            .collect()
    }

    #[test]
    fn featurize_all_hard_concentrates_at_zero() {
        let ms = all_hard(&[6, 6]);
        let f = featurize(&ms, &two_phase_basis()).unwrap();
        assert!((f[1][0].re - 36.0).abs() < 1e-12);
        assert!(f[1][1..].iter().all(|c| c.norm() < 1e-12));
        assert!(f[0].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn primitive_features_are_partition_of_unity() {
        let ms = gen_two_phase(4, &[9, 7], 0.3, 1.0).unwrap();
        let f = featurize(&ms, &two_phase_basis()).unwrap();
        let n = ms.grid.n() as f64;
        assert!((f[0][0] + f[1][0] - Complex64::new(n, 0.0)).norm() < 1e-10);
        for xi in 1..ms.grid.n() {
            assert!((f[0][xi] + f[1][xi]).norm() < 1e-10);
        }
    }

    #[test]
    fn featurize_round_trips_through_inverse_dft() {
        let ms = gen_two_phase(8, &[8, 6], 0.4, 0.5).unwrap();
        let f = featurize(&ms, &two_phase_basis()).unwrap();
        let fft = NdFft::new(&ms.grid);
        let back = fft.inverse_real(&f[1]);
        let phases = ms.phase.as_ref().unwrap();
        for (idx, v) in back.iter().enumerate() {
            let expect = if phases[idx] == 1 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn log_shift_formula_and_round_trip() {
        let field = vec![0.2, 1.0, 3.5];
        let (logged, beta) = log_shift(&field, 1e-3);
        assert_eq!(beta, 1e-3);
        assert!((logged[1] - (1.0f64 + 1e-3).ln()).abs() < 1e-15);

        let field = vec![1.0, -0.5, 0.25];
        let (logged, beta) = log_shift(&field, 1e-3);
        assert!((beta - 0.501).abs() < 1e-15);
        for (l, f) in logged.iter().zip(&field) {
            assert!((l.exp() - beta - f).abs() < 1e-12);
        }
    }

    #[test]
    fn single_instance_fit_interpolates() {
        let ms = gen_two_phase(11, &[7, 7], 0.3, 1.0).unwrap();
        let target = synthetic_target(&ms, 2.0);
        let config = TrainConfig {
            delta_t: f64::INFINITY,
            ridge: 1e-12,
            ..Default::default()
        };
        let model = fit(
            std::slice::from_ref(&ms),
            std::slice::from_ref(&target),
            &two_phase_basis(),
            "e11",
            1.0,
            &config,
        )
        .unwrap();
        assert_eq!(model.ranks.len(), 1);
        let pred = predict(&model, &ms).unwrap();
        let num: f64 = pred
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-8, "relative L2 {}", num / den);
    }

    #[test]
    fn constant_targets_predict_constant_anywhere() {
        let train: Vec<Microstructure> = (0..3)
            .map(|s| gen_two_phase(s, &[7, 7], 0.3, 1.0).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train.iter().map(|ms| vec![2.5; ms.grid.n()]).collect();
        let config = TrainConfig {
            ridge: 1e-12,
            ..Default::default()
        };
        let model = fit(&train, &targets, &two_phase_basis(), "e11", 1.0, &config).unwrap();
        let other = gen_two_phase(99, &[7, 7], 0.3, 1.0).unwrap();
        for v in predict(&model, &other).unwrap() {
            assert!((v - 2.5).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn training_residual_is_non_decreasing_in_ridge() {
        // measured in the regression's own objective (per-frequency least
        // squares on the log-shifted spectra), where the property is exact
        let train: Vec<Microstructure> = (0..4)
            .map(|s| gen_two_phase(20 + s, &[7, 7], 0.3, 1.0).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train
            .iter()
            .map(|ms| synthetic_target(ms, 1.5))
            .collect();
        let grid = train[0].grid.clone();
        let features: Vec<Vec<Vec<Complex64>>> = train
            .iter()
            .map(|ms| featurize(ms, &two_phase_basis()).unwrap())
            .collect();
        let fft = NdFft::new(&grid);
        let mut last = -1.0;
        for ridge in [1e-10, 1e-4, 1.0] {
            let term = train_rank(&grid, &targets, &features, ridge, 1e-3).unwrap();
            let mut res = 0.0;
            for (t, f) in targets.iter().zip(&features) {
                let logged: Vec<f64> = t.iter().map(|&v| (v + term.beta).ln()).collect();
                let spec = fft.forward_real(&logged);
                for xi in 0..grid.n() {
                    let fitted: Complex64 =
                        (0..2).map(|j| term.coeffs[j][xi] * f[j][xi]).sum();
                    res += (spec[xi] - fitted).norm_sqr();
                }
            }
            assert!(
                res >= last - 1e-9 * res.max(1.0),
                "objective {res} decreased from {last} at ridge {ridge}"
            );
            last = res;
        }
    }

    #[test]
    fn spectral_prediction_matches_spatial_convolution() {
        // brute-force oracle: IFFT of the coefficients gives spatial kernels
        // gamma_j; the reconstruction is their circular convolution with the
        // basis fields
        let train: Vec<Microstructure> = (0..3)
            .map(|s| gen_two_phase(30 + s, &[6, 5], 0.4, 0.8).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train
            .iter()
            .map(|ms| synthetic_target(ms, 1.0))
            .collect();
        let config = TrainConfig {
            delta_t: 1.0,
            r_max: 2,
            ..Default::default()
        };
        let model = fit(&train, &targets, &two_phase_basis(), "e11", 1.0, &config).unwrap();
        let ms = gen_two_phase(77, &[6, 5], 0.4, 0.8).unwrap();
        let pred = predict(&model, &ms).unwrap();

        let grid = &ms.grid;
        let n = grid.n();
        let fft = NdFft::new(grid);
        let phases = ms.phase.as_ref().unwrap();
        let basis_fields: Vec<Vec<f64>> = (0..2)
            .map(|j| {
                (0..n)
                    .map(|i| if phases[i] as usize == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut brute = vec![0.0; n];
        for term in &model.ranks {
            let mut recon = vec![0.0; n];
            for (j, cj) in term.coeffs.iter().enumerate() {
                let mut kernel = cj.clone();
                fft.inverse_inplace(&mut kernel);
                for x in 0..n {
                    let cx = grid.coords(x);
                    let mut s = Complex64::default();
                    for y in 0..n {
                        let cy = grid.coords(y);
                        // x - y with periodic wrap
                        let diff: Vec<usize> = cx
                            .iter()
                            .zip(&cy)
                            .zip(grid.dims())
                            .map(|((&a, &b), &d)| (a + d - b) % d)
                            .collect();
                        s += kernel[y] * basis_fields[j][grid.index(&diff)];
                    }
                    recon[x] += s.re;
                }
            }
            for (b, r) in brute.iter_mut().zip(&recon) {
                *b += r.exp() - term.beta;
            }
        }
        for (p, b) in pred.iter().zip(&brute) {
            assert!((p - b).abs() < 1e-10, "{p} vs {b}");
        }
    }

    #[test]
    fn fit_is_order_independent() {
        let train: Vec<Microstructure> = (0..4)
            .map(|s| gen_two_phase(40 + s, &[7, 7], 0.3, 1.0).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train
            .iter()
            .map(|ms| synthetic_target(ms, 1.5))
            .collect();
        let config = TrainConfig {
            delta_t: 1.0,
            r_max: 2,
            ..Default::default()
        };
        let model_a = fit(&train, &targets, &two_phase_basis(), "e11", 1.0, &config).unwrap();
        let order = [2usize, 0, 3, 1];
        let train_b: Vec<Microstructure> = order.iter().map(|&i| train[i].clone()).collect();
        let targets_b: Vec<Vec<f64>> = order.iter().map(|&i| targets[i].clone()).collect();
        let model_b = fit(&train_b, &targets_b, &two_phase_basis(), "e11", 1.0, &config).unwrap();
        let ms = gen_two_phase(50, &[7, 7], 0.3, 1.0).unwrap();
        let pa = predict(&model_a, &ms).unwrap();
        let pb = predict(&model_b, &ms).unwrap();
        for (a, b) in pa.iter().zip(&pb) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn prediction_is_translation_equivariant() {
        let train: Vec<Microstructure> = (0..3)
            .map(|s| gen_two_phase(60 + s, &[7, 7], 0.3, 1.0).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train
            .iter()
            .map(|ms| synthetic_target(ms, 1.0))
            .collect();
        let model = fit(
            &train,
            &targets,
            &two_phase_basis(),
            "e11",
            1.0,
            &TrainConfig::default(),
        )
        .unwrap();
        let ms = gen_two_phase(70, &[7, 7], 0.3, 1.0).unwrap();
        let offset = [3usize, 5];
        let grid = ms.grid.clone();
        let phases = ms.phase.as_ref().unwrap();
        let shifted_phase: Vec<u16> = (0..grid.n())
            .map(|i| {
                let c = grid.coords(i);
                let src: Vec<usize> = c
                    .iter()
                    .zip(&offset)
                    .zip(grid.dims())
                    .map(|((&a, &o), &d)| (a + d - o) % d)
                    .collect();
                phases[grid.index(&src)]
            })
            .collect();
        let shifted = Microstructure {
            grid: grid.clone(),
            n_phases: 2,
            phase: Some(shifted_phase),
            orientation: None,
        };
        let base = predict(&model, &ms).unwrap();
        let moved = predict(&model, &shifted).unwrap();
        for i in 0..grid.n() {
            assert!((moved[i] - base[grid.index(
                &grid
                    .coords(i)
                    .iter()
                    .zip(&offset)
                    .zip(grid.dims())
                    .map(|((&a, &o), &d)| (a + d - o) % d)
                    .collect::<Vec<_>>()
            )])
            .abs()
                < 1e-10);
        }
    }

    #[test]
    fn training_error_is_non_increasing_in_rank() {
        // Solver-generated strain fields: with enough instances the adaptive
        // loop keeps more than one rank, and each kept rank must have lowered
        // the training error (ranks that do not help are discarded).
        use crate::elasticity::solver::{solve_local_strain, Scheme, SolverOptions};
        use crate::elasticity::{assemble_stiffness_field, MaterialSpec, ReferenceRule};
        let mut train = Vec::new();
        let mut targets = Vec::new();
        for s in 0..20u64 {
            let ms = gen_two_phase(s, &[15, 15], 0.2, 1.5).unwrap();
            let cf = assemble_stiffness_field(
                &ms,
                &MaterialSpec::two_phase(10.0, 0.3),
                ReferenceRule::Mean,
            )
            .unwrap();
            let opts = SolverOptions {
                scheme: Scheme::Accelerated,
                ..Default::default()
            };
            let (strain, _) = solve_local_strain(&cf, &[1e-4, 0.0, 0.0], &opts).unwrap();
            targets.push(strain.component(0));
            train.push(ms);
        }
        let config = TrainConfig {
            delta_t: 1e-6, // force the maximum number of ranks
            stop_fraction: 0.0,
            r_max: 3,
            ..Default::default()
        };
        let model = fit(&train, &targets, &two_phase_basis(), "e11", 1e-4, &config).unwrap();
        assert!(model.ranks.len() > 1);
        let mut last = f64::INFINITY;
        for r in 1..=model.ranks.len() {
            let mut num = 0.0;
            let mut den = 0.0;
            for (ms, t) in train.iter().zip(&targets) {
                let pred = predict_ranks(&model, ms, r).unwrap();
                num += pred
                    .iter()
                    .zip(t)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
                den += t.iter().map(|v| v * v).sum::<f64>();
            }
            let err = (num / den).sqrt();
            assert!(err <= last + 1e-12, "rank {r}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn infinite_threshold_yields_rank1_model() {
        let train: Vec<Microstructure> = (0..3)
            .map(|s| gen_two_phase(90 + s, &[7, 7], 0.3, 1.0).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train
            .iter()
            .map(|ms| synthetic_target(ms, 2.0))
            .collect();
        let config = TrainConfig {
            delta_t: f64::INFINITY,
            r_max: 4,
            ..Default::default()
        };
        let model = fit(&train, &targets, &two_phase_basis(), "e11", 1.0, &config).unwrap();
        assert_eq!(model.ranks.len(), 1);
        let ms = gen_two_phase(95, &[7, 7], 0.3, 1.0).unwrap();
        let a = predict(&model, &ms).unwrap();
        let b = predict_rank1(&model, &ms).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delta_field_examples() {
        let (d, flagged) = delta_field(&[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(d, vec![0.0, 0.0]);
        assert!(flagged.is_empty());

        let (d, _) = delta_field(&[1.0], &[0.995]);
        assert!((d[0] - 0.5).abs() < 1e-10);

        let (_, flagged) = delta_field(&[1.0, 1e-20], &[1.0, 0.0]);
        assert_eq!(flagged, vec![1]);
    }

    #[test]
    fn scale_transfers_across_load_magnitudes() {
        let train: Vec<Microstructure> = (0..3)
            .map(|s| gen_two_phase(100 + s, &[7, 7], 0.3, 1.0).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = train
            .iter()
            .map(|ms| synthetic_target(ms, 1.0))
            .collect();
        let scaled_targets: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| t.iter().map(|v| v * 1e-4).collect())
            .collect();
        let a = fit(&train, &targets, &two_phase_basis(), "e11", 1.0, &TrainConfig::default())
            .unwrap();
        let b = fit(
            &train,
            &scaled_targets,
            &two_phase_basis(),
            "e11",
            1e-4,
            &TrainConfig::default(),
        )
        .unwrap();
        let ms = gen_two_phase(111, &[7, 7], 0.3, 1.0).unwrap();
        let pa = predict(&a, &ms).unwrap();
        let pb = predict(&b, &ms).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x * 1e-4 - y).abs() < 1e-12);
        }
    }
}
