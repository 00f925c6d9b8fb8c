//! Synthetic periodic microstructure generators: filtered-noise two-phase
//! composites, porous variants, Voronoi polycrystals, and dual-phase
//! (polycrystal + isotropic hard phase) mixtures.
//!
//! Every generator is a pure function of its arguments including the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NdFft, PeriodicGrid};

/// Bunge Z-X-Z Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub phi1: f64,
    pub cap_phi: f64,
    pub phi2: f64,
}

impl Orientation {
    pub fn identity() -> Self {
        Self {
            phi1: 0.0,
            cap_phi: 0.0,
            phi2: 0.0,
        }
    }

    /// In-plane orientation for 2D runs: rotation by `theta` about the z axis.
    pub fn in_plane(theta: f64) -> Self {
        Self {
            phi1: theta,
            cap_phi: 0.0,
            phi2: 0.0,
        }
    }

    /// Rotation matrix Rz(phi1) * Rx(Phi) * Rz(phi2).
    ///
    /// Right-multiplying by a crystal-frame rotation appends to phi2, which
    /// is the invariance direction of the symmetrized harmonics.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let rz1 = rot_z(self.phi1);
        let rx = rot_x(self.cap_phi);
        let rz2 = rot_z(self.phi2);
        mat_mul(&mat_mul(&rz1, &rx), &rz2)
    }

    /// Recover Bunge angles from a rotation matrix (inverse of `matrix`).
    pub fn from_matrix(r: &[[f64; 3]; 3]) -> Self {
        let cphi = r[2][2].clamp(-1.0, 1.0);
        let cap_phi = cphi.acos();
        let (phi1, phi2) = if cap_phi.sin().abs() > 1e-9 {
            let phi1 = f64::atan2(r[0][2], -r[1][2]);
            let phi2 = f64::atan2(r[2][0], r[2][1]);
            (phi1, phi2)
        } else {
            // degenerate: only phi1 + sign*phi2 is determined
            let phi1 = f64::atan2(-r[0][1], r[0][0]);
            (if cphi > 0.0 { phi1 } else { -phi1 }, 0.0)
        };
        let wrap = |a: f64| a.rem_euclid(2.0 * std::f64::consts::PI);
        Self {
            phi1: wrap(phi1),
            cap_phi,
            phi2: wrap(phi2),
        }
    }
}

fn rot_z(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Periodic grid of per-cell descriptors: phase ids and/or orientations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Microstructure {
    pub grid: PeriodicGrid,
    pub n_phases: u16,
    pub phase: Option<Vec<u16>>,
    pub orientation: Option<Vec<Orientation>>,
}

impl Microstructure {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n();
        if self.phase.is_none() && self.orientation.is_none() {
            return Err(Error::invalid(
                "microstructure needs a phase or orientation array",
            ));
        }
        if let Some(p) = &self.phase {
            if p.len() != n {
                return Err(Error::GridMismatch("phase array length".into()));
            }
            if p.iter().any(|&id| id >= self.n_phases) {
                return Err(Error::invalid("phase id out of range"));
            }
        }
        if let Some(o) = &self.orientation {
            if o.len() != n {
                return Err(Error::GridMismatch("orientation array length".into()));
            }
        }
        Ok(())
    }
}

/// Seeded standard-normal white noise over the grid.
pub fn white_noise(seed: u64, grid: &PeriodicGrid) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.n()).map(|_| standard_normal(&mut rng)).collect()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Convolve with a periodic Gaussian kernel of standard deviation `sigma`
/// (in cells). `sigma == 0` is the identity.
pub fn gaussian_smooth_periodic(grid: &PeriodicGrid, field: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return field.to_vec();
    }
    // build the wrapped real-space kernel, then convolve spectrally
    let mut kernel = vec![0.0; grid.n()];
    let mut total = 0.0;
    for idx in 0..grid.n() {
        let c = grid.coords(idx);
        let mut d2 = 0.0;
        for (ci, &ni) in c.iter().zip(grid.dims()) {
            let d = (*ci as f64).min(ni as f64 - *ci as f64);
            d2 += d * d;
        }
        let w = (-d2 / (2.0 * sigma * sigma)).exp();
        kernel[idx] = w;
        total += w;
    }
    for k in kernel.iter_mut() {
        *k /= total;
    }
    let fft = NdFft::new(grid);
    let khat = fft.forward_real(&kernel);
    let mut fhat = fft.forward_real(field);
    for (f, k) in fhat.iter_mut().zip(&khat) {
        *f *= k;
    }
    fft.inverse_real(&fhat)
}

/// Mark the `round(hard_vf * N)` cells with the largest values as phase 1.
/// Ties are broken by cell index.
pub fn threshold_quantile(values: &[f64], hard_vf: f64) -> Vec<u16> {
    let n = values.len();
    let k = (hard_vf * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut phase = vec![0u16; n];
    for &i in order.iter().take(k) {
        phase[i] = 1;
    }
    phase
}

fn check_two_phase_args(grid: &PeriodicGrid, hard_vf: f64, sigma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&hard_vf) {
        return Err(Error::invalid("volume fraction must lie in [0, 1]"));
    }
    if sigma < 0.0 {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let min_dim = *grid.dims().iter().min().unwrap() as f64;
    if sigma > min_dim / 2.0 {
        return Err(Error::invalid(format!(
            "sigma {sigma} too large for smallest dimension {min_dim}"
        )));
    }
    Ok(())
}

/// Two-phase composite: smoothed white noise thresholded at the empirical
/// quantile so the hard phase (id 1) occupies `hard_vf` of the cells.
pub fn gen_two_phase(seed: u64, dims: &[usize], hard_vf: f64, sigma: f64) -> Result<Microstructure> {
    if !(hard_vf > 0.0 && hard_vf < 1.0) {
        return Err(Error::invalid("hard_vf must lie in (0, 1)"));
    }
    let grid = PeriodicGrid::new(dims)?;
    check_two_phase_args(&grid, hard_vf, sigma)?;
    let noise = white_noise(seed, &grid);
    let smooth = gaussian_smooth_periodic(&grid, &noise, sigma);
    let phase = threshold_quantile(&smooth, hard_vf);
    Ok(Microstructure {
        grid,
        n_phases: 2,
        phase: Some(phase),
        orientation: None,
    })
}

/// Porous material: same recipe with phase 0 interpreted as void
/// (an explicit very compliant solid in the elasticity module).
pub fn gen_porous(seed: u64, dims: &[usize], porosity: f64, sigma: f64) -> Result<Microstructure> {
    if !(0.0..1.0).contains(&porosity) {
        return Err(Error::invalid("porosity must lie in [0, 1)"));
    }
    let grid = PeriodicGrid::new(dims)?;
    check_two_phase_args(&grid, 1.0 - porosity, sigma)?;
    let noise = white_noise(seed, &grid);
    let smooth = gaussian_smooth_periodic(&grid, &noise, sigma);
    let phase = threshold_quantile(&smooth, 1.0 - porosity);
    Ok(Microstructure {
        grid,
        n_phases: 2,
        phase: Some(phase),
        orientation: None,
    })
}

/// Periodic, axis-scaled squared distance between a cell center and a seed
/// point. Larger `elongation[ax]` stretches grains along that axis.
fn periodic_scaled_dist2(cell: &[usize], point: &[f64], dims: &[usize], elongation: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for ax in 0..dims.len() {
        let n = dims[ax] as f64;
        let mut d = (cell[ax] as f64 + 0.5 - point[ax]).abs() % n;
        if d > n / 2.0 {
            d = n - d;
        }
        let d = d / elongation[ax];
        d2 += d * d;
    }
    d2
}

/// Label every cell by its nearest seed point. Ties are broken by seed index.
pub fn voronoi_labels(
    grid: &PeriodicGrid,
    points: &[Vec<f64>],
    elongation: &[f64],
) -> Vec<usize> {
    let dims = grid.dims();
    (0..grid.n())
        .map(|idx| {
            let c = grid.coords(idx);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (g, p) in points.iter().enumerate() {
                let d = periodic_scaled_dist2(&c, p, dims, elongation);
                if d < best_d {
                    best_d = d;
                    best = g;
                }
            }
            best
        })
        .collect()
}

/// Orientation drawn uniformly on SO(3) (cos Phi uniform on [-1, 1]).
pub fn sample_orientation(rng: &mut ChaCha8Rng) -> Orientation {
    let two_pi = 2.0 * std::f64::consts::PI;
    let phi1 = rng.gen_range(0.0..two_pi);
    let cos_phi: f64 = rng.gen_range(-1.0..=1.0);
    let cap_phi = cos_phi.acos();
    let phi2 = rng.gen_range(0.0..two_pi);
    Orientation {
        phi1,
        cap_phi,
        phi2,
    }
}

struct VoronoiDraw {
    labels: Vec<usize>,
    orientations: Vec<Orientation>,
}

fn draw_voronoi(
    rng: &mut ChaCha8Rng,
    grid: &PeriodicGrid,
    n_grains: usize,
    elongation: &[f64],
) -> VoronoiDraw {
    // re-draw seed points until every grain id captures at least one cell
    loop {
        let points: Vec<Vec<f64>> = (0..n_grains)
            .map(|_| {
                grid.dims()
                    .iter()
                    .map(|&d| rng.gen_range(0.0..d as f64))
                    .collect()
            })
            .collect();
        let labels = voronoi_labels(grid, &points, elongation);
        let mut present = vec![false; n_grains];
        for &l in &labels {
            present[l] = true;
        }
        if present.iter().all(|&p| p) {
            let orientations = if grid.ndim() == 2 {
                (0..n_grains)
                    .map(|_| Orientation::in_plane(rng.gen_range(0.0..2.0 * std::f64::consts::PI)))
                    .collect()
            } else {
                (0..n_grains).map(|_| sample_orientation(rng)).collect()
            };
            return VoronoiDraw {
                labels,
                orientations,
            };
        }
    }
}

fn check_voronoi_args(grid: &PeriodicGrid, n_grains: usize, elongation: &[f64]) -> Result<()> {
    if n_grains == 0 || n_grains > grid.n() {
        return Err(Error::invalid(format!(
            "n_grains must lie in [1, {}]",
            grid.n()
        )));
    }
    if elongation.len() != grid.ndim() || elongation.iter().any(|&e| e <= 0.0) {
        return Err(Error::invalid("elongation needs one positive factor per axis"));
    }
    Ok(())
}

/// Single-phase Voronoi polycrystal: one random orientation per grain.
/// 2D grids get in-plane orientations, 3D grids uniform SO(3) draws.
pub fn gen_voronoi_polycrystal(
    seed: u64,
    dims: &[usize],
    n_grains: usize,
    elongation: &[f64],
) -> Result<Microstructure> {
    let grid = PeriodicGrid::new(dims)?;
    check_voronoi_args(&grid, n_grains, elongation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = draw_voronoi(&mut rng, &grid, n_grains, elongation);
    let orientation = draw
        .labels
        .iter()
        .map(|&l| draw.orientations[l])
        .collect();
    Ok(Microstructure {
        grid,
        n_phases: 1,
        phase: None,
        orientation: Some(orientation),
    })
}

/// Dual-phase microstructure: Voronoi grains with whole grains greedily
/// assigned to the isotropic hard phase (id 1) until its volume fraction is
/// nearest `hard_vf`; remaining grains keep their orientations (id 0).
pub fn gen_dual_phase(
    seed: u64,
    dims: &[usize],
    n_grains: usize,
    hard_vf: f64,
) -> Result<Microstructure> {
    if !(0.0..1.0).contains(&hard_vf) {
        return Err(Error::invalid("hard_vf must lie in [0, 1)"));
    }
    let grid = PeriodicGrid::new(dims)?;
    let elongation = vec![1.0; grid.ndim()];
    check_voronoi_args(&grid, n_grains, &elongation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = draw_voronoi(&mut rng, &grid, n_grains, &elongation);

    let mut grain_size = vec![0usize; n_grains];
    for &l in &draw.labels {
        grain_size[l] += 1;
    }
    // random grain order, then add grains while that brings the fraction closer
    let mut order: Vec<usize> = (0..n_grains).collect();
    for i in (1..n_grains).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n = grid.n() as f64;
    let mut hard = vec![false; n_grains];
    let mut count = 0usize;
    for &g in &order {
        let with = (count + grain_size[g]) as f64 / n;
        let without = count as f64 / n;
        if (with - hard_vf).abs() < (without - hard_vf).abs() {
            hard[g] = true;
            count += grain_size[g];
        }
    }

    let phase: Vec<u16> = draw.labels.iter().map(|&l| hard[l] as u16).collect();
    let orientation: Vec<Orientation> = draw
        .labels
        .iter()
        .map(|&l| draw.orientations[l])
        .collect();
    Ok(Microstructure {
        grid,
        n_phases: 2,
        phase: Some(phase),
        orientation: Some(orientation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hard_count(ms: &Microstructure) -> usize {
        ms.phase
            .as_ref()
            .unwrap()
            .iter()
            .filter(|&&p| p == 1)
            .count()
    }

    #[test]
    fn two_phase_hits_exact_quantile_count() {
        let ms = gen_two_phase(7, &[31, 31], 0.20, 0.0).unwrap();
        assert_eq!(hard_count(&ms), 192); // round(0.20 * 961)
    }

    #[test]
    fn two_phase_volume_fraction_within_tolerance_over_seeds() {
        for seed in 0..100 {
            let ms = gen_two_phase(seed, &[24, 17], 0.20, 1.5).unwrap();
            let n = ms.grid.n() as f64;
            let vf = hard_count(&ms) as f64 / n;
            assert!((vf - 0.20).abs() <= 1.0 / n, "seed {seed}: vf {vf}");
        }
    }

    #[test]
    fn two_phase_deterministic() {
        let a = gen_two_phase(42, &[16, 16], 0.3, 2.0).unwrap();
        let b = gen_two_phase(42, &[16, 16], 0.3, 2.0).unwrap();
        assert_eq!(a.phase, b.phase);
    }

    #[test]
    fn two_phase_rejects_bad_args() {
        assert!(gen_two_phase(0, &[16, 16], 0.0, 1.0).is_err());
        assert!(gen_two_phase(0, &[16, 16], 1.0, 1.0).is_err());
        assert!(gen_two_phase(0, &[16, 16], 0.2, 9.0).is_err());
        assert!(gen_two_phase(0, &[16, 16], 0.2, -1.0).is_err());
    }

    #[test]
    fn smoothing_is_translation_equivariant() {
        let grid = PeriodicGrid::new(&[12, 10]).unwrap();
        let noise = white_noise(3, &grid);
        let shift = [5usize, 4];
        let shifted: Vec<f64> = (0..grid.n())
            .map(|i| noise[grid.shifted_index(i, &shift)])
            .collect();
        let a = gaussian_smooth_periodic(&grid, &noise, 2.0);
        let b = gaussian_smooth_periodic(&grid, &shifted, 2.0);
        for i in 0..grid.n() {
            assert!((b[i] - a[grid.shifted_index(i, &shift)]).abs() < 1e-10);
        }
    }

    #[test]
    fn porous_mask_complements_two_phase() {
        let porous = gen_porous(11, &[20, 20], 0.5, 1.0).unwrap();
        let comp = gen_two_phase(11, &[20, 20], 0.5, 1.0).unwrap();
        // void cells (phase 0) are exactly the composite's soft cells
        assert_eq!(porous.phase, comp.phase);
        let n = porous.grid.n() as f64;
        let void = porous.phase.as_ref().unwrap().iter().filter(|&&p| p == 0).count();
        assert!((void as f64 / n - 0.5).abs() <= 1.0 / n);
    }

    #[test]
    fn porous_fraction_example() {
        let ms = gen_porous(5, &[31, 31], 0.15, 1.0).unwrap();
        let n = ms.grid.n() as f64;
        let void = ms.phase.as_ref().unwrap().iter().filter(|&&p| p == 0).count();
        assert!((void as f64 / n - 0.15).abs() <= 1.0 / n);
    }

    #[test]
    fn porosity_zero_is_single_phase() {
        let ms = gen_porous(5, &[16, 16], 0.0, 1.0).unwrap();
        assert!(ms.phase.as_ref().unwrap().iter().all(|&p| p == 1));
    }

    #[test]
    fn voronoi_all_grains_present() {
        let ms = gen_voronoi_polycrystal(3, &[15, 15, 15], 10, &[1.0, 1.0, 1.0]).unwrap();
        let oris = ms.orientation.as_ref().unwrap();
        let mut distinct: Vec<_> = oris.iter().map(|o| (o.phi1, o.cap_phi, o.phi2)).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn single_grain_is_uniform() {
        let ms = gen_voronoi_polycrystal(9, &[8, 8], 1, &[1.0, 1.0]).unwrap();
        let oris = ms.orientation.as_ref().unwrap();
        assert!(oris.iter().all(|o| o == &oris[0]));
    }

    #[test]
    fn elongation_stretches_grains() {
        // mean grain extent along axis 0 grows with elongation[0]
        let extent = |elo: &[f64]| -> f64 {
            let grid = PeriodicGrid::new(&[31, 31]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let draw = draw_voronoi(&mut rng, &grid, 8, elo);
            let mut rows: Vec<std::collections::HashSet<usize>> =
                vec![std::collections::HashSet::new(); 8];
            for idx in 0..grid.n() {
                rows[draw.labels[idx]].insert(grid.coords(idx)[0]);
            }
            rows.iter().map(|r| r.len() as f64).sum::<f64>() / 8.0
        };
        assert!(extent(&[3.0, 1.0]) > extent(&[1.0, 1.0]));
    }

    #[test]
    fn dual_phase_fraction_within_one_grain() {
        let ms = gen_dual_phase(13, &[31, 31], 50, 0.20).unwrap();
        let n = ms.grid.n() as f64;
        let vf = hard_count(&ms) as f64 / n;
        // mean grain volume is N / 50
        assert!((vf - 0.20).abs() <= 1.0 / 50.0 * 2.0, "vf {vf}");
    }

    #[test]
    fn dual_phase_zero_vf_matches_polycrystal() {
        let a = gen_dual_phase(21, &[16, 16], 12, 1e-9).unwrap();
        let b = gen_voronoi_polycrystal(21, &[16, 16], 12, &[1.0, 1.0]).unwrap();
        assert!(a.phase.as_ref().unwrap().iter().all(|&p| p == 0));
        assert_eq!(a.orientation, b.orientation);
    }

    #[test]
    fn dual_phase_deterministic() {
        let a = gen_dual_phase(8, &[16, 16], 20, 0.2).unwrap();
        let b = gen_dual_phase(8, &[16, 16], 20, 0.2).unwrap();
        assert_eq!(a.phase, b.phase);
        assert_eq!(a.orientation, b.orientation);
    }

    #[test]
    fn orientation_cos_phi_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cos: Vec<f64> = (0..10_000)
            .map(|_| sample_orientation(&mut rng).cap_phi.cos())
            .collect();
        cos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Kolmogorov-Smirnov statistic against U[-1, 1]
        let n = cos.len() as f64;
        let ks = cos
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let cdf = (c + 1.0) / 2.0;
                let emp_hi = (i + 1) as f64 / n;
                let emp_lo = i as f64 / n;
                (cdf - emp_lo).abs().max((emp_hi - cdf).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn euler_matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let o = sample_orientation(&mut rng);
            let back = Orientation::from_matrix(&o.matrix());
            let ma = o.matrix();
            let mb = back.matrix();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((ma[i][j] - mb[i][j]).abs() < 1e-10);
                }
            }
        }
    }
}
