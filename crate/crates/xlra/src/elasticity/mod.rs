//! Stiffness-tensor algebra and per-cell elastic fields: Voigt matrices,
//! cubic/isotropic constants, full 4th-order rotation, Hooke's law and the
//! von Mises invariant. The spectral strain solver lives in [`solver`].
//!
//! Conventions: Voigt order (11, 22, 33, 23, 13, 12), engineering shear
//! strain (gamma = 2 eps), stresses in GPa. 2D runs are plane strain on the
//! same 6x6 matrices; 2D stress fields carry the out-of-plane s33.

pub mod solver;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::microstructure::Microstructure;

pub type Voigt6 = SMatrix<f64, 6, 6>;

/// Representative tensor index pairs for the Voigt slots.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

pub fn voigt_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) => 3,
        (0, 2) => 4,
        (0, 1) => 5,
        _ => unreachable!(),
    }
}

/// 6x6 Voigt stiffness matrix (symmetric positive definite).
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessTensor {
    m: Voigt6,
}

impl StiffnessTensor {
    pub fn from_voigt(m: Voigt6) -> Result<Self> {
        let sym = (m - m.transpose()).norm() / m.norm().max(1e-300);
        if sym > 1e-9 {
            return Err(Error::invalid("stiffness matrix must be symmetric"));
        }
        let t = Self { m };
        if !t.is_positive_definite() {
            return Err(Error::NotPositiveDefinite(format!(
                "leading entries {:.3} {:.3}",
                m[(0, 0)],
                m[(3, 3)]
            )));
        }
        Ok(t)
    }

    pub fn voigt(&self) -> &Voigt6 {
        &self.m
    }

    pub fn is_positive_definite(&self) -> bool {
        self.m.cholesky().is_some()
    }

    /// Full 4th-order component C_ijkl.
    pub fn tensor(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.m[(voigt_index(i, j), voigt_index(k, l))]
    }

    /// sigma = C : eps for a Voigt strain (engineering shear), both length 6.
    pub fn apply(&self, strain: &[f64; 6]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                out[i] += self.m[(i, j)] * strain[j];
            }
        }
        out
    }

    /// Bulk and shear modulus of the isotropic projection.
    pub fn isotropic_moduli(&self) -> (f64, f64) {
        let mut c_iijj = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                c_iijj += self.m[(i, j)];
            }
        }
        let mut c_ijij = 0.0;
        for i in 0..3 {
            c_ijij += self.m[(i, i)];
        }
        for i in 3..6 {
            c_ijij += 2.0 * self.m[(i, i)];
        }
        let kappa = c_iijj / 9.0;
        let mu = (c_ijij - c_iijj / 3.0) / 10.0;
        (kappa, mu)
    }
}

/// Cubic Voigt matrix from the three independent constants.
pub fn cubic_stiffness(c11: f64, c12: f64, c44: f64) -> Result<StiffnessTensor> {
    let mut m = Voigt6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = if i == j { c11 } else { c12 };
        }
        m[(i + 3, i + 3)] = c44;
    }
    StiffnessTensor::from_voigt(m)
}

/// Isotropic Voigt matrix from Young's modulus and Poisson's ratio.
pub fn isotropic_stiffness(e: f64, nu: f64) -> Result<StiffnessTensor> {
    if e <= 0.0 || nu <= -1.0 || nu >= 0.5 {
        return Err(Error::invalid("need E > 0 and -1 < nu < 0.5"));
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    cubic_stiffness(lambda + 2.0 * mu, lambda, mu)
}

pub fn isotropic_from_lame(lambda: f64, mu: f64) -> Result<StiffnessTensor> {
    cubic_stiffness(lambda + 2.0 * mu, lambda, mu)
}

/// Zener anisotropy ratio 2*C44 / (C11 - C12).
pub fn zener_ratio(c11: f64, c12: f64, c44: f64) -> Result<f64> {
    if (c11 - c12).abs() < 1e-12 {
        return Err(Error::invalid("Zener ratio undefined for C11 == C12"));
    }
    Ok(2.0 * c44 / (c11 - c12))
}

/// Full 4th-order rotation C'_ijkl = R_ip R_jq R_kr R_ls C_pqrs.
pub fn rotate_stiffness(c: &StiffnessTensor, r: &[[f64; 3]; 3]) -> StiffnessTensor {
    let mut out = Voigt6::zeros();
    for (a, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        for (b, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
            let mut sum = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    let rip_rjq = r[i][p] * r[j][q];
                    if rip_rjq == 0.0 {
                        continue;
                    }
                    for s in 0..3 {
                        for t in 0..3 {
                            sum += rip_rjq * r[k][s] * r[l][t] * c.tensor(p, q, s, t);
                        }
                    }
                }
            }
            out[(a, b)] = sum;
        }
    }
    // rotation preserves symmetry and definiteness
    StiffnessTensor { m: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseElasticity {
    Isotropic { e: f64, nu: f64 },
    Cubic { c11: f64, c12: f64, c44: f64 },
}

impl PhaseElasticity {
    pub fn stiffness(&self) -> Result<StiffnessTensor> {
        match *self {
            PhaseElasticity::Isotropic { e, nu } => isotropic_stiffness(e, nu),
            PhaseElasticity::Cubic { c11, c12, c44 } => cubic_stiffness(c11, c12, c44),
        }
    }
}

/// Per-phase elastic constants; `crystalline` phases use the cell orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub phases: Vec<PhaseSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub elasticity: PhaseElasticity,
    #[serde(default)]
    pub crystalline: bool,
}

impl MaterialSpec {
    /// Two-phase composite: hard phase (id 1) E = 2000 GPa, soft phase
    /// E = 2000 / ec, shared Poisson ratio.
    pub fn two_phase(ec: f64, nu: f64) -> Self {
        Self {
            phases: vec![
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic {
                        e: 2000.0 / ec,
                        nu,
                    },
                    crystalline: false,
                },
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic { e: 2000.0, nu },
                    crystalline: false,
                },
            ],
        }
    }

    /// Single cubic crystalline phase.
    pub fn polycrystal(c11: f64, c12: f64, c44: f64) -> Self {
        Self {
            phases: vec![PhaseSpec {
                elasticity: PhaseElasticity::Cubic { c11, c12, c44 },
                crystalline: true,
            }],
        }
    }

    /// Cubic ferrite (id 0, crystalline) + isotropic martensite (id 1).
    pub fn dual_phase_steel() -> Self {
        // martensite given by C11/C12 only; C44 = (C11 - C12) / 2 (isotropic)
        let (m11, m12) = (417.4, 242.4);
        let mu = (m11 - m12) / 2.0;
        let e = mu * (3.0 * m12 + 2.0 * mu) / (m12 + mu);
        let nu = m12 / (2.0 * (m12 + mu));
        Self {
            phases: vec![
                PhaseSpec {
                    elasticity: PhaseElasticity::Cubic {
                        c11: 233.3,
                        c12: 135.5,
                        c44: 128.0,
                    },
                    crystalline: true,
                },
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic { e, nu },
                    crystalline: false,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRule {
    /// Volume average of the per-cell Voigt matrices.
    #[default]
    Mean,
    /// Isotropic midpoint of the extremal per-cell isotropic projections.
    Midpoint,
}

/// Per-cell stiffness plus the homogeneous reference medium.
#[derive(Debug, Clone)]
pub struct StiffnessField {
    pub grid: PeriodicGrid,
    pub cells: Vec<StiffnessTensor>,
    pub reference: StiffnessTensor,
}

/// Build the stiffness field for a microstructure: phase stiffness rotated
/// by the cell orientation on crystalline phases.
pub fn assemble_stiffness_field(
    ms: &Microstructure,
    spec: &MaterialSpec,
    rule: ReferenceRule,
) -> Result<StiffnessField> {
    ms.validate()?;
    let n = ms.grid.n();
    let max_phase = ms
        .phase
        .as_ref()
        .map(|p| *p.iter().max().unwrap() as usize)
        .unwrap_or(0);
    if max_phase >= spec.phases.len() {
        return Err(Error::invalid(format!(
            "material spec covers {} phases but microstructure uses phase id {max_phase}",
            spec.phases.len()
        )));
    }
    let base: Vec<StiffnessTensor> = spec
        .phases
        .iter()
        .map(|p| p.elasticity.stiffness())
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(n);
    for idx in 0..n {
        let phase = ms.phase.as_ref().map(|p| p[idx] as usize).unwrap_or(0);
        let ps = &spec.phases[phase];
        let c = if ps.crystalline {
            let o = ms
                .orientation
                .as_ref()
                .ok_or_else(|| Error::invalid("crystalline phase needs orientations"))?[idx];
            rotate_stiffness(&base[phase], &o.matrix())
        } else {
            base[phase].clone()
        };
        if !c.is_positive_definite() {
            return Err(Error::NotPositiveDefinite(format!("cell {idx}")));
        }
        cells.push(c);
    }

    let reference = match rule {
        ReferenceRule::Mean => {
            let mut acc = Voigt6::zeros();
            for c in &cells {
                acc += c.voigt();
            }
            StiffnessTensor::from_voigt(acc / n as f64)?
        }
        ReferenceRule::Midpoint => {
            let (mut kmin, mut kmax) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut mmin, mut mmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in &cells {
                let (k, m) = c.isotropic_moduli();
                kmin = kmin.min(k);
                kmax = kmax.max(k);
                mmin = mmin.min(m);
                mmax = mmax.max(m);
            }
            let kappa = 0.5 * (kmin + kmax);
            let mu = 0.5 * (mmin + mmax);
            isotropic_from_lame(kappa - 2.0 * mu / 3.0, mu)?
        }
    };

    Ok(StiffnessField {
        grid: ms.grid.clone(),
        cells,
        reference,
    })
}

/// Strain or stress field in Voigt components, cell-major with components
/// fastest. `mean` is the applied (strain) or volume-average (stress) value.
#[derive(Debug, Clone, PartialEq)]
pub struct VoigtField {
    pub grid: PeriodicGrid,
    pub components: Vec<String>,
    pub mean: Vec<f64>,
    pub data: Vec<f64>,
}

pub type StrainField = VoigtField;
pub type StressField = VoigtField;

pub fn strain_components(ndim: usize) -> Vec<String> {
    let names: &[&str] = if ndim == 2 {
        &["e11", "e22", "g12"]
    } else {
        &["e11", "e22", "e33", "g23", "g13", "g12"]
    };
    names.iter().map(|s| s.to_string()).collect()
}

pub fn stress_components(ndim: usize) -> Vec<String> {
    let names: &[&str] = if ndim == 2 {
        &["s11", "s22", "s33", "s12"]
    } else {
        &["s11", "s22", "s33", "s23", "s13", "s12"]
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Strain Voigt dimension per grid dimensionality (3 in 2D, 6 in 3D).
pub fn strain_dim(ndim: usize) -> usize {
    if ndim == 2 {
        3
    } else {
        6
    }
}

impl VoigtField {
    pub fn ncomp(&self) -> usize {
        self.components.len()
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.data[idx * nc..(idx + 1) * nc]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        let nc = self.ncomp();
        self.data.iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn component_by_label(&self, label: &str) -> Option<Vec<f64>> {
        self.components
            .iter()
            .position(|l| l == label)
            .map(|c| self.component(c))
    }

    pub fn volume_average(&self) -> Vec<f64> {
        let nc = self.ncomp();
        let n = self.grid.n() as f64;
        let mut avg = vec![0.0; nc];
        for cell in self.data.chunks_exact(nc) {
            for (a, v) in avg.iter_mut().zip(cell) {
                *a += v;
            }
        }
        avg.iter().map(|a| a / n).collect()
    }
}

/// Expand a 2D/3D Voigt strain to the 6-component plane-strain embedding.
fn strain_to_6(strain: &[f64], ndim: usize) -> [f64; 6] {
    if ndim == 2 {
        [strain[0], strain[1], 0.0, 0.0, 0.0, strain[2]]
    } else {
        [
            strain[0], strain[1], strain[2], strain[3], strain[4], strain[5],
        ]
    }
}

/// Per-cell Hooke's law sigma = C : eps. In 2D the out-of-plane s33 is
/// retained in the output (plane strain).
pub fn hooke(c_field: &StiffnessField, strain: &StrainField) -> Result<StressField> {
    if c_field.grid != strain.grid {
        return Err(Error::GridMismatch("hooke: stiffness vs strain".into()));
    }
    let ndim = c_field.grid.ndim();
    let sdim = strain_dim(ndim);
    if strain.ncomp() != sdim {
        return Err(Error::GridMismatch("hooke: strain component count".into()));
    }
    let comps = stress_components(ndim);
    let nc = comps.len();
    let mut data = vec![0.0; c_field.grid.n() * nc];
    for idx in 0..c_field.grid.n() {
        let s6 = c_field.cells[idx].apply(&strain_to_6(strain.cell(idx), ndim));
        let out = &mut data[idx * nc..(idx + 1) * nc];
        if ndim == 2 {
            out.copy_from_slice(&[s6[0], s6[1], s6[2], s6[5]]);
        } else {
            out.copy_from_slice(&s6);
        }
    }
    let mut field = StressField {
        grid: c_field.grid.clone(),
        components: comps,
        mean: vec![],
        data,
    };
    field.mean = field.volume_average();
    Ok(field)
}

/// Per-cell von Mises invariant of a stress field.
pub fn von_mises(stress: &StressField) -> Vec<f64> {
    let nc = stress.ncomp();
    stress
        .data
        .chunks_exact(nc)
        .map(|s| {
            let (s11, s22, s33, s23, s13, s12) = if nc == 4 {
                (s[0], s[1], s[2], 0.0, 0.0, s[3])
            } else {
                (s[0], s[1], s[2], s[3], s[4], s[5])
            };
            let d = (s11 - s22).powi(2) + (s22 - s33).powi(2) + (s33 - s11).powi(2);
            (0.5 * d + 3.0 * (s12 * s12 + s13 * s13 + s23 * s23)).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::cubic_rotations;
    use crate::microstructure::{gen_two_phase, sample_orientation, Orientation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cubic_stiffness_entries() {
        let ni = cubic_stiffness(251.0, 150.0, 123.7).unwrap();
        assert_eq!(ni.voigt()[(0, 0)], 251.0);
        assert_eq!(ni.voigt()[(3, 3)], 123.7);
        assert_eq!(ni.voigt()[(0, 1)], 150.0);
    }

    #[test]
    fn aluminium_is_positive_definite() {
        let al = cubic_stiffness(106.75, 60.41, 28.34).unwrap();
        assert!(al.is_positive_definite());
        let eig = al.voigt().symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn zener_values() {
        assert!((zener_ratio(106.75, 60.41, 28.34).unwrap() - 1.223).abs() < 0.001);
        assert!((zener_ratio(49.5, 42.3, 14.9).unwrap() - 4.14).abs() < 0.01);
        let (c11, c12) = (100.0, 40.0);
        assert_eq!(zener_ratio(c11, c12, (c11 - c12) / 2.0).unwrap(), 1.0);
        assert!(zener_ratio(50.0, 50.0, 10.0).is_err());
    }

    #[test]
    fn identity_rotation_is_noop() {
        let c = cubic_stiffness(251.0, 150.0, 123.7).unwrap();
        let r = Orientation::identity().matrix();
        let rc = rotate_stiffness(&c, &r);
        assert!((rc.voigt() - c.voigt()).norm() < 1e-10);
    }

    #[test]
    fn cubic_point_group_leaves_cubic_stiffness_fixed() {
        let c = cubic_stiffness(251.0, 150.0, 123.7).unwrap();
        for q in cubic_rotations() {
            let rc = rotate_stiffness(&c, &q);
            assert!((rc.voigt() - c.voigt()).norm() < 1e-10);
        }
    }

    #[test]
    fn any_rotation_leaves_isotropic_stiffness_fixed() {
        let c = isotropic_stiffness(200.0, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let r = sample_orientation(&mut rng).matrix();
            let rc = rotate_stiffness(&c, &r);
            assert!((rc.voigt() - c.voigt()).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_isotropic_projection() {
        let c = cubic_stiffness(251.0, 150.0, 123.7).unwrap();
        let (k0, m0) = c.isotropic_moduli();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let r = sample_orientation(&mut rng).matrix();
            let (k, m) = rotate_stiffness(&c, &r).isotropic_moduli();
            assert!((k - k0).abs() < 1e-9 && (m - m0).abs() < 1e-9);
        }
    }

    #[test]
    fn reference_is_volume_average() {
        let ms = gen_two_phase(3, &[16, 16], 0.25, 1.0).unwrap();
        let spec = MaterialSpec::two_phase(100.0, 0.3);
        let f = assemble_stiffness_field(&ms, &spec, ReferenceRule::Mean).unwrap();
        let hard = isotropic_stiffness(2000.0, 0.3).unwrap();
        let soft = isotropic_stiffness(20.0, 0.3).unwrap();
        let vf = ms
            .phase
            .as_ref()
            .unwrap()
            .iter()
            .filter(|&&p| p == 1)
            .count() as f64
            / ms.grid.n() as f64;
        let expect = hard.voigt() * vf + soft.voigt() * (1.0 - vf);
        assert!((f.reference.voigt() - expect).norm() < 1e-9);
    }

    #[test]
    fn single_phase_reference_is_phase_stiffness() {
        let ms = gen_two_phase(3, &[8, 8], 0.5, 0.0).unwrap();
        let e = 150.0;
        let spec = MaterialSpec {
            phases: vec![
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic { e, nu: 0.3 },
                    crystalline: false,
                },
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic { e, nu: 0.3 },
                    crystalline: false,
                },
            ],
        };
        let f = assemble_stiffness_field(&ms, &spec, ReferenceRule::Mean).unwrap();
        let expect = isotropic_stiffness(e, 0.3).unwrap();
        assert!((f.reference.voigt() - expect.voigt()).norm() < 1e-9);
    }

    #[test]
    fn hooke_plane_strain_uniaxial() {
        let ms = gen_two_phase(1, &[8, 8], 0.5, 0.0).unwrap();
        let (e, nu) = (2000.0, 0.3);
        let spec = MaterialSpec {
            phases: vec![
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic { e, nu },
                    crystalline: false,
                },
                PhaseSpec {
                    elasticity: PhaseElasticity::Isotropic { e, nu },
                    crystalline: false,
                },
            ],
        };
        let cf = assemble_stiffness_field(&ms, &spec, ReferenceRule::Mean).unwrap();
        let eps = 1e-4;
        let strain = StrainField {
            grid: ms.grid.clone(),
            components: strain_components(2),
            mean: vec![eps, 0.0, 0.0],
            data: [eps, 0.0, 0.0].repeat(ms.grid.n()),
        };
        let stress = hooke(&cf, &strain).unwrap();
        let expect = e * (1.0 - nu) / ((1.0 + nu) * (1.0 - 2.0 * nu)) * eps;
        assert!((expect - 0.2692).abs() < 1e-3);
        for idx in 0..ms.grid.n() {
            assert!((stress.cell(idx)[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn hooke_zero_strain_zero_stress() {
        let ms = gen_two_phase(1, &[8, 8], 0.5, 0.0).unwrap();
        let cf =
            assemble_stiffness_field(&ms, &MaterialSpec::two_phase(10.0, 0.3), ReferenceRule::Mean)
                .unwrap();
        let strain = StrainField {
            grid: ms.grid.clone(),
            components: strain_components(2),
            mean: vec![0.0; 3],
            data: vec![0.0; ms.grid.n() * 3],
        };
        let stress = hooke(&cf, &strain).unwrap();
        assert!(stress.data.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn von_mises_invariants() {
        let grid = PeriodicGrid::new(&[2, 2]).unwrap();
        let mk = |cell: [f64; 6]| StressField {
            grid: grid.clone(),
            components: stress_components(3),
            mean: vec![0.0; 6],
            data: cell.repeat(4),
        };
        // hydrostatic
        let vm = von_mises(&mk([5.0, 5.0, 5.0, 0.0, 0.0, 0.0]));
        assert!(vm.iter().all(|&v| v.abs() < 1e-12));
        // uniaxial
        let vm = von_mises(&mk([3.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(vm.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        // pure shear s12
        let vm = von_mises(&mk([0.0, 0.0, 0.0, 0.0, 0.0, 2.0]));
        assert!(vm.iter().all(|&v| (v - 2.0 * 3f64.sqrt()).abs() < 1e-12));
    }
}
