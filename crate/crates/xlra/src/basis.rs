//! Descriptor bases over cell contents: per-phase indicators, real
//! symmetrized generalized spherical harmonics for cubic crystals, a 4-fold
//! planar Fourier basis for 2D runs, and the gated dual-phase combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microstructure::{Microstructure, Orientation};

pub const GSH_CUBIC_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Per-phase indicator functions (partition of unity).
    Primitive { n_phases: usize },
    /// Constant + nine degree-4 cubic/triclinic symmetrized harmonics.
    GshCubic3d,
    /// `[1, cos 4t, sin 4t, cos 8t, ...]` over the in-plane angle.
    PlanarFourier2d { n_harmonics: usize },
    /// Hard-phase indicator gating an orientation sub-basis for the rest.
    DualPhase {
        polycrystal_phase: u16,
        orientation: Box<BasisSpec>,
    },
}

impl BasisSpec {
    pub fn dim(&self) -> usize {
        match self {
            BasisSpec::Primitive { n_phases } => *n_phases,
            BasisSpec::GshCubic3d => GSH_CUBIC_DIM,
            BasisSpec::PlanarFourier2d { n_harmonics } => 1 + 2 * n_harmonics,
            BasisSpec::DualPhase { orientation, .. } => 1 + orientation.dim(),
        }
    }

    /// Evaluate every basis function at one cell of `ms`.
    pub fn eval_cell(&self, ms: &Microstructure, idx: usize) -> Result<Vec<f64>> {
        match self {
            BasisSpec::Primitive { n_phases } => {
                let phase = ms
                    .phase
                    .as_ref()
                    .ok_or_else(|| Error::invalid("primitive basis needs phase ids"))?[idx];
                eval_primitive(phase as usize, *n_phases)
            }
            BasisSpec::GshCubic3d => {
                let o = ms
                    .orientation
                    .as_ref()
                    .ok_or_else(|| Error::invalid("GSH basis needs orientations"))?[idx];
                Ok(eval_gsh_cubic(&o).to_vec())
            }
            BasisSpec::PlanarFourier2d { n_harmonics } => {
                let o = ms
                    .orientation
                    .as_ref()
                    .ok_or_else(|| Error::invalid("planar basis needs orientations"))?[idx];
                Ok(eval_planar(o.phi1, *n_harmonics))
            }
            BasisSpec::DualPhase {
                polycrystal_phase,
                orientation,
            } => {
                let phase = ms
                    .phase
                    .as_ref()
                    .ok_or_else(|| Error::invalid("dual-phase basis needs phase ids"))?[idx];
                let m = orientation.dim();
                let mut out = vec![0.0; 1 + m];
                if phase == *polycrystal_phase {
                    let sub = orientation.eval_cell(ms, idx)?;
                    out[1..].copy_from_slice(&sub);
                } else {
                    out[0] = 1.0;
                }
                Ok(out)
            }
        }
    }
}

/// One-hot phase indicator.
pub fn eval_primitive(phase_id: usize, n_phases: usize) -> Result<Vec<f64>> {
    if phase_id >= n_phases {
        return Err(Error::invalid(format!(
            "phase id {phase_id} out of range [0, {n_phases})"
        )));
    }
    let mut v = vec![0.0; n_phases];
    v[phase_id] = 1.0;
    Ok(v)
}

/// 4-fold symmetric Fourier basis over the in-plane crystal angle.
pub fn eval_planar(theta: f64, n_harmonics: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + 2 * n_harmonics);
    v.push(1.0);
    for h in 1..=n_harmonics {
        let a = 4.0 * h as f64 * theta;
        v.push(a.cos());
        v.push(a.sin());
    }
    v
}

// Cubic invariant weights over the inner (crystal) index n in {0, +/-4}
// of the degree-4 harmonics.
const CUBIC_W0: f64 = 0.763_762_615_825_973_3; // sqrt(7/12)
const CUBIC_W4: f64 = 0.456_435_464_587_638_56; // sqrt(5/24)

fn factorial(n: i32) -> f64 {
    (1..=n as u64).map(|k| k as f64).product()
}

/// Wigner small-d matrix element `d^j_{m',m}(beta)` by the explicit sum.
pub fn wigner_small_d(j: i32, mp: i32, m: i32, beta: f64) -> f64 {
    let pref = (factorial(j + mp) * factorial(j - mp) * factorial(j + m) * factorial(j - m))
        .sqrt();
    let (cb, sb) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let s_min = 0.max(m - mp);
    let s_max = (j + m).min(j - mp);
    let mut sum = 0.0;
    for s in s_min..=s_max {
        let sign = if (mp - m + s) % 2 == 0 { 1.0 } else { -1.0 };
        let denom = factorial(j + m - s)
            * factorial(s)
            * factorial(mp - m + s)
            * factorial(j - mp - s);
        let c_pow = 2 * j + m - mp - 2 * s;
        let s_pow = mp - m + 2 * s;
        sum += sign * cb.powi(c_pow) * sb.powi(s_pow) / denom;
    }
    pref * sum
}

/// Real symmetrized GSH values for cubic crystal / triclinic sample symmetry.
///
/// Index 0 is the constant function; indices 1..=9 are the nine degree-4
/// harmonics, each scaled to unit L2 norm under the Haar measure. The
/// complex outer-index pairs are unfolded into sqrt(2)-scaled real and
/// imaginary parts.
pub fn eval_gsh_cubic(o: &Orientation) -> [f64; GSH_CUBIC_DIM] {
    let mut out = [0.0; GSH_CUBIC_DIM];
    out[0] = 1.0;
    let norm = 3.0; // sqrt(2l + 1) for l = 4
    let (s2, c2) = (4.0 * o.phi2).sin_cos();
    let mut k = 1;
    for m in 0..=4i32 {
        // F_m = sum_n B_n e^{i m phi1} d^4_{m n}(Phi) e^{i n phi2}
        let d0 = wigner_small_d(4, m, 0, o.cap_phi);
        let dp4 = wigner_small_d(4, m, 4, o.cap_phi);
        let dm4 = wigner_small_d(4, m, -4, o.cap_phi);
        let re_inner = CUBIC_W0 * d0 + CUBIC_W4 * (dp4 + dm4) * c2;
        let im_inner = CUBIC_W4 * (dp4 - dm4) * s2;
        let (s1, c1) = (m as f64 * o.phi1).sin_cos();
        let re = c1 * re_inner - s1 * im_inner;
        let im = s1 * re_inner + c1 * im_inner;
        if m == 0 {
            out[k] = norm * re;
            k += 1;
        } else {
            let sqrt2 = std::f64::consts::SQRT_2;
            out[k] = norm * sqrt2 * re;
            out[k + 1] = norm * sqrt2 * im;
            k += 2;
        }
    }
    out
}

/// Gated dual-phase evaluation: hard cells map to the indicator slot,
/// polycrystal cells to the orientation sub-basis.
pub fn eval_dual(
    phase: u16,
    orientation: Option<&Orientation>,
    polycrystal_phase: u16,
    orientation_basis: &BasisSpec,
) -> Result<Vec<f64>> {
    let m = orientation_basis.dim();
    let mut out = vec![0.0; 1 + m];
    if phase == polycrystal_phase {
        let o = orientation
            .ok_or_else(|| Error::invalid("polycrystal cell is missing an orientation"))?;
        let sub = match orientation_basis {
            BasisSpec::GshCubic3d => eval_gsh_cubic(o).to_vec(),
            BasisSpec::PlanarFourier2d { n_harmonics } => eval_planar(o.phi1, *n_harmonics),
            _ => return Err(Error::invalid("unsupported orientation sub-basis")),
        };
        out[1..].copy_from_slice(&sub);
    } else {
        out[0] = 1.0;
    }
    Ok(out)
}

/// The 24 proper rotations of the cubic point group, enumerated as signed
/// permutation matrices with determinant +1.
pub fn cubic_rotations() -> Vec<[[f64; 3]; 3]> {
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u8 {
            let s = [
                if signs & 1 == 0 { 1.0 } else { -1.0 },
                if signs & 2 == 0 { 1.0 } else { -1.0 },
                if signs & 4 == 0 { 1.0 } else { -1.0 },
            ];
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                m[i][p[i]] = s[i];
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if det > 0.5 {
                out.push(m);
            }
        }
    }
    assert_eq!(out.len(), 24);
    out
}
