use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::state::{
    identity, reconstruct_state, sigma_x, sigma_y, sigma_z, CardinalState, DensityMatrix,
    Projections,
};
use crate::discrimination::{check_header, parse_field};
use crate::error::{ReadoutError, Result};

pub const CHI_BASIS_LABELS: [&str; 4] = ["I", "X", "iY", "Z"];
pub const SURFACE_CSV_HEADER: &str = "theta_deg,phi_deg,error";

/// Training inputs for chi reconstruction, in order.
const TRAINING_STATES: [CardinalState; 4] = [
    CardinalState::PlusZ,
    CardinalState::MinusZ,
    CardinalState::PlusX,
    CardinalState::PlusY,
];

/// Smallest accepted ratio of extreme singular values of the transfer matrix.
const SINGULAR_RCOND: f64 = 1e-10;

fn basis() -> [Matrix2<Complex64>; 4] {
    [identity(), sigma_x(), sigma_y() * Complex64::new(0.0, 1.0), sigma_z()]
}

/// Process matrix in the `{I, σx, iσy, σz}` operator basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiMatrix(pub Matrix4<Complex64>);

impl ChiMatrix {
    pub fn identity() -> Self {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        Self(m)
    }

    /// Diagonal chi, e.g. a Pauli channel.
    pub fn from_diagonal(d: [f64; 4]) -> Self {
        let mut m = Matrix4::zeros();
        for (i, v) in d.into_iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        Self(m)
    }

    /// `ρ ↦ (1 - p) ρ + p I/2`.
    pub fn depolarizing(p: f64) -> Self {
        Self::from_diagonal([1.0 - 0.75 * p, 0.25 * p, 0.25 * p, 0.25 * p])
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn element(&self, m: usize, n: usize) -> Complex64 {
        self.0[(m, n)]
    }

    /// `Σ χ_mn E_m ρ E_n†`.
    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        let e = basis();
        let mut out = Matrix2::zeros();
        for m in 0..4 {
            for n in 0..4 {
                out += e[m] * rho.0 * e[n].adjoint() * self.0[(m, n)];
            }
        }
        DensityMatrix(out)
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest entry of `Σ χ_mn E_n† E_m - I`.
    pub fn trace_preservation_error(&self) -> f64 {
        let e = basis();
        let mut s = -identity();
        for m in 0..4 {
            for n in 0..4 {
                s += e[n].adjoint() * e[m] * self.0[(m, n)];
            }
        }
        s.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let h = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2], ev[3]]
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() <= 1e-12
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.trace_preservation_error() <= 1e-9
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.eigenvalues()[0] >= -1e-9
    }

    pub fn to_json(&self) -> ChiJson {
        let part = |f: fn(&Complex64) -> f64| {
            let mut rows = [[0.0; 4]; 4];
            for (m, row) in rows.iter_mut().enumerate() {
                for (n, v) in row.iter_mut().enumerate() {
                    *v = f(&self.0[(m, n)]);
                }
            }
            rows
        };
        ChiJson {
            basis: CHI_BASIS_LABELS.iter().map(|s| s.to_string()).collect(),
            real: part(|c| c.re),
            imag: part(|c| c.im),
            hermitian: self.is_hermitian(),
            trace_preserving: self.is_trace_preserving(),
            positive_semidefinite: self.is_positive_semidefinite(),
            eigenvalues: self.eigenvalues(),
            process_fidelity: process_fidelity(self),
        }
    }
}

/// Serialized chi with its physicality diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiJson {
    pub basis: Vec<String>,
    pub real: [[f64; 4]; 4],
    pub imag: [[f64; 4]; 4],
    pub hermitian: bool,
    pub trace_preserving: bool,
    pub positive_semidefinite: bool,
    pub eigenvalues: [f64; 4],
    pub process_fidelity: f64,
}

impl ChiJson {
    pub fn to_chi(&self) -> Result<ChiMatrix> {
        if self.basis.iter().map(String::as_str).ne(CHI_BASIS_LABELS) {
            return Err(ReadoutError::usage(format!(
                "chi basis must be {CHI_BASIS_LABELS:?}, got {:?}",
                self.basis
            )));
        }
        Ok(ChiMatrix(Matrix4::from_fn(|m, n| {
            Complex64::new(self.real[m][n], self.imag[m][n])
        })))
    }
}

/// Chi reproducing `outputs` for the inputs `+z, -z, +x, +y`.
pub fn reconstruct_chi(outputs: &[DensityMatrix; 4]) -> Result<ChiMatrix> {
    let inputs = TRAINING_STATES.map(|s| s.density());
    reconstruct_chi_from(&inputs, outputs)
}

/// Chi from the reconstructed outputs of the `+z, -z, +x, +y` states.
pub fn reconstruct_chi_from_projections(projections: &Projections) -> Result<ChiMatrix> {
    let mut outputs = [DensityMatrix(Matrix2::zeros()); 4];
    for (out, state) in outputs.iter_mut().zip(TRAINING_STATES) {
        let p = projections
            .get(&state)
            .ok_or_else(|| ReadoutError::usage(format!("missing prepared state {state}")))?;
        *out = reconstruct_state(p);
    }
    reconstruct_chi(&outputs)
}

/// Solves `vec ε(ρ_j) = Σ χ_mn vec(E_m ρ_j E_n†)` for four linearly
/// independent inputs, then symmetrizes the result.
pub fn reconstruct_chi_from(
    inputs: &[DensityMatrix; 4],
    outputs: &[DensityMatrix; 4],
) -> Result<ChiMatrix> {
    let e = basis();
    let mut a = DMatrix::<Complex64>::zeros(16, 16);
    let mut b = DVector::<Complex64>::zeros(16);
    for (j, (rho, out)) in inputs.iter().zip(outputs).enumerate() {
        for m in 0..4 {
            for n in 0..4 {
                let t = e[m] * rho.0 * e[n].adjoint();
                for r in 0..2 {
                    for c in 0..2 {
                        a[(4 * j + 2 * r + c, 4 * m + n)] = t[(r, c)];
                    }
                }
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                b[4 * j + 2 * r + c] = out.0[(r, c)];
            }
        }
    }
    let sv = a.singular_values();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if !(hi > 0.0 && lo / hi > SINGULAR_RCOND) {
        return Err(ReadoutError::usage(
            "chi reconstruction inputs are not linearly independent",
        ));
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| ReadoutError::usage("chi transfer matrix is singular"))?;
    let chi = Matrix4::from_fn(|m, n| x[4 * m + n]);
    Ok(ChiMatrix((chi + chi.adjoint()) * Complex64::new(0.5, 0.0)))
}

/// Overlap with the identity process, `Tr(χ_ideal χ) = Re χ_00`.
pub fn process_fidelity(chi: &ChiMatrix) -> f64 {
    chi.0[(0, 0)].re
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub error: f64,
}

/// Polar angles 0..=180 and azimuths 0..360 at 1° spacing.
pub fn default_surface_axes() -> (Vec<f64>, Vec<f64>) {
    ((0..=180).map(f64::from).collect(), (0..360).map(f64::from).collect())
}

/// `1 - ⟨Ψ|ε(|Ψ⟩⟨Ψ|)|Ψ⟩` for `|Ψ⟩ = cos(θ/2)|↑⟩ + e^{iφ} sin(θ/2)|↓⟩`,
/// polar-major order.
pub fn bloch_error_surface(
    chi: &ChiMatrix,
    thetas_deg: &[f64],
    phis_deg: &[f64],
) -> Result<Vec<ErrorSample>> {
    if thetas_deg.is_empty() || phis_deg.is_empty() {
        return Err(ReadoutError::usage("sphere grids must be nonempty"));
    }
    let mut out = Vec::with_capacity(thetas_deg.len() * phis_deg.len());
    for &theta_deg in thetas_deg {
        let half = 0.5 * theta_deg.to_radians();
        for &phi_deg in phis_deg {
            let up = Complex64::new(half.cos(), 0.0);
            let down = Complex64::from_polar(half.sin(), phi_deg.to_radians());
            let psi = DensityMatrix::pure(up, down);
            let kept = (chi.apply(&psi).0 * psi.0).trace().re;
            out.push(ErrorSample { theta_deg, phi_deg, error: 1.0 - kept });
        }
    }
    Ok(out)
}

pub fn write_surface_csv<W: Write>(out: W, samples: &[ErrorSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_CSV_HEADER.split(','))?;
    for s in samples {
        w.write_record([s.theta_deg.to_string(), s.phi_deg.to_string(), s.error.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_surface_csv<R: Read>(input: R) -> Result<Vec<ErrorSample>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, SURFACE_CSV_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(ErrorSample {
            theta_deg: parse_field(&rec, 0)?,
            phi_deg: parse_field(&rec, 1)?,
            error: parse_field(&rec, 2)?,
        });
    }
    Ok(out)
}
