use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);
const CI: Complex64 = Complex64::new(0.0, 1.0);

pub(crate) fn identity() -> Matrix2<Complex64> {
    Matrix2::new(C1, C0, C0, C1)
}

pub(crate) fn sigma_x() -> Matrix2<Complex64> {
    Matrix2::new(C0, C1, C1, C0)
}

pub(crate) fn sigma_y() -> Matrix2<Complex64> {
    Matrix2::new(C0, -CI, CI, C0)
}

pub(crate) fn sigma_z() -> Matrix2<Complex64> {
    Matrix2::new(C1, C0, C0, -C1)
}

/// Measurement axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn label(&self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl FromStr for Axis {
    type Err = ReadoutError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(ReadoutError::usage(format!("unknown axis `{other}`"))),
        }
    }
}

/// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn component(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn set_component(&mut self, axis: Axis, value: f64) {
        match axis {
            Axis::X => self.x = value,
            Axis::Y => self.y = value,
            Axis::Z => self.z = value,
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Norm at most `1 + 1e-9`.
    pub fn is_physical(&self) -> bool {
        self.norm() <= 1.0 + 1e-9
    }
}

/// The six axis eigenstates used for tomography.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CardinalState {
    #[serde(rename = "+z")]
    PlusZ,
    #[serde(rename = "-z")]
    MinusZ,
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
}

impl CardinalState {
    pub const ALL: [CardinalState; 6] = [
        CardinalState::PlusZ,
        CardinalState::MinusZ,
        CardinalState::PlusX,
        CardinalState::MinusX,
        CardinalState::PlusY,
        CardinalState::MinusY,
    ];

    pub fn axis(&self) -> Axis {
        match self {
            Self::PlusX | Self::MinusX => Axis::X,
            Self::PlusY | Self::MinusY => Axis::Y,
            Self::PlusZ | Self::MinusZ => Axis::Z,
        }
    }

    pub fn sign(&self) -> f64 {
        match self {
            Self::PlusX | Self::PlusY | Self::PlusZ => 1.0,
            _ => -1.0,
        }
    }

    pub fn opposite(&self) -> Self {
        match self {
            Self::PlusX => Self::MinusX,
            Self::MinusX => Self::PlusX,
            Self::PlusY => Self::MinusY,
            Self::MinusY => Self::PlusY,
            Self::PlusZ => Self::MinusZ,
            Self::MinusZ => Self::PlusZ,
        }
    }

    pub fn bloch(&self) -> BlochVector {
        let mut v = BlochVector::default();
        v.set_component(self.axis(), self.sign());
        v
    }

    pub fn density(&self) -> DensityMatrix {
        reconstruct_state(&self.bloch())
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::PlusZ => "+z",
            Self::MinusZ => "-z",
            Self::PlusX => "+x",
            Self::MinusX => "-x",
            Self::PlusY => "+y",
            Self::MinusY => "-y",
        }
    }
}

impl fmt::Display for CardinalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CardinalState {
    type Err = ReadoutError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        CardinalState::ALL
            .into_iter()
            .find(|c| c.label() == t)
            .ok_or_else(|| ReadoutError::usage(format!("unknown prepared state `{s}`")))
    }
}

/// 2x2 density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(pub Matrix2<Complex64>);

impl DensityMatrix {
    /// Density matrix of the normalised pure state `(up, down)`.
    pub fn pure(up: Complex64, down: Complex64) -> Self {
        let norm = (up.norm_sqr() + down.norm_sqr()).sqrt();
        let (a, b) = (up / norm, down / norm);
        Self(Matrix2::new(a * a.conj(), a * b.conj(), b * a.conj(), b * b.conj()))
    }

    pub fn matrix(&self) -> &Matrix2<Complex64> {
        &self.0
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// `(Tr ρσx, Tr ρσy, Tr ρσz)`, real parts.
    pub fn bloch(&self) -> BlochVector {
        let t = |s: Matrix2<Complex64>| (self.0 * s).trace().re;
        BlochVector::new(t(sigma_x()), t(sigma_y()), t(sigma_z()))
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues in ascending order (Hermitian part).
    pub fn eigenvalues(&self) -> [f64; 2] {
        let h = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        let tr: f64 = h.trace().re;
        let det = (h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)]).re;
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        [0.5 * tr - disc, 0.5 * tr + disc]
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    pub fn is_physical(&self) -> bool {
        self.hermiticity_error() <= 1e-12
            && (self.trace() - C1).norm() <= 1e-12
            && self.eigenvalues()[0] >= -1e-9
    }
}

/// `½(I + p_x σx + p_y σy + p_z σz)`, with no positivity projection.
pub fn reconstruct_state(p: &BlochVector) -> DensityMatrix {
    let r = |v: f64| Complex64::new(v, 0.0);
    DensityMatrix(
        (identity() + sigma_x() * r(p.x) + sigma_y() * r(p.y) + sigma_z() * r(p.z)) * r(0.5),
    )
}

/// `Tr(ρ_out ψ)` for a pure target `ψ`.
pub fn state_fidelity(rho_out: &DensityMatrix, psi_in: &DensityMatrix) -> Result<f64> {
    if (psi_in.purity() - 1.0).abs() > 1e-9 || (psi_in.trace() - C1).norm() > 1e-9 {
        return Err(ReadoutError::usage("fidelity target must be a pure state"));
    }
    Ok((rho_out.0 * psi_in.0).trace().re)
}

/// Measured Bloch vectors per prepared state.
pub type Projections = BTreeMap<CardinalState, BlochVector>;

/// Zeroes every component orthogonal to the preparation axis.
pub fn null_orthogonal_projections(projections: &Projections) -> Projections {
    projections
        .iter()
        .map(|(state, v)| {
            let mut out = BlochVector::default();
            out.set_component(state.axis(), v.component(state.axis()));
            (*state, out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub state: CardinalState,
    pub projection: BlochVector,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityTable {
    pub rows: Vec<FidelityRow>,
    pub average: f64,
}

/// Per-state fidelities and their average over the six cardinal states.
pub fn fidelity_table(projections: &Projections) -> Result<FidelityTable> {
    let rows = CardinalState::ALL
        .iter()
        .map(|state| {
            let p = projections
                .get(state)
                .ok_or_else(|| ReadoutError::usage(format!("missing prepared state {state}")))?;
            let fidelity = state_fidelity(&reconstruct_state(p), &state.density())?;
            Ok(FidelityRow { state: *state, projection: *p, fidelity })
        })
        .collect::<Result<Vec<_>>>()?;
    let average = average_fidelity(&rows)?;
    Ok(FidelityTable { rows, average })
}

/// Arithmetic mean over rows covering all six cardinal states.
pub fn average_fidelity(rows: &[FidelityRow]) -> Result<f64> {
    for state in CardinalState::ALL {
        if !rows.iter().any(|r| r.state == state) {
            return Err(ReadoutError::usage(format!("missing prepared state {state}")));
        }
    }
    Ok(rows.iter().map(|r| r.fidelity).sum::<f64>() / rows.len() as f64)
}
