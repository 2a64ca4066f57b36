//! JSON run configuration. Times are in seconds except the optimisation
//! grid, which is given in microseconds like the surface CSV.

use serde::{Deserialize, Serialize};

use crate::discrimination::OptimizationGrid;
use crate::error::Result;
use crate::mle_fit::{FitMode, Parameterization};
use crate::monte_carlo::DecayLaw;
use crate::photon_statistics::{DetectionModel, ErrorRates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: DetectionModel,
    #[serde(default)]
    pub errors: ErrorRates,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub fit: FitSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub t_min_us: f64,
    pub t_max_us: f64,
    pub t_step_us: f64,
    pub n_min: u32,
    pub n_max: u32,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self { t_min_us: 50.0, t_max_us: 600.0, t_step_us: 5.0, n_min: 0, n_max: 30 }
    }
}

impl OptimizeSection {
    pub fn grid(&self) -> Result<OptimizationGrid> {
        OptimizationGrid::from_range_us(
            self.t_min_us,
            self.t_max_us,
            self.t_step_us,
            self.n_min,
            self.n_max,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub shots: u64,
    pub seed: u64,
    pub decay_law: DecayLaw,
    /// Overrides `model.t_det`.
    pub t_det: Option<f64>,
    /// Threshold used for the classification summary.
    pub n_th: u32,
    pub export_traces: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            shots: 300_000,
            seed: 0,
            decay_law: DecayLaw::Exponential,
            t_det: None,
            n_th: 5,
            export_traces: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub mode: FitMode,
    pub parameterization: Parameterization,
    /// Overrides `model.t_det`.
    pub t_det: Option<f64>,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
}
