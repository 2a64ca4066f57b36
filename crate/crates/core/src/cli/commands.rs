use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::discrimination::{mean_error, optimize, write_surface_csv};
use crate::error::{ReadoutError, Result};
use crate::error_budget::{BudgetConfig, BudgetReport};
use crate::mle_fit::{fit, fit_independent, FitConstants, FitMode, FitOptions, FitResult, IndependentFit};
use crate::monte_carlo::{
    read_histogram_csv, simulate_histogram, simulate_traces, write_histogram_csv,
    write_traces_csv, CountHistogram, DecayLaw, PreparedState, SimConfig,
};
use crate::tomography::{
    bloch_error_surface, default_surface_axes, fidelity_table, null_orthogonal_projections,
    projections_from_records, read_records_csv, reconstruct_chi_from_projections,
    write_surface_csv as write_bloch_csv, ChiJson, FidelityRow, MissingAxisPolicy,
};

/// Provenance block carried by every JSON output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    /// SHA-256 of each data input, keyed by role.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<&'static str, String>,
}

impl Metadata {
    fn new(command: &'static str, config: &[u8]) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: sha256_hex(config),
            inputs: BTreeMap::new(),
        }
    }

    fn with_input(mut self, role: &'static str, bytes: &[u8]) -> Self {
        self.inputs.insert(role, sha256_hex(bytes));
        self
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        ReadoutError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn load_config(path: &Path) -> Result<(Vec<u8>, RunConfig)> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| ReadoutError::Usage(format!("{} is not UTF-8", path.display())))?;
    let cfg = RunConfig::from_json(&text)?;
    Ok((bytes, cfg))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn us(t: f64) -> f64 {
    (t * 1e12).round() / 1e6
}

#[derive(Serialize)]
struct OptimumJson {
    metadata: Metadata,
    t_det_us: f64,
    n_th: u32,
    eps: f64,
    eps_b: f64,
    eps_d: f64,
    eps_total_mean: f64,
    grid_points: usize,
}

/// Writes `surface.csv` and `optimum.json`.
pub fn cmd_optimize(config: &Path, out: &Path) -> Result<Vec<String>> {
    let (bytes, cfg) = load_config(config)?;
    let grid = cfg.optimize.grid()?;
    let m = &cfg.model;
    let result = optimize(m.rate_bright, m.rate_dark, m.lifetime, &grid)?;
    let report = mean_error(&m.with_t_det(result.t_det)?, result.n_th).with_errors(&cfg.errors);

    fs::create_dir_all(out)?;
    write_surface_csv(create_file(&out.join("surface.csv"))?, &result.surface)?;
    let summary = OptimumJson {
        metadata: Metadata::new("optimize", &bytes),
        t_det_us: us(result.t_det),
        n_th: result.n_th,
        eps: result.eps,
        eps_b: report.eps_b,
        eps_d: report.eps_d,
        eps_total_mean: report.eps_total_mean,
        grid_points: result.surface.len(),
    };
    write_json(&out.join("optimum.json"), &summary)?;
    Ok(vec![format!(
        "optimum: t_det = {} us, n_th = {}, eps = {:.4e}",
        summary.t_det_us, summary.n_th, summary.eps
    )])
}

#[derive(Serialize)]
struct StateSummary {
    total_shots: u64,
    mean_count: f64,
    /// Shots classified against the prepared state at `n_th`.
    misclassified: u64,
    error: f64,
}

#[derive(Serialize)]
struct SimulateJson {
    metadata: Metadata,
    shots: u64,
    seed: u64,
    decay_law: DecayLaw,
    t_det_us: f64,
    n_th: u32,
    down: StateSummary,
    up: StateSummary,
    mean_error: f64,
}

/// Writes `hist_down.csv`, `hist_up.csv`, `simulate.json` and optionally
/// `traces_down.csv`, `traces_up.csv`.
pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<String>> {
    let (bytes, cfg) = load_config(config)?;
    let s = cfg.simulate;
    let model = match s.t_det {
        Some(t) => cfg.model.with_t_det(t)?,
        None => cfg.model,
    };
    let seed = seed.unwrap_or(s.seed);
    let sim = SimConfig::new(model, cfg.errors, s.shots, seed, s.decay_law)?;

    fs::create_dir_all(out)?;
    let mut summaries = Vec::new();
    for prepared in [PreparedState::Down, PreparedState::Up] {
        let hist = simulate_histogram(prepared, &sim)?;
        write_histogram_csv(create_file(&out.join(format!("hist_{}.csv", prepared.label())))?, &hist)?;
        if s.export_traces {
            let traces = simulate_traces(prepared, &sim, None)?;
            write_traces_csv(create_file(&out.join(format!("traces_{}.csv", prepared.label())))?, &traces)?;
        }
        summaries.push(state_summary(prepared, &hist, s.n_th));
    }
    let up = summaries.pop().expect("two states");
    let down = summaries.pop().expect("two states");
    let summary = SimulateJson {
        metadata: Metadata::new("simulate", &bytes),
        shots: s.shots,
        seed,
        decay_law: s.decay_law,
        t_det_us: us(model.t_det),
        n_th: s.n_th,
        mean_error: 0.5 * (down.error + up.error),
        down,
        up,
    };
    write_json(&out.join("simulate.json"), &summary)?;
    Ok(vec![format!(
        "simulated {} shots per state; threshold error down {:.4e}, up {:.4e}",
        s.shots, summary.down.error, summary.up.error
    )])
}

fn state_summary(prepared: PreparedState, hist: &CountHistogram, n_th: u32) -> StateSummary {
    let bright = hist.above(n_th as usize);
    let misclassified = match prepared {
        PreparedState::Down => hist.total_shots() - bright,
        PreparedState::Up => bright,
    };
    StateSummary {
        total_shots: hist.total_shots(),
        mean_count: hist.mean(),
        misclassified,
        error: misclassified as f64 / hist.total_shots() as f64,
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitOutput {
    Joint(FitResult),
    Independent(IndependentFit),
}

#[derive(Serialize)]
struct FitJson {
    metadata: Metadata,
    mode: FitMode,
    t_det: f64,
    lifetime: f64,
    result: FitOutput,
}

/// Writes `fit.json`.
pub fn cmd_fit(
    config: &Path,
    down: &Path,
    up: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<Vec<String>> {
    let (bytes, cfg) = load_config(config)?;
    let down_bytes = read_bytes(down)?;
    let up_bytes = read_bytes(up)?;
    let hist_down = read_histogram_csv(down_bytes.as_slice())?;
    let hist_up = read_histogram_csv(up_bytes.as_slice())?;

    let f = cfg.fit;
    let t_det = f.t_det.or(cfg.simulate.t_det).unwrap_or(cfg.model.t_det);
    let constants = FitConstants::new(t_det, cfg.model.lifetime)?;
    let options = FitOptions {
        parameterization: f.parameterization,
        bootstrap_resamples: f.bootstrap,
        bootstrap_seed: seed.unwrap_or(f.bootstrap_seed),
        ..FitOptions::default()
    };
    let (result, line) = match f.mode {
        FitMode::Joint => {
            let r = fit(&hist_down, &hist_up, constants, &options)?;
            let line = format!(
                "fit: n_b = {:.4}, n_d = {:.4}, eps_down = {:.3e}({:.1e}), eps_up = {:.3e}({:.1e})",
                r.n_bar_b,
                r.n_bar_d,
                r.eps_down_tot,
                r.std_errors.eps_down_tot,
                r.eps_up_tot,
                r.std_errors.eps_up_tot
            );
            (FitOutput::Joint(r), line)
        }
        FitMode::Independent => {
            let r = fit_independent(&hist_down, &hist_up, constants, &options)?;
            let line = format!(
                "fit: eps_down = {:.3e}, eps_up = {:.3e}",
                r.down.eps_down_tot, r.up.eps_up_tot
            );
            (FitOutput::Independent(r), line)
        }
    };
    fs::create_dir_all(out)?;
    let json = FitJson {
        metadata: Metadata::new("fit", &bytes)
            .with_input("down", &down_bytes)
            .with_input("up", &up_bytes),
        mode: f.mode,
        t_det,
        lifetime: cfg.model.lifetime,
        result,
    };
    write_json(&out.join("fit.json"), &json)?;
    Ok(vec![line])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TomoMode {
    /// Per-state fidelities and their average.
    State,
    /// Chi matrix and Bloch-sphere error surface.
    Process { null_orthogonal: bool },
}

#[derive(Serialize)]
struct FidelityJson {
    metadata: Metadata,
    rows: Vec<FidelityRow>,
    average_fidelity: f64,
}

#[derive(Serialize)]
struct ChiOutput {
    metadata: Metadata,
    nulled: bool,
    #[serde(flatten)]
    chi: ChiJson,
}

/// State mode writes `fidelity.json`; process mode writes `chi.json` and
/// `bloch_error.csv`.
pub fn cmd_tomo(records: &Path, mode: TomoMode, fill_missing: bool, out: &Path) -> Result<Vec<String>> {
    let bytes = read_bytes(records)?;
    let recs = read_records_csv(bytes.as_slice())?;
    let policy = if fill_missing {
        MissingAxisPolicy::FillBySymmetry
    } else {
        MissingAxisPolicy::Reject
    };
    let projections = projections_from_records(&recs, policy)?;
    fs::create_dir_all(out)?;
    match mode {
        TomoMode::State => {
            let table = fidelity_table(&projections)?;
            let json = FidelityJson {
                metadata: Metadata::new("tomo", &bytes),
                rows: table.rows,
                average_fidelity: table.average,
            };
            write_json(&out.join("fidelity.json"), &json)?;
            Ok(vec![format!("average fidelity: {:.6}", table.average)])
        }
        TomoMode::Process { null_orthogonal } => {
            let used = if null_orthogonal {
                null_orthogonal_projections(&projections)
            } else {
                projections
            };
            let chi = reconstruct_chi_from_projections(&used)?;
            let (thetas, phis) = default_surface_axes();
            let surface = bloch_error_surface(&chi, &thetas, &phis)?;
            write_bloch_csv(create_file(&out.join("bloch_error.csv"))?, &surface)?;
            let json = ChiOutput {
                metadata: Metadata::new("tomo", &bytes),
                nulled: null_orthogonal,
                chi: chi.to_json(),
            };
            write_json(&out.join("chi.json"), &json)?;
            Ok(vec![format!(
                "process fidelity: {:.6} (positive semidefinite: {})",
                json.chi.process_fidelity, json.chi.positive_semidefinite
            )])
        }
    }
}

#[derive(Serialize)]
struct BudgetJson {
    metadata: Metadata,
    reports: BTreeMap<String, BudgetReport>,
}

/// Writes `budget.json`.
pub fn cmd_budget(config: &Path, out: &Path) -> Result<Vec<String>> {
    let bytes = read_bytes(config)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| ReadoutError::Usage(format!("{} is not UTF-8", config.display())))?;
    let reports = BudgetConfig::from_json(&text)?.combine()?;
    fs::create_dir_all(out)?;
    let lines = reports
        .iter()
        .map(|(k, r)| {
            format!("{k}: shelving {:.4e}, overall {:.4e}", r.shelving_total, r.overall)
        })
        .collect();
    write_json(&out.join("budget.json"), &BudgetJson { metadata: Metadata::new("budget", &bytes), reports })?;
    Ok(lines)
}
