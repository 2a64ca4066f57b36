//! State inference from photon counts and arrival times.
//!
//! A shot is called bright when its count exceeds the threshold `n_th` and
//! dark otherwise. [`optimize`] scans the mean detection error over a grid
//! of detection windows and thresholds; [`classify_time_resolved`] uses the
//! full arrival-time record instead of the count alone.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};
use crate::monte_carlo::PhotonTrace;
use crate::photon_statistics::{
    bright_pdf, dark_pdf, observed_down_prob, observed_up_prob, DetectionModel, ErrorRates,
};

/// Inferred fluorescence outcome of a shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Bright,
    Dark,
}

/// Threshold decision rule for a given detection window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub n_th: u32,
    pub t_det: f64,
}

impl ThresholdPolicy {
    pub fn new(n_th: u32, t_det: f64) -> Result<Self> {
        if !(t_det > 0.0) {
            return Err(ReadoutError::domain(format!("t_det must be positive, got {t_det}")));
        }
        Ok(Self { n_th, t_det })
    }
}

/// Bright iff `count > n_th`.
pub fn classify(count: u64, policy: &ThresholdPolicy) -> Outcome {
    if count > u64::from(policy.n_th) {
        Outcome::Bright
    } else {
        Outcome::Dark
    }
}

/// Bright and dark detection errors for one `(t_det, n_th)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `p_b(n <= n_th)`
    pub eps_b: f64,
    /// `p_d(n > n_th)`
    pub eps_d: f64,
    pub eps_mean: f64,
    /// `eps_mean` plus the mean preparation/shelving error.
    pub eps_total_mean: f64,
}

impl ErrorReport {
    fn from_parts(eps_b: f64, eps_d: f64) -> Self {
        let eps_mean = (eps_b + eps_d) / 2.0;
        Self { eps_b, eps_d, eps_mean, eps_total_mean: eps_mean }
    }

    pub fn with_errors(mut self, errors: &ErrorRates) -> Self {
        self.eps_total_mean = total_error(self.eps_mean, errors);
        self
    }
}

/// Mean discrimination error `(eps_b + eps_d) / 2` at threshold `n_th`.
pub fn mean_error(model: &DetectionModel, n_th: u32) -> ErrorReport {
    let bright = bright_pdf(model);
    let dark = dark_pdf(model);
    let n = n_th as usize;
    ErrorReport::from_parts(bright.cdf(n), dark.tail_above(n))
}

/// `eps_mean + (eps_down_tot + eps_up_tot) / 2`.
pub fn total_error(eps_mean: f64, errors: &ErrorRates) -> f64 {
    eps_mean + errors.mean()
}

/// Detection windows and thresholds to scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationGrid {
    t_values: Vec<f64>,
    n_values: Vec<u32>,
}

impl OptimizationGrid {
    pub fn new(t_values: Vec<f64>, n_values: Vec<u32>) -> Result<Self> {
        if t_values.is_empty() || n_values.is_empty() {
            return Err(ReadoutError::usage("optimisation grid must be non-empty on both axes"));
        }
        if !t_values.windows(2).all(|w| w[0] < w[1]) || !t_values.iter().all(|t| *t > 0.0) {
            return Err(ReadoutError::usage("detection times must be positive and strictly increasing"));
        }
        if !n_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(ReadoutError::usage("thresholds must be strictly increasing"));
        }
        Ok(Self { t_values, n_values })
    }

    /// Evenly spaced detection times given in microseconds, thresholds
    /// `n_min..=n_max`.
    pub fn from_range_us(
        t_min_us: f64,
        t_max_us: f64,
        t_step_us: f64,
        n_min: u32,
        n_max: u32,
    ) -> Result<Self> {
        if !(t_step_us > 0.0) || !(t_max_us >= t_min_us) || n_max < n_min {
            return Err(ReadoutError::usage("invalid grid bounds"));
        }
        let steps = ((t_max_us - t_min_us) / t_step_us + 1e-9).floor() as usize;
        let t_values = (0..=steps)
            .map(|i| (t_min_us + i as f64 * t_step_us) * 1e-6)
            .collect();
        Self::new(t_values, (n_min..=n_max).collect())
    }

    pub fn t_values(&self) -> &[f64] {
        &self.t_values
    }

    pub fn n_values(&self) -> &[u32] {
        &self.n_values
    }

    pub fn len(&self) -> usize {
        self.t_values.len() * self.n_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for OptimizationGrid {
    /// 50–600 µs in 5 µs steps, thresholds 0–30.
    fn default() -> Self {
        Self::from_range_us(50.0, 600.0, 5.0, 0, 30).expect("default grid is valid")
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub t_det: f64,
    pub n_th: u32,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub t_det: f64,
    pub n_th: u32,
    pub eps: f64,
    /// Every grid point, ordered by `t_det` then `n_th`.
    pub surface: Vec<SurfacePoint>,
}

/// Exhaustive grid search for the smallest mean error.
///
/// Ties go to the smaller `t_det`, then the smaller `n_th`.
pub fn optimize(
    rate_bright: f64,
    rate_dark: f64,
    lifetime: f64,
    grid: &OptimizationGrid,
) -> Result<OptimizationResult> {
    if grid.is_empty() {
        return Err(ReadoutError::usage("optimisation grid is empty"));
    }
    let models = grid
        .t_values
        .iter()
        .map(|&t| DetectionModel::new(rate_bright, rate_dark, lifetime, t))
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<Vec<SurfacePoint>> = models
        .par_iter()
        .map(|model| error_row(model, &grid.n_values))
        .collect();
    let surface: Vec<SurfacePoint> = rows.into_iter().flatten().collect();

    let mut best = surface[0];
    for p in &surface[1..] {
        if p.eps < best.eps {
            best = *p;
        }
    }
    Ok(OptimizationResult { t_det: best.t_det, n_th: best.n_th, eps: best.eps, surface })
}

fn error_row(model: &DetectionModel, thresholds: &[u32]) -> Vec<SurfacePoint> {
    let bright = bright_pdf(model);
    let dark = dark_pdf(model);
    // prefix sums of p_b and suffix sums of p_d
    let mut below = Vec::with_capacity(bright.probs().len());
    let mut acc = 0.0;
    for p in bright.probs() {
        acc += p;
        below.push(acc);
    }
    let mut above = vec![0.0; dark.probs().len()];
    let mut acc = 0.0;
    for (n, p) in dark.probs().iter().enumerate().rev() {
        above[n] = acc;
        acc += p;
    }
    thresholds
        .iter()
        .map(|&n_th| {
            let n = n_th as usize;
            let eps_b = below.get(n).copied().unwrap_or_else(|| acc_last(&below));
            let eps_d = above.get(n).copied().unwrap_or(0.0);
            SurfacePoint { t_det: model.t_det, n_th, eps: (eps_b + eps_d) / 2.0 }
        })
        .collect()
}

fn acc_last(v: &[f64]) -> f64 {
    v.last().copied().unwrap_or(0.0)
}

pub const SURFACE_CSV_HEADER: &str = "t_det_us,n_th,eps";

/// Seconds to microseconds, rounded to 1e-6 µs so grid values print cleanly.
pub(crate) fn seconds_to_us(t: f64) -> f64 {
    (t * 1e12).round() / 1e6
}

pub fn write_surface_csv<W: Write>(out: W, surface: &[SurfacePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_CSV_HEADER.split(','))?;
    for p in surface {
        w.write_record([
            seconds_to_us(p.t_det).to_string(),
            p.n_th.to_string(),
            p.eps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_surface_csv<R: Read>(input: R) -> Result<Vec<SurfacePoint>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, SURFACE_CSV_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t_us: f64 = parse_field(&rec, 0)?;
        out.push(SurfacePoint {
            t_det: t_us * 1e-6,
            n_th: parse_field(&rec, 1)?,
            eps: parse_field(&rec, 2)?,
        });
    }
    Ok(out)
}

pub(crate) fn check_header(headers: &csv::StringRecord, expected: &str) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    let want: Vec<&str> = expected.split(',').collect();
    if got != want {
        return Err(ReadoutError::usage(format!(
            "unexpected CSV header {:?}, expected `{expected}`",
            got.join(",")
        )));
    }
    Ok(())
}

pub(crate) fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| ReadoutError::usage(format!("missing column {i} in CSV row")))?;
    raw.trim()
        .parse()
        .map_err(|_| ReadoutError::usage(format!("cannot parse CSV field `{raw}`")))
}

/// Log-likelihood ratio `ln L(|↓⟩ prepared) - ln L(|↑⟩ prepared)` of an
/// arrival-time record, with equal priors.
///
/// The `|↓⟩` hypothesis is a constant rate `R_b` with an `eps_down_tot`
/// admixture of the background rate. The `|↑⟩` hypothesis starts at `R_d`
/// and switches to `R_b` at an exponentially distributed decay time
/// (mass `e^{-t_det/τ}` for no decay inside the window), with an
/// `eps_up_tot` admixture of constant `R_b`. The decay time is integrated
/// exactly on each inter-arrival segment.
pub fn time_resolved_log_ratio(
    trace: &PhotonTrace,
    model: &DetectionModel,
    errors: &ErrorRates,
) -> Result<f64> {
    trace.validate(model.t_det)?;
    let (rb, rd, tau, t_det) = (model.rate_bright, model.rate_dark, model.lifetime, model.t_det);
    let k = trace.count() as f64;
    let ln_ratio = if rd > 0.0 { (rd / rb).ln() } else { f64::NEG_INFINITY };

    // Everything relative to the constant-R_b likelihood R_b^k e^{-R_b t_det}.
    let ln_const_dark = scaled_power(k, ln_ratio) + (rb - rd) * t_det;

    let alpha = rb - rd - 1.0 / tau;
    let mut terms = Vec::with_capacity(trace.count() + 2);
    terms.push(-t_det / tau + ln_const_dark);
    let mut start = 0.0;
    let stops = trace.timestamps().iter().copied().chain(std::iter::once(t_det));
    for (j, stop) in stops.enumerate() {
        let width = stop - start;
        if width > 0.0 {
            let ln_seg = if alpha.abs() * width < 1e-300 {
                width.ln()
            } else {
                ((alpha * width).exp_m1() / alpha).ln()
            };
            terms.push(-tau.ln() + scaled_power(j as f64, ln_ratio) + alpha * start + ln_seg);
        }
        start = stop;
    }
    let ln_decay_model = log_sum_exp(&terms);

    let ln_down = log_sum_exp(&[
        (1.0 - errors.eps_down_tot).ln(),
        errors.eps_down_tot.ln() + ln_const_dark,
    ]);
    let ln_up = log_sum_exp(&[
        (1.0 - errors.eps_up_tot).ln() + ln_decay_model,
        errors.eps_up_tot.ln(),
    ]);
    Ok(ln_down - ln_up)
}

// j * ln(r) with 0 * ln(0) = 0
fn scaled_power(j: f64, ln_r: f64) -> f64 {
    if j == 0.0 {
        0.0
    } else {
        j * ln_r
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Maximum-likelihood bright/dark decision using photon arrival times.
pub fn classify_time_resolved(
    trace: &PhotonTrace,
    model: &DetectionModel,
    errors: &ErrorRates,
) -> Result<Outcome> {
    let llr = time_resolved_log_ratio(trace, model, errors)?;
    Ok(if llr > 0.0 { Outcome::Bright } else { Outcome::Dark })
}

/// Maximum-likelihood decision from the count alone, comparing the two
/// observed count distributions. Equivalent to the best threshold rule.
pub fn classify_count_likelihood(
    count: u64,
    model: &DetectionModel,
    errors: &ErrorRates,
) -> Outcome {
    let (nb, nd, f) = (model.mean_bright(), model.mean_dark(), model.decay_fraction());
    let down = observed_down_prob(count, nb, nd, errors.eps_down_tot);
    let up = observed_up_prob(count, nb, nd, f, errors.eps_up_tot);
    if down > up {
        Outcome::Bright
    } else {
        Outcome::Dark
    }
}
