//! Photon-count distributions for the fluorescing (bright) and shelved
//! (dark) states.
//!
//! The dark distribution carries a first-order correction for decay of the
//! shelved level during the detection window: an ion that decays at a time
//! uniformly distributed inside the window contributes the normalised
//! incomplete-gamma difference returned by [`decay_term`].

mod special;

pub use special::{
    ln_factorial, ln_gamma, ln_poisson_pmf, poisson_pmf, reg_lower_gamma, reg_upper_gamma,
};

use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};

/// Largest `t_det / tau` for which the first-order decay treatment is accepted.
pub const MAX_DECAY_FRACTION: f64 = 0.1;

/// Relative gap between the two means below which the decay term switches to
/// its analytic limit.
const DEGENERATE_MEANS_REL: f64 = 1e-8;

/// Physical rates and detection window that define the count statistics.
///
/// Rates are in counts per second, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetectionModel")]
pub struct DetectionModel {
    pub rate_bright: f64,
    pub rate_dark: f64,
    pub lifetime: f64,
    pub t_det: f64,
}

#[derive(Deserialize)]
struct RawDetectionModel {
    rate_bright: f64,
    rate_dark: f64,
    lifetime: f64,
    t_det: f64,
}

impl TryFrom<RawDetectionModel> for DetectionModel {
    type Error = ReadoutError;

    fn try_from(raw: RawDetectionModel) -> Result<Self> {
        DetectionModel::new(raw.rate_bright, raw.rate_dark, raw.lifetime, raw.t_det)
    }
}

impl DetectionModel {
    pub fn new(rate_bright: f64, rate_dark: f64, lifetime: f64, t_det: f64) -> Result<Self> {
        let finite = [rate_bright, rate_dark, lifetime, t_det]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ReadoutError::domain("detection model fields must be finite"));
        }
        if !(rate_dark >= 0.0) || !(rate_bright > rate_dark) {
            return Err(ReadoutError::domain(format!(
                "need rate_bright > rate_dark >= 0, got {rate_bright} and {rate_dark}"
            )));
        }
        if !(lifetime > 0.0) {
            return Err(ReadoutError::domain(format!("lifetime must be positive, got {lifetime}")));
        }
        if !(t_det > 0.0) {
            return Err(ReadoutError::domain(format!("t_det must be positive, got {t_det}")));
        }
        if t_det / lifetime >= MAX_DECAY_FRACTION {
            return Err(ReadoutError::domain(format!(
                "t_det/lifetime = {} is outside the first-order regime (< {MAX_DECAY_FRACTION})",
                t_det / lifetime
            )));
        }
        Ok(Self { rate_bright, rate_dark, lifetime, t_det })
    }

    /// Same rates and lifetime with a different detection window.
    pub fn with_t_det(&self, t_det: f64) -> Result<Self> {
        Self::new(self.rate_bright, self.rate_dark, self.lifetime, t_det)
    }

    pub fn mean_bright(&self) -> f64 {
        self.rate_bright * self.t_det
    }

    pub fn mean_dark(&self) -> f64 {
        self.rate_dark * self.t_det
    }

    /// First-order probability that the shelved level decays inside the window.
    pub fn decay_fraction(&self) -> f64 {
        self.t_det / self.lifetime
    }

    /// Largest tabulated count: `ceil(n̄_b + 12 sqrt(n̄_b)) + 5`.
    pub fn support_max(&self) -> usize {
        support_max_for(self.mean_bright())
    }
}

pub(crate) fn support_max_for(mean_bright: f64) -> usize {
    (mean_bright + 12.0 * mean_bright.sqrt()).ceil() as usize + 5
}

/// Combined preparation and shelving error per prepared qubit state.
///
/// `eps_down_tot` is the probability that a `|↓⟩` (bright) preparation ends
/// up dark, `eps_up_tot` that an `|↑⟩` (shelved) preparation ends up bright.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawErrorRates")]
pub struct ErrorRates {
    pub eps_down_tot: f64,
    pub eps_up_tot: f64,
}

#[derive(Deserialize)]
struct RawErrorRates {
    eps_down_tot: f64,
    eps_up_tot: f64,
}

impl TryFrom<RawErrorRates> for ErrorRates {
    type Error = ReadoutError;

    fn try_from(raw: RawErrorRates) -> Result<Self> {
        ErrorRates::new(raw.eps_down_tot, raw.eps_up_tot)
    }
}

impl ErrorRates {
    pub const ZERO: ErrorRates = ErrorRates { eps_down_tot: 0.0, eps_up_tot: 0.0 };

    pub fn new(eps_down_tot: f64, eps_up_tot: f64) -> Result<Self> {
        for (name, v) in [("eps_down_tot", eps_down_tot), ("eps_up_tot", eps_up_tot)] {
            if !(0.0..0.5).contains(&v) {
                return Err(ReadoutError::domain(format!("{name} must lie in [0, 0.5), got {v}")));
            }
        }
        Ok(Self { eps_down_tot, eps_up_tot })
    }

    /// Mean of the two state errors.
    pub fn mean(&self) -> f64 {
        0.5 * (self.eps_down_tot + self.eps_up_tot)
    }
}

/// Probability mass function over counts `0..=support_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPmf {
    probs: Vec<f64>,
}

impl CountPmf {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ReadoutError::usage("count PMF needs at least one entry"));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(ReadoutError::domain(format!("negative or non-finite probability {bad}")));
        }
        Ok(Self { probs })
    }

    fn tabulate(support_max: usize, f: impl Fn(u64) -> f64) -> Self {
        Self { probs: (0..=support_max as u64).map(f).collect() }
    }

    pub fn support_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of exactly `n` counts; zero beyond the support.
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// `P(count <= n)`.
    pub fn cdf(&self, n: usize) -> f64 {
        self.probs.iter().take(n + 1).sum()
    }

    /// `P(count > n)` summed directly from the tail.
    pub fn tail_above(&self, n: usize) -> f64 {
        self.probs.iter().skip(n + 1).sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Total-variation distance to another distribution given as
    /// probabilities indexed by count.
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        let len = self.probs.len().max(other.len());
        0.5 * (0..len)
            .map(|n| (self.prob(n) - other.get(n).copied().unwrap_or(0.0)).abs())
            .sum::<f64>()
    }
}

/// `[P(n+1, n̄_b) - P(n+1, n̄_d)] / (n̄_b - n̄_d)`: count distribution of an
/// ion that starts dark and turns bright at a uniformly distributed time.
///
/// Falls back to the limit `e^{-x} x^n / n!` when the means coincide.
pub fn decay_term(n: u64, mean_bright: f64, mean_dark: f64) -> f64 {
    let gap = mean_bright - mean_dark;
    if gap.abs() < DEGENERATE_MEANS_REL * mean_bright.abs().max(f64::MIN_POSITIVE) {
        return poisson_or_zero(n, 0.5 * (mean_bright + mean_dark));
    }
    let a = n as f64 + 1.0;
    let hi = reg_lower_gamma(mean_bright, a).unwrap_or(f64::NAN);
    let lo = reg_lower_gamma(mean_dark, a).unwrap_or(f64::NAN);
    ((hi - lo) / gap).max(0.0)
}

/// Partial derivatives of [`decay_term`] with respect to `(n̄_b, n̄_d)`.
pub fn decay_term_gradient(n: u64, mean_bright: f64, mean_dark: f64) -> (f64, f64) {
    let gap = mean_bright - mean_dark;
    if gap.abs() < DEGENERATE_MEANS_REL * mean_bright.abs().max(f64::MIN_POSITIVE) {
        let half = 0.5 * poisson_derivative(n, 0.5 * (mean_bright + mean_dark));
        return (half, half);
    }
    let g = decay_term(n, mean_bright, mean_dark);
    let pb = poisson_or_zero(n, mean_bright);
    let pd = poisson_or_zero(n, mean_dark);
    ((pb - g) / gap, (g - pd) / gap)
}

fn poisson_or_zero(n: u64, mean: f64) -> f64 {
    poisson_pmf(n, mean.max(0.0)).unwrap_or(0.0)
}

/// `d/dm Poiss(n, m) = Poiss(n-1, m) - Poiss(n, m)`.
pub fn poisson_derivative(n: u64, mean: f64) -> f64 {
    let prev = if n == 0 { 0.0 } else { poisson_or_zero(n - 1, mean) };
    prev - poisson_or_zero(n, mean)
}

/// Dark-state count probability at `n` in terms of the two means.
pub fn dark_prob(n: u64, mean_bright: f64, mean_dark: f64, decay_fraction: f64) -> f64 {
    (1.0 - decay_fraction) * poisson_or_zero(n, mean_dark)
        + decay_fraction * decay_term(n, mean_bright, mean_dark)
}

/// `p̃↓(n)`: bright Poisson with an `eps_down` admixture of the dark Poisson.
pub fn observed_down_prob(n: u64, mean_bright: f64, mean_dark: f64, eps_down: f64) -> f64 {
    (1.0 - eps_down) * poisson_or_zero(n, mean_bright) + eps_down * poisson_or_zero(n, mean_dark)
}

/// `p̃↑(n)`: dark Poisson, decay term and an `eps_up` bright admixture.
pub fn observed_up_prob(
    n: u64,
    mean_bright: f64,
    mean_dark: f64,
    decay_fraction: f64,
    eps_up: f64,
) -> f64 {
    (1.0 - eps_up - decay_fraction) * poisson_or_zero(n, mean_dark)
        + decay_fraction * decay_term(n, mean_bright, mean_dark)
        + eps_up * poisson_or_zero(n, mean_bright)
}

/// `p_b(n) = Poiss(n, n̄_b)`.
pub fn bright_pdf(model: &DetectionModel) -> CountPmf {
    let mean = model.mean_bright();
    CountPmf::tabulate(model.support_max(), |n| poisson_or_zero(n, mean))
}

/// Dark-state distribution with the first-order decay correction.
pub fn dark_pdf(model: &DetectionModel) -> CountPmf {
    let (nb, nd, f) = (model.mean_bright(), model.mean_dark(), model.decay_fraction());
    CountPmf::tabulate(model.support_max(), |n| dark_prob(n, nb, nd, f))
}

/// Observed distribution for a `|↓⟩` preparation.
pub fn observed_pdf_down(model: &DetectionModel, errors: &ErrorRates) -> CountPmf {
    let (nb, nd, eps) = (model.mean_bright(), model.mean_dark(), errors.eps_down_tot);
    CountPmf::tabulate(model.support_max(), |n| observed_down_prob(n, nb, nd, eps))
}

/// Observed distribution for a `|↑⟩` preparation.
pub fn observed_pdf_up(model: &DetectionModel, errors: &ErrorRates) -> Result<CountPmf> {
    let (nb, nd, f) = (model.mean_bright(), model.mean_dark(), model.decay_fraction());
    let eps = errors.eps_up_tot;
    if eps + f >= 1.0 {
        return Err(ReadoutError::domain(format!(
            "eps_up_tot + t_det/tau = {} leaves a negative dark weight",
            eps + f
        )));
    }
    Ok(CountPmf::tabulate(model.support_max(), |n| observed_up_prob(n, nb, nd, f, eps)))
}
