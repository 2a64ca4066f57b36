//! Maximum-likelihood fits of count histograms to the observed `|↓⟩` and
//! `|↑⟩` count distributions.
//!
//! The detection window and metastable lifetime are held fixed; the two
//! means and the two combined preparation/shelving errors are estimated.
//! Optimisation runs BFGS on `(ln n̄_b, ln n̄_d, logit 2ε↓, logit 2ε↑)` so that
//! the means stay positive and the errors stay in `(0, 0.5)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};
use crate::monte_carlo::CountHistogram;
use crate::photon_statistics::{
    decay_term, decay_term_gradient, poisson_derivative, poisson_pmf, MAX_DECAY_FRACTION,
};

/// The four fitted quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub n_bar_b: f64,
    pub n_bar_d: f64,
    pub eps_down_tot: f64,
    pub eps_up_tot: f64,
}

impl FitParams {
    fn to_array(self) -> [f64; 4] {
        [self.n_bar_b, self.n_bar_d, self.eps_down_tot, self.eps_up_tot]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self { n_bar_b: a[0], n_bar_d: a[1], eps_down_tot: a[2], eps_up_tot: a[3] }
    }
}

/// Detection constants that are not fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConstants {
    pub t_det: f64,
    pub lifetime: f64,
}

impl FitConstants {
    pub fn new(t_det: f64, lifetime: f64) -> Result<Self> {
        if !(t_det > 0.0) || !(lifetime > 0.0) {
            return Err(ReadoutError::domain("t_det and lifetime must be positive"));
        }
        if t_det / lifetime >= MAX_DECAY_FRACTION {
            return Err(ReadoutError::domain("t_det/lifetime outside the first-order regime"));
        }
        Ok(Self { t_det, lifetime })
    }

    fn decay_fraction(&self) -> f64 {
        self.t_det / self.lifetime
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Both histograms share `n̄_b, n̄_d`.
    #[default]
    Joint,
    /// Each histogram is fitted on its own; see [`IndependentFit`].
    Independent,
}

/// Whether the optimiser works on mean counts or on rates `mean / t_det`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    #[default]
    Means,
    Rates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub init: Option<FitParams>,
    pub parameterization: Parameterization,
    /// Number of multinomial bootstrap resamples; 0 disables the bootstrap.
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub max_iterations: usize,
    /// Convergence threshold on the per-shot gradient in the transformed space.
    pub gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            parameterization: Parameterization::Means,
            bootstrap_resamples: 0,
            bootstrap_seed: 0,
            max_iterations: 1000,
            gradient_tolerance: 1e-8,
        }
    }
}

/// Standard errors of the fitted quantities. `NaN` marks a parameter that
/// was not fitted or whose information matrix was singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub n_bar_b: f64,
    pub n_bar_d: f64,
    pub eps_down_tot: f64,
    pub eps_up_tot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n_bar_b: f64,
    pub n_bar_d: f64,
    pub eps_down_tot: f64,
    pub eps_up_tot: f64,
    /// From the inverse observed information.
    pub std_errors: StdErrors,
    pub bootstrap_std_errors: Option<StdErrors>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn params(&self) -> FitParams {
        FitParams {
            n_bar_b: self.n_bar_b,
            n_bar_d: self.n_bar_d,
            eps_down_tot: self.eps_down_tot,
            eps_up_tot: self.eps_up_tot,
        }
    }
}

/// Outcome of [`FitMode::Independent`]: the `|↓⟩` fit does not estimate
/// `eps_up_tot` and vice versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentFit {
    pub down: FitResult,
    pub up: FitResult,
}

/// Weighted histograms plus the parameters the fit is allowed to move.
struct Problem<'a> {
    down: &'a [f64],
    up: &'a [f64],
    constants: FitConstants,
    active: [bool; 4],
}

fn as_weights(h: &CountHistogram) -> Vec<f64> {
    h.bins().iter().map(|c| *c as f64).collect()
}

/// `Σ h↓(n) ln p̃↓(n) + Σ h↑(n) ln p̃↑(n)`; `-inf` if a populated bin has zero
/// probability.
pub fn log_likelihood(
    params: &FitParams,
    hist_down: &CountHistogram,
    hist_up: &CountHistogram,
    constants: &FitConstants,
) -> f64 {
    log_likelihood_weighted(params, &as_weights(hist_down), &as_weights(hist_up), constants)
}

/// [`log_likelihood`] for real-valued bin weights.
pub fn log_likelihood_weighted(
    params: &FitParams,
    down: &[f64],
    up: &[f64],
    constants: &FitConstants,
) -> f64 {
    evaluate(params, down, up, constants, false).0
}

/// Analytic gradient of [`log_likelihood`] with respect to
/// `(n̄_b, n̄_d, eps_down_tot, eps_up_tot)`.
pub fn log_likelihood_gradient(
    params: &FitParams,
    hist_down: &CountHistogram,
    hist_up: &CountHistogram,
    constants: &FitConstants,
) -> [f64; 4] {
    log_likelihood_gradient_weighted(params, &as_weights(hist_down), &as_weights(hist_up), constants)
}

pub fn log_likelihood_gradient_weighted(
    params: &FitParams,
    down: &[f64],
    up: &[f64],
    constants: &FitConstants,
) -> [f64; 4] {
    evaluate(params, down, up, constants, true).1
}

fn evaluate(
    params: &FitParams,
    down: &[f64],
    up: &[f64],
    constants: &FitConstants,
    with_gradient: bool,
) -> (f64, [f64; 4]) {
    let FitParams { n_bar_b: b, n_bar_d: d, eps_down_tot: ed, eps_up_tot: eu } = *params;
    let f = constants.decay_fraction();
    let pois = |n: u64, m: f64| poisson_pmf(n, m).unwrap_or(0.0);
    let mut ll = 0.0;
    let mut grad = [0.0; 4];

    for (n, &w) in down.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let n = n as u64;
        let (pb, pd) = (pois(n, b), pois(n, d));
        let p = (1.0 - ed) * pb + ed * pd;
        if !(p > 0.0) {
            return (f64::NEG_INFINITY, [f64::NAN; 4]);
        }
        ll += w * p.ln();
        if with_gradient {
            let s = w / p;
            grad[0] += s * (1.0 - ed) * poisson_derivative(n, b);
            grad[1] += s * ed * poisson_derivative(n, d);
            grad[2] += s * (pd - pb);
        }
    }
    for (n, &w) in up.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let n = n as u64;
        let (pb, pd, g) = (pois(n, b), pois(n, d), decay_term(n, b, d));
        let q = (1.0 - eu - f) * pd + f * g + eu * pb;
        if !(q > 0.0) {
            return (f64::NEG_INFINITY, [f64::NAN; 4]);
        }
        ll += w * q.ln();
        if with_gradient {
            let s = w / q;
            let (gb, gd) = decay_term_gradient(n, b, d);
            grad[0] += s * (f * gb + eu * poisson_derivative(n, b));
            grad[1] += s * ((1.0 - eu - f) * poisson_derivative(n, d) + f * gd);
            grad[3] += s * (pb - pd);
        }
    }
    (ll, grad)
}

// Transformed coordinates: ln of the means (or rates), logit of 2ε.
struct Transform {
    mean_offset: f64,
}

impl Transform {
    fn new(param: Parameterization, constants: &FitConstants) -> Self {
        let mean_offset = match param {
            Parameterization::Means => 0.0,
            Parameterization::Rates => constants.t_det.ln(),
        };
        Self { mean_offset }
    }

    fn to_natural(&self, u: &[f64; 4]) -> [f64; 4] {
        let half_sigmoid = |x: f64| 0.5 / (1.0 + (-x).exp());
        [
            (u[0] + self.mean_offset).exp(),
            (u[1] + self.mean_offset).exp(),
            half_sigmoid(u[2]),
            half_sigmoid(u[3]),
        ]
    }

    fn to_transformed(&self, t: &[f64; 4]) -> [f64; 4] {
        let logit2 = |e: f64| {
            let s = (2.0 * e).clamp(1e-300, 1.0 - 1e-16);
            (s / (1.0 - s)).ln()
        };
        [
            t[0].ln() - self.mean_offset,
            t[1].ln() - self.mean_offset,
            logit2(t[2]),
            logit2(t[3]),
        ]
    }

    // dθ/du, elementwise
    fn jacobian(&self, t: &[f64; 4]) -> [f64; 4] {
        [t[0], t[1], t[2] * (1.0 - 2.0 * t[2]), t[3] * (1.0 - 2.0 * t[3])]
    }
}

struct Optimum {
    theta: [f64; 4],
    ll: f64,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

impl Problem<'_> {
    fn total_weight(&self) -> f64 {
        self.down.iter().sum::<f64>() + self.up.iter().sum::<f64>()
    }

    fn value_and_gradient(&self, theta: &[f64; 4]) -> (f64, [f64; 4]) {
        let p = FitParams::from_array(*theta);
        let (ll, g) = evaluate(&p, self.down, self.up, &self.constants, true);
        (ll, g)
    }

    fn minimise(&self, init: [f64; 4], transform: &Transform, options: &FitOptions) -> Optimum {
        let active: Vec<usize> = (0..4).filter(|i| self.active[*i]).collect();
        let dim = active.len();
        let scale = 1.0 / self.total_weight();
        let mut u_full = transform.to_transformed(&init);

        // objective: -LL / N in the transformed space, restricted to active coords
        let objective = |u_full: &[f64; 4]| -> (f64, DVector<f64>) {
            let theta = transform.to_natural(u_full);
            let (ll, g) = self.value_and_gradient(&theta);
            let jac = transform.jacobian(&theta);
            let grad = DVector::from_iterator(dim, active.iter().map(|&i| -g[i] * jac[i] * scale));
            (-ll * scale, grad)
        };

        let (mut f, mut g) = objective(&u_full);
        let mut h_inv = DMatrix::<f64>::identity(dim, dim);
        let mut iterations = 0;
        let mut converged = g.amax() < options.gradient_tolerance;
        while !converged && iterations < options.max_iterations {
            iterations += 1;
            let mut dir = -(&h_inv * &g);
            if dir.dot(&g) >= 0.0 {
                h_inv = DMatrix::identity(dim, dim);
                dir = -g.clone();
            }
            let max_step = dir.amax();
            if max_step > 2.0 {
                dir *= 2.0 / max_step;
            }
            let slope = dir.dot(&g);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial = u_full;
                for (k, &i) in active.iter().enumerate() {
                    trial[i] += alpha * dir[k];
                }
                let (ft, gt) = objective(&trial);
                // Near the optimum the decrease drops below rounding noise in f;
                // fall back to requiring a smaller gradient.
                let in_noise = (ft - f).abs() <= 8.0 * f64::EPSILON * f.abs() && gt.amax() < g.amax();
                if ft.is_finite() && (ft <= f + 1e-4 * alpha * slope || in_noise) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((trial, ft, gt)) = accepted else {
                break;
            };
            let s = DVector::from_iterator(dim, active.iter().map(|&i| trial[i] - u_full[i]));
            let y = &gt - &g;
            let sy = s.dot(&y);
            if sy > 1e-20 {
                let rho = 1.0 / sy;
                let eye = DMatrix::<f64>::identity(dim, dim);
                let left = &eye - rho * &s * y.transpose();
                let right = &eye - rho * &y * s.transpose();
                h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
            }
            let stalled = (f - ft).abs() <= f64::EPSILON * f.abs() && s.amax() < 1e-14;
            u_full = trial;
            f = ft;
            g = gt;
            converged = g.amax() < options.gradient_tolerance;
            if stalled {
                break;
            }
        }
        let theta = transform.to_natural(&u_full);
        Optimum {
            theta,
            ll: -f / scale,
            iterations,
            gradient_norm: g.amax(),
            converged,
        }
    }

    /// Standard errors from the inverse of the observed information, by
    /// central differences of the analytic gradient in natural coordinates.
    fn std_errors(&self, theta: &[f64; 4]) -> StdErrors {
        let active: Vec<usize> = (0..4).filter(|i| self.active[*i]).collect();
        let dim = active.len();
        let mut info = DMatrix::<f64>::zeros(dim, dim);
        for (col, &j) in active.iter().enumerate() {
            let mut h = 1e-4 * theta[j].abs().max(1e-6);
            if theta[j] > 0.0 {
                h = h.min(0.5 * theta[j]);
            }
            let mut plus = *theta;
            let mut minus = *theta;
            plus[j] += h;
            minus[j] -= h;
            let (_, gp) = self.value_and_gradient(&plus);
            let (_, gm) = self.value_and_gradient(&minus);
            for (row, &i) in active.iter().enumerate() {
                info[(row, col)] = -(gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let info = 0.5 * (&info + info.transpose());
        let mut se = [f64::NAN; 4];
        if let Some(cov) = info.try_inverse() {
            for (k, &i) in active.iter().enumerate() {
                let v = cov[(k, k)];
                se[i] = if v >= 0.0 { v.sqrt() } else { f64::NAN };
            }
        }
        StdErrors { n_bar_b: se[0], n_bar_d: se[1], eps_down_tot: se[2], eps_up_tot: se[3] }
    }
}

fn check_histogram(name: &str, weights: &[f64]) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if total < 100.0 {
        return Err(ReadoutError::usage(format!(
            "{name} histogram has {total} shots; at least 100 are required"
        )));
    }
    if weights.iter().filter(|w| **w > 0.0).count() < 2 {
        return Err(ReadoutError::usage(format!("{name} histogram is degenerate (single bin)")));
    }
    Ok(())
}

fn weighted_mean(w: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut s, mut m) = (0.0, 0.0);
    for (n, &c) in w.iter().enumerate().filter(|(n, _)| keep(*n)) {
        s += c;
        m += c * n as f64;
    }
    (s > 0.0).then(|| m / s)
}

/// Initial guess: split both histograms at the midpoint of their means.
fn initial_guess(down: &[f64], up: &[f64], constants: &FitConstants) -> [f64; 4] {
    let all_mean = |w: &[f64]| weighted_mean(w, |_| true);
    let m_down = all_mean(down);
    let m_up = all_mean(up);
    let split = match (m_down, m_up) {
        (Some(a), Some(b)) => (0.5 * (a + b)).floor() as usize,
        (Some(a), None) => (0.5 * a).floor() as usize,
        (None, Some(b)) => (2.0 * b).floor() as usize,
        (None, None) => 0,
    };
    let total = |w: &[f64]| w.iter().sum::<f64>();
    let below = |w: &[f64]| w.iter().take(split + 1).sum::<f64>();
    let b0 = weighted_mean(down, |n| n > split)
        .or_else(|| weighted_mean(up, |n| n > split))
        .unwrap_or(split as f64 + 1.0)
        .max(1e-3);
    let d0 = weighted_mean(up, |n| n <= split)
        .or_else(|| weighted_mean(down, |n| n <= split))
        .unwrap_or(0.0)
        .max(1e-3 * b0);
    let clamp = |e: f64| e.clamp(1e-6, 0.4);
    let ed = if total(down) > 0.0 { below(down) / total(down) } else { 0.0 };
    let eu = if total(up) > 0.0 {
        (total(up) - below(up)) / total(up) - constants.decay_fraction()
    } else {
        0.0
    };
    [b0, d0.min(0.9 * b0), clamp(ed), clamp(eu)]
}

fn run_fit(
    down: &[f64],
    up: &[f64],
    constants: FitConstants,
    active: [bool; 4],
    init: Option<FitParams>,
    options: &FitOptions,
) -> FitResult {
    let problem = Problem { down, up, constants, active };
    let mut start = init
        .map(FitParams::to_array)
        .unwrap_or_else(|| initial_guess(down, up, &constants));
    for i in 2..4 {
        if !active[i] {
            start[i] = 0.0;
        }
    }
    // Inactive errors are pinned at zero; keep them out of the logit map.
    let transform = Transform::new(options.parameterization, &constants);
    let opt = problem.minimise(start, &transform, options);
    let mut theta = opt.theta;
    for i in 2..4 {
        if !active[i] {
            theta[i] = 0.0;
        }
    }
    let ll = evaluate(&FitParams::from_array(theta), down, up, &constants, false).0;
    let std_errors = problem.std_errors(&theta);
    FitResult {
        n_bar_b: theta[0],
        n_bar_d: theta[1],
        eps_down_tot: theta[2],
        eps_up_tot: theta[3],
        std_errors,
        bootstrap_std_errors: None,
        log_likelihood: if ll.is_finite() { ll } else { opt.ll },
        converged: opt.converged,
        iterations: opt.iterations,
        gradient_norm: opt.gradient_norm,
    }
}

/// Joint fit of both histograms (shared means).
pub fn fit(
    hist_down: &CountHistogram,
    hist_up: &CountHistogram,
    constants: FitConstants,
    options: &FitOptions,
) -> Result<FitResult> {
    let down = as_weights(hist_down);
    let up = as_weights(hist_up);
    let mut result = fit_weighted(&down, &up, constants, options)?;
    if options.bootstrap_resamples > 0 {
        result.bootstrap_std_errors = Some(bootstrap(hist_down, hist_up, constants, options, &result));
    }
    Ok(result)
}

/// Joint fit on real-valued bin weights.
pub fn fit_weighted(
    down: &[f64],
    up: &[f64],
    constants: FitConstants,
    options: &FitOptions,
) -> Result<FitResult> {
    check_histogram("down", down)?;
    check_histogram("up", up)?;
    Ok(run_fit(down, up, constants, [true; 4], options.init, options))
}

/// Separate fits of the two histograms.
pub fn fit_independent(
    hist_down: &CountHistogram,
    hist_up: &CountHistogram,
    constants: FitConstants,
    options: &FitOptions,
) -> Result<IndependentFit> {
    let down = as_weights(hist_down);
    let up = as_weights(hist_up);
    check_histogram("down", &down)?;
    check_histogram("up", &up)?;
    let init_for = |w_down: &[f64], w_up: &[f64]| {
        options.init.or_else(|| {
            // means from the joint split heuristic, errors re-estimated per histogram
            let g = initial_guess(&down, &up, &constants);
            let own = initial_guess(w_down, w_up, &constants);
            Some(FitParams::from_array([g[0], g[1], own[2], own[3]]))
        })
    };
    let down_fit = run_fit(&down, &[], constants, [true, true, true, false], init_for(&down, &[]), options);
    let up_fit = run_fit(&[], &up, constants, [true, true, false, true], init_for(&[], &up), options);
    Ok(IndependentFit { down: down_fit, up: up_fit })
}

fn resample<R: rand::Rng>(hist: &CountHistogram, rng: &mut R) -> Vec<f64> {
    let total = hist.total_shots();
    let mut remaining = total;
    let mut mass_left = 1.0;
    let freqs = hist.frequencies();
    let mut out = vec![0.0; freqs.len()];
    for (n, p) in freqs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(remaining, q).map(|b| b.sample(rng)).unwrap_or(0);
        out[n] = k as f64;
        remaining -= k;
        mass_left -= p;
    }
    out
}

fn bootstrap(
    hist_down: &CountHistogram,
    hist_up: &CountHistogram,
    constants: FitConstants,
    options: &FitOptions,
    best: &FitResult,
) -> StdErrors {
    let mut samples: Vec<[f64; 4]> = Vec::with_capacity(options.bootstrap_resamples);
    let inner = FitOptions { bootstrap_resamples: 0, init: Some(best.params()), ..*options };
    for b in 0..options.bootstrap_resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(options.bootstrap_seed);
        rng.set_stream(b as u64);
        let down = resample(hist_down, &mut rng);
        let up = resample(hist_up, &mut rng);
        if check_histogram("down", &down).is_err() || check_histogram("up", &up).is_err() {
            continue;
        }
        let r = run_fit(&down, &up, constants, [true; 4], inner.init, &inner);
        samples.push(r.params().to_array());
    }
    let m = samples.len() as f64;
    let mut sd = [f64::NAN; 4];
    if samples.len() > 1 {
        for (i, slot) in sd.iter_mut().enumerate() {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / m;
            let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            *slot = var.sqrt();
        }
    }
    StdErrors { n_bar_b: sd[0], n_bar_d: sd[1], eps_down_tot: sd[2], eps_up_tot: sd[3] }
}

/// Expected bin weights `total * p̃(n)` for `n = 0..=support_max`, used to
/// build exact synthetic data.
pub fn expected_weights(
    params: &FitParams,
    constants: &FitConstants,
    total: f64,
    support_max: usize,
) -> (Vec<f64>, Vec<f64>) {
    use crate::photon_statistics::{observed_down_prob, observed_up_prob};
    let f = constants.decay_fraction();
    let down = (0..=support_max as u64)
        .map(|n| total * observed_down_prob(n, params.n_bar_b, params.n_bar_d, params.eps_down_tot))
        .collect();
    let up = (0..=support_max as u64)
        .map(|n| total * observed_up_prob(n, params.n_bar_b, params.n_bar_d, f, params.eps_up_tot))
        .collect();
    (down, up)
}
