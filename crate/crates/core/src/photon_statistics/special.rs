//! Poisson probabilities and the regularized lower incomplete gamma function.

use crate::error::{ReadoutError, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const MAX_ITER: usize = 500;

/// Natural log of the gamma function for `z > 0` (Lanczos, g = 7).
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// `ln n!`, exact summation for small `n`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 32 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Log of the Poisson probability of `n` events at the given mean.
///
/// Returns `-inf` for `mean == 0, n > 0`.
pub fn ln_poisson_pmf(n: u64, mean: f64) -> Result<f64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(ReadoutError::domain(format!(
            "Poisson mean must be finite and non-negative, got {mean}"
        )));
    }
    if mean == 0.0 {
        return Ok(if n == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(n as f64 * mean.ln() - mean - ln_factorial(n))
}

/// Probability of `n` events for a Poisson distribution with the given mean,
/// evaluated in log space.
pub fn poisson_pmf(n: u64, mean: f64) -> Result<f64> {
    ln_poisson_pmf(n, mean).map(f64::exp)
}

/// Regularized lower incomplete gamma function `(1/Γ(a)) ∫₀ˣ e^{-t} t^{a-1} dt`.
///
/// The first argument is the integration limit, the second the shape.
/// For integer shape `a = n + 1` this is the probability that a Poisson
/// variable of mean `x` exceeds `n`.
pub fn reg_lower_gamma(x: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(ReadoutError::domain(format!(
            "incomplete gamma shape must be positive, got {a}"
        )));
    }
    if !(x >= 0.0) {
        return Err(ReadoutError::domain(format!(
            "incomplete gamma limit must be non-negative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        Ok(lower_series(x, a, log_prefactor))
    } else {
        Ok(1.0 - upper_continued_fraction(x, a, log_prefactor))
    }
}

/// Regularized upper incomplete gamma `1 - reg_lower_gamma(x, a)`, computed
/// without cancellation on either side.
pub fn reg_upper_gamma(x: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(ReadoutError::domain(format!(
            "incomplete gamma shape must be positive, got {a}"
        )));
    }
    if !(x >= 0.0) {
        return Err(ReadoutError::domain(format!(
            "incomplete gamma limit must be non-negative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        Ok(1.0 - lower_series(x, a, log_prefactor))
    } else {
        Ok(upper_continued_fraction(x, a, log_prefactor))
    }
}

fn lower_series(x: f64, a: f64, log_prefactor: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    (log_prefactor + sum.ln()).exp()
}

// modified Lentz
fn upper_continued_fraction(x: f64, a: f64, log_prefactor: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    (log_prefactor + h.ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product_form_poisson(n: u64, mean: f64) -> f64 {
        let mut p = (-mean).exp();
        for k in 1..=n {
            p *= mean / k as f64;
        }
        p
    }

    // Composite Gauss-Legendre (5-point) over many panels.
    fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
        let nodes = [
            (0.0, 0.568_888_888_888_888_9),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let h = (hi - lo) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * h;
            for (xi, w) in nodes {
                total += w * f(mid + 0.5 * h * xi);
            }
        }
        total * 0.5 * h
    }

    #[test]
    fn poisson_closed_form_values() {
        assert_eq!(poisson_pmf(0, 0.0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(3, 0.0).unwrap(), 0.0);
        assert!((poisson_pmf(0, 5.0).unwrap() - (-5.0f64).exp()).abs() < 1e-16);
        assert!((poisson_pmf(0, 5.0).unwrap() - 6.7379e-3).abs() < 1e-7);
    }

    #[test]
    fn poisson_matches_product_form() {
        let direct = product_form_poisson(20, 20.9);
        let got = poisson_pmf(20, 20.9).unwrap();
        assert!(((got - direct) / direct).abs() < 1e-12, "{got} vs {direct}");
        for n in [0, 1, 5, 13, 40, 60] {
            for mean in [0.3, 2.5, 20.9, 44.1] {
                let direct = product_form_poisson(n, mean);
                let got = poisson_pmf(n, mean).unwrap();
                assert!(((got - direct) / direct).abs() < 1e-12, "n={n} mean={mean}");
            }
        }
    }

    #[test]
    fn poisson_rejects_negative_mean() {
        assert!(matches!(poisson_pmf(1, -0.1), Err(ReadoutError::Domain(_))));
    }

    #[test]
    fn gamma_closed_form_values() {
        assert_eq!(reg_lower_gamma(0.0, 2.5).unwrap(), 0.0);
        for x in [0.01f64, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let want = 1.0 - (-x).exp();
            assert!((reg_lower_gamma(x, 1.0).unwrap() - want).abs() < 1e-14, "x={x}");
        }
        assert!(matches!(reg_lower_gamma(1.0, 0.0), Err(ReadoutError::Domain(_))));
        assert!(matches!(reg_lower_gamma(1.0, -2.0), Err(ReadoutError::Domain(_))));
    }

    #[test]
    fn gamma_matches_quadrature() {
        let cases: [(f64, f64); 6] = [(5.0, 3.0), (0.4, 0.7), (2.0, 6.0), (20.9, 6.0), (0.5, 1.0), (30.0, 25.0)];
        for (x, a) in cases {
            let ln_g = ln_gamma(a);
            let integrand = |t: f64| {
                if t == 0.0 {
                    0.0
                } else {
                    (-t + (a - 1.0) * t.ln() - ln_g).exp()
                }
            };
            // a < 1 has an integrable endpoint singularity; substitute t = u^{1/a}.
            let oracle = if a < 1.0 {
                let sub = |u: f64| {
                    let t = u.powf(1.0 / a);
                    (-t - ln_g).exp() / a
                };
                integrate(sub, 0.0, x.powf(a), 4000)
            } else {
                integrate(integrand, 0.0, x, 4000)
            };
            let got = reg_lower_gamma(x, a).unwrap();
            assert!((got - oracle).abs() < 1e-10, "x={x} a={a}: {got} vs {oracle}");
        }
    }

    #[test]
    fn gamma_integer_shape_is_poisson_tail() {
        for mean in [0.49, 20.58, 44.1] {
            for n in 0..60u64 {
                let tail: f64 = 1.0
                    - (0..=n)
                        .map(|k| poisson_pmf(k, mean).unwrap())
                        .sum::<f64>();
                let got = reg_lower_gamma(mean, n as f64 + 1.0).unwrap();
                assert!((got - tail).abs() < 1e-12, "mean={mean} n={n}");
            }
        }
    }

    #[test]
    fn gamma_monotone_on_grid() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.25).collect();
        let shapes: Vec<f64> = (1..80).map(|i| i as f64 * 0.5).collect();
        for &a in &shapes {
            let mut prev = -1.0;
            for &x in &xs {
                let v = reg_lower_gamma(x, a).unwrap();
                assert!(v >= prev - 1e-15, "x={x} a={a}");
                assert!((0.0..=1.0).contains(&v));
                prev = v;
            }
        }
        for &x in &xs {
            let mut prev = 2.0;
            for &a in &shapes {
                let v = reg_lower_gamma(x, a).unwrap();
                assert!(v <= prev + 1e-15, "x={x} a={a}");
                prev = v;
            }
        }
    }

    #[test]
    fn upper_complements_lower() {
        for (x, a) in [(0.3, 4.0), (7.0, 2.0), (50.0, 10.0)] {
            let s = reg_lower_gamma(x, a).unwrap() + reg_upper_gamma(x, a).unwrap();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
