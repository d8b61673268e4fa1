//! Low-degree polynomial calculations: Hermite polynomials, expectations of
//! Hermite products under correlated Gaussians, and the sample-size threshold
//! below which low-degree tests fail.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::random::rng_from_seed;

/// Largest supported Hermite degree.
pub const MAX_DEGREE: usize = 170;

fn check_degree(k: usize) -> Result<()> {
    if k > MAX_DEGREE {
        return Err(Error::OutOfRange(format!(
            "Hermite degree {k} exceeds {MAX_DEGREE}"
        )));
    }
    Ok(())
}

/// Probabilists' Hermite polynomial `H_k(x)`.
pub fn hermite(k: usize, x: f64) -> Result<f64> {
    check_degree(k)?;
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return Ok(1.0);
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `h_k(x) = H_k(x) / sqrt(k!)`, evaluated with the normalized recurrence so
/// the factorial never appears explicitly.
pub fn normalized_hermite(k: usize, x: f64) -> Result<f64> {
    check_degree(k)?;
    Ok(normalized_hermite_unchecked(k, x))
}

fn normalized_hermite_unchecked(k: usize, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for j in 1..k {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

pub fn log_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Degrees and correlations for `E[h_alpha(Y) prod_j h_beta_j(X_j)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteDegreeProfile {
    pub alpha: usize,
    pub beta: Vec<usize>,
    pub u: Vec<f64>,
}

impl HermiteDegreeProfile {
    pub fn new(alpha: usize, beta: Vec<usize>, u: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.len() != u.len() {
            return invalid("beta and u must be nonempty and of equal length");
        }
        if u.iter().any(|v| !(v.abs() <= 1.0)) {
            return invalid("correlations must lie in [-1, 1]");
        }
        let s: f64 = u.iter().map(|v| v * v).sum();
        if s > 1.0 + 1e-12 {
            return invalid(format!("sum of squared correlations {s} exceeds 1"));
        }
        check_degree(alpha)?;
        for &b in &beta {
            check_degree(b)?;
        }
        Ok(Self { alpha, beta, u })
    }
}

/// Closed form `sqrt(alpha! / prod beta_j!) prod u_j^beta_j`, or zero when
/// `alpha != sum beta_j`.
pub fn correlated_expectation(p: &HermiteDegreeProfile) -> f64 {
    let total: usize = p.beta.iter().sum();
    if total != p.alpha {
        return 0.0;
    }
    let mut log_mag = 0.5 * log_factorial(p.alpha);
    let mut sign = 1.0;
    for (&b, &u) in p.beta.iter().zip(&p.u) {
        log_mag -= 0.5 * log_factorial(b);
        if b == 0 {
            continue;
        }
        if u == 0.0 {
            return 0.0;
        }
        log_mag += b as f64 * u.abs().ln();
        if u < 0.0 && b % 2 == 1 {
            sign = -sign;
        }
    }
    sign * log_mag.exp()
}

/// Monte Carlo estimate and standard error of the same expectation, sampling
/// `Y = sum_j u_j X_j + sqrt(1 - sum_j u_j^2) Z`.
pub fn mc_verify_expectation(p: &HermiteDegreeProfile, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 1000 {
        return invalid("at least 1000 samples are required");
    }
    let s: f64 = p.u.iter().map(|v| v * v).sum();
    if s > 1.0 + 1e-12 {
        return invalid(format!("sum of squared correlations {s} exceeds 1"));
    }
    let resid = (1.0 - s).max(0.0).sqrt();
    let mut rng = rng_from_seed(seed);
    let w = p.u.len();
    let mut xs = vec![0.0; w];
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for i in 0..samples {
        let mut y = 0.0;
        for (x, &u) in xs.iter_mut().zip(&p.u) {
            *x = StandardNormal.sample(&mut rng);
            y += u * *x;
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        y += resid * z;
        let mut v = normalized_hermite_unchecked(p.alpha, y);
        for (&x, &b) in xs.iter().zip(&p.beta) {
            v *= normalized_hermite_unchecked(b, x);
        }
        // Welford update.
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok((mean, (var / samples as f64).sqrt()))
}

/// `(p / (d D))^{d/2} delta / (2 (1 - sigma^2))`.
pub fn ld_sample_threshold(p: f64, d: usize, degree: usize, delta: f64, sigma_sq: f64) -> Result<f64> {
    if !(p >= 1.0) || d == 0 || degree == 0 {
        return invalid("p, d and D must be at least 1");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid("delta must lie in (0, 1)");
    }
    if !(0.0..1.0).contains(&sigma_sq) {
        return invalid("sigma^2 must lie in [0, 1)");
    }
    Ok((p / (d * degree) as f64).powf(d as f64 / 2.0) * delta / (2.0 * (1.0 - sigma_sq)))
}

/// One row of the sample-size comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub p: usize,
    /// `r* p`, the information-theoretic proxy.
    pub stat_proxy: f64,
    /// Degrees of freedom `sum_k r(p - r) + r^d` of the rank-`r*` model.
    pub degrees_of_freedom: f64,
    /// Constant-free power law `r* p^{d/2}`.
    pub alg_proxy: f64,
    pub ld_threshold: f64,
}

pub fn gap_table(
    p_grid: &[usize],
    d: usize,
    r_star: usize,
    degree: usize,
    delta: f64,
    sigma_sq: f64,
) -> Result<Vec<GapRow>> {
    if p_grid.is_empty() {
        return invalid("p grid must not be empty");
    }
    if r_star == 0 {
        return invalid("r* must be positive");
    }
    p_grid
        .iter()
        .map(|&p| {
            if p < r_star {
                return invalid(format!("p = {p} is smaller than r* = {r_star}"));
            }
            let (pf, rf) = (p as f64, r_star as f64);
            Ok(GapRow {
                p,
                stat_proxy: rf * pf,
                degrees_of_freedom: d as f64 * rf * (pf - rf) + rf.powi(d as i32),
                alg_proxy: rf * pf.powf(d as f64 / 2.0),
                ld_threshold: ld_sample_threshold(pf, d, degree, delta, sigma_sq)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_degree_values() {
        for x in [-1.5, 0.0, 2.0] {
            assert_eq!(hermite(0, x).unwrap(), 1.0);
            assert_eq!(hermite(1, x).unwrap(), x);
        }
        assert_eq!(hermite(2, 0.0).unwrap(), -1.0);
        assert_eq!(hermite(3, 2.0).unwrap(), 2.0);
        let h4 = normalized_hermite(4, 1.3).unwrap();
        let x: f64 = 1.3;
        assert!((h4 - (x.powi(4) - 6.0 * x * x + 3.0) / 24f64.sqrt()).abs() < 1e-14);
        assert!(matches!(hermite(171, 0.0), Err(Error::OutOfRange(_))));
        assert!(normalized_hermite(170, 0.5).unwrap().is_finite());
    }

    #[test]
    fn closed_form_cases() {
        let p = HermiteDegreeProfile::new(1, vec![1], vec![0.7]).unwrap();
        assert!((correlated_expectation(&p) - 0.7).abs() < 1e-15);
        let p = HermiteDegreeProfile::new(2, vec![1, 1], vec![0.3, 0.4]).unwrap();
        assert!((correlated_expectation(&p) - 2f64.sqrt() * 0.12).abs() < 1e-15);
        let p = HermiteDegreeProfile::new(3, vec![1, 1], vec![0.3, 0.4]).unwrap();
        assert_eq!(correlated_expectation(&p), 0.0);
        let p = HermiteDegreeProfile::new(2, vec![2], vec![0.5]).unwrap();
        assert!((correlated_expectation(&p) - 0.25).abs() < 1e-15);
        assert!(HermiteDegreeProfile::new(1, vec![1, 1], vec![0.8, 0.8]).is_err());
    }

    #[test]
    fn threshold_values() {
        let t = ld_sample_threshold(100.0, 3, 5, 0.5, 0.0).unwrap();
        assert!((t - 4.303).abs() < 1e-3);
        let t2 = ld_sample_threshold(200.0, 2, 5, 0.5, 0.2).unwrap();
        let t1 = ld_sample_threshold(100.0, 2, 5, 0.5, 0.2).unwrap();
        assert!((t2 / t1 - 2.0).abs() < 1e-12);
        assert!(ld_sample_threshold(100.0, 3, 5, 1e-12, 0.0).unwrap() < 1e-10);
        assert!(ld_sample_threshold(100.0, 3, 5, 1.0, 0.0).is_err());
        assert!(ld_sample_threshold(100.0, 3, 5, 0.5, 1.0).is_err());
    }

    #[test]
    fn gap_table_rows() {
        let rows = gap_table(&[90], 3, 1, 5, 0.5, 0.0).unwrap();
        assert!((rows[0].alg_proxy - 853.8).abs() < 0.1);
        let rows = gap_table(&[10, 20, 40], 2, 2, 4, 0.5, 0.0).unwrap();
        for r in &rows {
            assert_eq!(r.alg_proxy, r.stat_proxy);
        }
        assert!(gap_table(&[], 2, 1, 4, 0.5, 0.0).is_err());
    }

    #[test]
    fn mc_rejects_bad_input() {
        let p = HermiteDegreeProfile::new(1, vec![1], vec![0.5]).unwrap();
        assert!(mc_verify_expectation(&p, 10, 0).is_err());
        let bad = HermiteDegreeProfile {
            alpha: 1,
            beta: vec![1, 1],
            u: vec![0.9, 0.9],
        };
        assert!(mc_verify_expectation(&bad, 1000, 0).is_err());
    }
}
