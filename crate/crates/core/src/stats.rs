//! Small statistics toolbox used by the verification harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len();
    if n == 0 {
        return MeanSe { n, mean: f64::NAN, se: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanSe { n, mean, se: f64::NAN };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe {
        n,
        mean,
        se: (var / n as f64).sqrt(),
    }
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len();
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LinearFit {
        slope,
        intercept,
        r_squared,
        n,
    }
}

/// Binomial probability mass function.
pub fn binomial_pmf(n: u32, p: f64, j: u32) -> f64 {
    let mut log_choose = 0.0;
    for t in 0..j {
        log_choose += ((n - t) as f64).ln() - ((t + 1) as f64).ln();
    }
    (log_choose + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp()
}

/// Pearson chi-square goodness of fit. Adjacent bins are pooled left to
/// right until each pooled bin expects at least `min_expected` counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> ChiSquareTest {
    let total: u64 = observed.iter().sum();
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&obs, &prob) in observed.iter().zip(probs) {
        o += obs as f64;
        e += prob * total as f64;
        if e >= min_expected {
            pooled.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => pooled.push((o, e)),
        }
    }
    let statistic: f64 = pooled.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = pooled.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic)
    };
    ChiSquareTest {
        statistic,
        dof,
        p_value,
        bins: pooled.len(),
    }
}

/// Extinction probability of a Galton-Watson process with Binomial(n, p)
/// offspring: the smallest fixed point of `s = (1 - p + p s)^n`, reached by
/// iterating from `s = 0`.
pub fn gw_extinction_binomial(n: u32, p: f64) -> f64 {
    let mut s = 0.0f64;
    for _ in 0..100_000 {
        let next = (1.0 - p + p * s).powi(n as i32);
        if (next - s).abs() < 1e-16 {
            return next;
        }
        s = next;
    }
    s
}

/// Probability that the process is extinct by generation `depth`.
pub fn gw_extinction_by(n: u32, p: f64, depth: u32) -> f64 {
    (0..depth).fold(0.0, |s, _| (1.0 - p + p * s).powi(n as i32))
}

/// Two-sided Kolmogorov-Smirnov distance between an empirical sample and a
/// continuous CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let pts: Vec<_> = (0..6).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let fit = linear_fit(&pts);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let total: f64 = (0..=9).map(|j| binomial_pmf(9, 0.7, j)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((binomial_pmf(4, 0.3, 0) - 0.7f64.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn extinction_fixed_point() {
        // Binomial(2, 0.75): s = (0.25 + 0.75 s)^2 has roots 1 and 1/9.
        assert!((gw_extinction_binomial(2, 0.75) - 1.0 / 9.0).abs() < 1e-12);
        assert!((gw_extinction_by(2, 0.75, 200) - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(gw_extinction_by(3, 0.5, 0), 0.0);
    }

    #[test]
    fn chi_square_accepts_exact_counts() {
        let probs: Vec<f64> = (0..=4).map(|j| binomial_pmf(4, 0.5, j)).collect();
        let observed: Vec<u64> = probs.iter().map(|p| (p * 16000.0).round() as u64).collect();
        let test = chi_square_gof(&observed, &probs, 5.0);
        assert!(test.statistic < 1e-9);
        assert!(test.p_value > 0.999);
        assert_eq!(test.dof, 4);
    }
}
