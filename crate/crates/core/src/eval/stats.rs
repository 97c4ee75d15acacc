use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Outcome of a one-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub stat: f64,
    pub critical: f64,
    pub level: f64,
    pub n: usize,
    pub reject: bool,
}

/// Asymptotic critical value `sqrt(-ln(level / 2) / 2) / sqrt(n)`.
pub fn ks_critical(n: usize, level: f64) -> f64 {
    (-(level / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Two-sided KS distance between the sample's ECDF and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_unstable_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

pub const KS_MIN_SAMPLES: usize = 20;

pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64, level: f64) -> Result<KsResult> {
    let n = samples.len();
    if n < KS_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "KS test needs at least {KS_MIN_SAMPLES} samples, got {n}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "KS level must lie in (0, 1), got {level}"
        )));
    }
    let stat = ks_statistic(samples, cdf);
    let critical = ks_critical(n, level);
    Ok(KsResult {
        stat,
        critical,
        level,
        n,
        reject: stat > critical,
    })
}

/// KS test of p-values against Uniform(0, 1).
pub fn ks_uniformity(p_values: &[f64], level: f64) -> Result<KsResult> {
    ks_test(p_values, |x| x.clamp(0.0, 1.0), level)
}

/// Fraction of p-values at or below `alpha`.
pub fn type1_rate(p_values: &[f64], alpha: f64) -> f64 {
    if p_values.is_empty() {
        return 0.0;
    }
    p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len() as f64
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series: sum x^n / (a (a+1) ... (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITER {
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
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        (1.0 - (log_prefix.exp() * h)).max(0.0)
    }
}

/// CDF of the chi-squared distribution with `d` degrees of freedom.
pub fn chi2_cdf(x: f64, d: usize) -> f64 {
    gamma_p(d as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Report {
    pub n: usize,
    pub d: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub ks: KsResult,
}

pub const CHI2_MIN_SAMPLES: usize = 100;

/// Compare a score sample with `χ²_d`: moments and a KS test at `level`.
pub fn chi2_moment_check(scores: &[f64], d: usize, level: f64) -> Result<Chi2Report> {
    if d < 1 {
        return Err(Error::Config(
            "chi-squared degrees of freedom must be at least 1".into(),
        ));
    }
    let n = scores.len();
    if n < CHI2_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "chi-squared check needs at least {CHI2_MIN_SAMPLES} scores, got {n}"
        )));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let ks = ks_test(scores, |x| chi2_cdf(x, d), level)?;
    Ok(Chi2Report {
        n,
        d,
        mean,
        variance,
        ks,
    })
}
