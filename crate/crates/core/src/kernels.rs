//! Gaussian kernel and the unbiased squared maximum mean discrepancy.
//!
//! The kernel is `k(u, v) = exp(-|u - v|^2 / h^2)` with bandwidth `h`. It is
//! continuous, bounded and characteristic, so the population MMD vanishes
//! only when the two distributions coincide.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bandwidth_rule", rename_all = "kebab-case")]
pub enum KernelSpec {
    Fixed {
        bandwidth: f64,
    },
    #[default]
    MedianHeuristic,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Fixed { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::Config(format!(
                    "kernel bandwidth must be positive, got {bandwidth}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Concrete bandwidth; the median rule looks at `samples`.
    pub fn resolve(&self, samples: &Tensor) -> Result<f64> {
        self.validate()?;
        match *self {
            KernelSpec::Fixed { bandwidth } => Ok(bandwidth),
            KernelSpec::MedianHeuristic => median_bandwidth(samples),
        }
    }
}

#[inline]
fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn gauss(u: &[f64], v: &[f64], inv_h2: f64) -> f64 {
    (-sq_dist(u, v) * inv_h2).exp()
}

pub fn kernel_eval(bandwidth: f64, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "kernel on dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::Config(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    Ok(gauss(u, v, 1.0 / (bandwidth * bandwidth)))
}

/// Median of pairwise Euclidean distances over all distinct pairs of rows,
/// falling back to the mean distance when the median is zero.
pub fn median_bandwidth(samples: &Tensor) -> Result<f64> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "bandwidth needs at least 2 points, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(samples.row(i), samples.row(j)).sqrt());
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if median > 0.0 {
        return Ok(median);
    }
    let mean = dists.iter().sum::<f64>() / k as f64;
    if mean > 0.0 {
        Ok(mean)
    } else {
        Err(Error::DegenerateBandwidth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mmd2Estimate {
    /// May be negative.
    pub value: f64,
    pub m: usize,
    pub n: usize,
    pub bandwidth: f64,
}

/// Unbiased squared MMD. With [`KernelSpec::MedianHeuristic`] the bandwidth
/// comes from the pooled sample `U ∪ V`.
pub fn mmd2_unbiased(u: &Tensor, v: &Tensor, spec: &KernelSpec) -> Result<Mmd2Estimate> {
    check_pair(u, v)?;
    let bandwidth = match spec {
        KernelSpec::MedianHeuristic => median_bandwidth(&u.vstack(v)?)?,
        fixed => fixed.resolve(u)?,
    };
    Ok(Mmd2Estimate {
        value: mmd2_unbiased_value(u, v, bandwidth)?,
        m: u.rows(),
        n: v.rows(),
        bandwidth,
    })
}

fn check_pair(u: &Tensor, v: &Tensor) -> Result<()> {
    if u.rows() < 2 || v.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "unbiased MMD needs at least 2 points per sample, got {} and {}",
            u.rows(),
            v.rows()
        )));
    }
    if u.cols() != v.cols() {
        return Err(Error::Shape(format!(
            "MMD samples of dims {} and {}",
            u.cols(),
            v.cols()
        )));
    }
    Ok(())
}

/// Fixed argument order so that swapping `U` and `V` gives bit-identical sums.
fn canonical_order(u: &Tensor, v: &Tensor) -> bool {
    let key = |t: &Tensor| (t.rows(), t.cols());
    match key(u).cmp(&key(v)) {
        Ordering::Equal => u
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .is_none_or(|o| o.is_lt()),
        o => o.is_lt(),
    }
}

fn within_sum(x: &Tensor, inv_h2: f64) -> f64 {
    let n = x.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += gauss(x.row(i), x.row(j), inv_h2);
        }
    }
    2.0 * s
}

pub fn mmd2_unbiased_value(u: &Tensor, v: &Tensor, bandwidth: f64) -> Result<f64> {
    check_pair(u, v)?;
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::Config(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    let (u, v) = if canonical_order(u, v) {
        (u, v)
    } else {
        (v, u)
    };
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let (m, n) = (u.rows() as f64, v.rows() as f64);
    let mut cross = 0.0;
    for ui in u.iter_rows() {
        for vj in v.iter_rows() {
            cross += gauss(ui, vj, inv_h2);
        }
    }
    let uu = within_sum(u, inv_h2) / (m * (m - 1.0));
    let vv = within_sum(v, inv_h2) / (n * (n - 1.0));
    Ok(uu + vv - 2.0 * cross / (m * n))
}

/// Gradient of [`mmd2_unbiased_value`] with respect to every entry of `U`
/// and of `V`, with the bandwidth held fixed.
pub fn mmd2_unbiased_grad(u: &Tensor, v: &Tensor, bandwidth: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(u, v)?;
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let (m, n, d) = (u.rows(), v.rows(), u.cols());
    let (mf, nf) = (m as f64, n as f64);
    let mut gu = vec![0.0; m * d];
    let mut gv = vec![0.0; n * d];

    // dk(a, b)/da = -2 (a - b) k(a, b) / h^2
    let within = |x: &Tensor, g: &mut [f64], coef: f64| {
        for i in 0..x.rows() {
            for j in (i + 1)..x.rows() {
                let (a, b) = (x.row(i), x.row(j));
                let k = gauss(a, b, inv_h2);
                for t in 0..d {
                    let dk = -2.0 * (a[t] - b[t]) * k * inv_h2;
                    // Both ordered pairs (i, j) and (j, i) contribute.
                    g[i * d + t] += 2.0 * coef * dk;
                    g[j * d + t] -= 2.0 * coef * dk;
                }
            }
        }
    };
    within(u, &mut gu, 1.0 / (mf * (mf - 1.0)));
    within(v, &mut gv, 1.0 / (nf * (nf - 1.0)));

    let cross_coef = -2.0 / (mf * nf);
    for i in 0..m {
        for j in 0..n {
            let (a, b) = (u.row(i), v.row(j));
            let k = gauss(a, b, inv_h2);
            for t in 0..d {
                let dk = -2.0 * (a[t] - b[t]) * k * inv_h2;
                gu[i * d + t] += cross_coef * dk;
                gv[j * d + t] -= cross_coef * dk;
            }
        }
    }
    Ok((gu, gv))
}
