//! Constrained MLEs of the means and the common variance, the
//! decomposition of the variance estimator into within-group and
//! order-restriction terms, analytic bounds on the control-mean MLE, and
//! a brute-force subset oracle.
//!
//! The control-mean MLE is the minimum over all subsets `I` of treatments
//! of the size-weighted pooled mean of the control together with `I`. The
//! minimizing subset is always a level set of the treatment means, so the
//! minimum is found in `O(s log s)` by scanning prefixes of the means in
//! ascending order; `mle_mu0_bruteforce` keeps the literal `2^s`
//! enumeration as an independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeanParams, SampleSummary};

/// Largest `s` accepted by the brute-force subset enumeration.
pub const BRUTE_FORCE_MAX_S: usize = 20;

/// Fitted estimates for one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub mu0_hat: f64,
    pub mu_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
    /// `xi = sqrt(N) * (i2 + i4)`.
    pub xi: f64,
    pub n_total: u64,
}

/// Analytic bounds on the control-mean MLE for equal-size layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// `rho = s * n / n0`.
    pub rho: f64,
    /// `lambda = min_i (mean_i - mean_0)`.
    pub lambda: f64,
    pub lower: f64,
    /// Always the control sample mean.
    pub upper: f64,
}

/// Result of checking the variance MLE against the unconstrained residual
/// sum of squares at the true means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub sigma2_hat: f64,
    pub upper_bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// MLE of the control mean: minimum subset-pooled mean.
pub fn mle_mu0(summary: &SampleSummary) -> f64 {
    let mean0 = summary.control_mean();
    let n0 = summary.layout().n0() as f64;
    let sizes = summary.layout().treatment_sizes();
    let means = summary.treatment_means();

    let mut order: Vec<usize> = (0..means.len()).collect();
    // Stable sort on index breaks ties among equal means; the minimal
    // value is unchanged by the tie-break.
    order.sort_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap());

    let mut num = n0 * mean0;
    let mut den = n0;
    let mut best = mean0; // empty subset
    for &i in &order {
        num += sizes[i] as f64 * means[i];
        den += sizes[i] as f64;
        let pooled = num / den;
        if pooled < best {
            best = pooled;
        }
    }
    best
}

/// Literal `2^s` enumeration of subset-pooled means. Oracle for
/// [`mle_mu0`]; rejects `s > BRUTE_FORCE_MAX_S`.
pub fn mle_mu0_bruteforce(summary: &SampleSummary) -> Result<f64> {
    let s = summary.s();
    if s > BRUTE_FORCE_MAX_S {
        return Err(Error::Precondition(format!(
            "brute force limited to s <= {BRUTE_FORCE_MAX_S}, got {s}"
        )));
    }
    let mean0 = summary.control_mean();
    let n0 = summary.layout().n0() as f64;
    let sizes = summary.layout().treatment_sizes();
    let means = summary.treatment_means();

    let mut best = mean0;
    for mask in 1u32..(1u32 << s) {
        let mut num = n0 * mean0;
        let mut den = n0;
        for i in 0..s {
            if mask & (1 << i) != 0 {
                num += sizes[i] as f64 * means[i];
                den += sizes[i] as f64;
            }
        }
        let pooled = num / den;
        if pooled < best {
            best = pooled;
        }
    }
    Ok(best)
}

/// MLEs of all means: `(mu0_hat, [max(mu0_hat, mean_i)])`.
pub fn mle_means(summary: &SampleSummary) -> (f64, Vec<f64>) {
    let mu0_hat = mle_mu0(summary);
    let mu_hat = summary
        .treatment_means()
        .iter()
        .map(|&m| m.max(mu0_hat))
        .collect();
    (mu0_hat, mu_hat)
}

/// Decomposition terms of the variance MLE, each already divided by `N`:
/// within-control, control adjustment, within-treatments, treatment
/// adjustment.
pub fn decompose(summary: &SampleSummary, mu0_hat: f64, mu_hat: &[f64]) -> (f64, f64, f64, f64) {
    let n = summary.total_size() as f64;
    let n0 = summary.layout().n0() as f64;
    let i1 = summary.ssw()[0] / n;
    let d0 = summary.control_mean() - mu0_hat;
    let i2 = n0 * d0 * d0 / n;
    let i3 = summary.ssw()[1..].iter().sum::<f64>() / n;
    let i4 = summary
        .treatment_means()
        .iter()
        .zip(mu_hat)
        .zip(summary.layout().treatment_sizes())
        .map(|((&m, &mh), &ni)| ni as f64 * (m - mh) * (m - mh))
        .sum::<f64>()
        / n;
    (i1, i2, i3, i4)
}

/// Scaled order-restriction penalty `xi = sqrt(N) * (I2 + I4)`.
pub fn xi_statistic(summary: &SampleSummary, mu0_hat: f64, mu_hat: &[f64]) -> f64 {
    let (_, i2, _, i4) = decompose(summary, mu0_hat, mu_hat);
    (summary.total_size() as f64).sqrt() * (i2 + i4)
}

/// MLE of the common variance together with its decomposition and the
/// `xi` statistic. Requires `N >= 2`.
pub fn mle_variance(summary: &SampleSummary) -> Result<MleFit> {
    let n_total = summary.total_size();
    if n_total < 2 {
        return Err(Error::Precondition("variance estimation needs N >= 2".into()));
    }
    let (mu0_hat, mu_hat) = mle_means(summary);
    let (i1, i2, i3, i4) = decompose(summary, mu0_hat, &mu_hat);
    let sigma2_hat = i1 + i2 + i3 + i4;
    let xi = (n_total as f64).sqrt() * (i2 + i4);
    Ok(MleFit {
        mu0_hat,
        mu_hat,
        sigma2_hat,
        i1,
        i2,
        i3,
        i4,
        xi,
        n_total,
    })
}

/// Lower and upper bounds on the control-mean MLE for equal treatment
/// sizes: `mean_0 + rho/(1+rho) * lambda * 1{lambda < 0} <= mu0_hat <= mean_0`.
pub fn mu0_bounds(summary: &SampleSummary) -> Result<BoundsReport> {
    if !summary.layout().equal_treatment_sizes() {
        return Err(Error::Precondition(
            "mean bounds are defined only for equal treatment sizes".into(),
        ));
    }
    let mean0 = summary.control_mean();
    let s = summary.s() as f64;
    let n = summary.layout().treatment_sizes()[0] as f64;
    let n0 = summary.layout().n0() as f64;
    let rho = s * n / n0;
    let lambda = summary
        .treatment_means()
        .iter()
        .map(|&m| m - mean0)
        .fold(f64::INFINITY, f64::min);
    let lower = if lambda < 0.0 {
        mean0 + rho / (1.0 + rho) * lambda
    } else {
        mean0
    };
    Ok(BoundsReport {
        rho,
        lambda,
        lower,
        upper: mean0,
    })
}

/// Closed-form treatment residual `mean_1 - mu1_hat` for the
/// two-population case: `(n0/N)(mean_1 - mean_0) * 1{mean_1 <= mean_0}`.
pub fn two_population_residual(summary: &SampleSummary) -> Result<f64> {
    if summary.s() != 1 {
        return Err(Error::Precondition(format!(
            "two-population closed form needs s = 1, got s = {}",
            summary.s()
        )));
    }
    let mean0 = summary.control_mean();
    let mean1 = summary.treatment_means()[0];
    if mean1 <= mean0 {
        let n0 = summary.layout().n0() as f64;
        let n_total = summary.total_size() as f64;
        Ok(n0 / n_total * (mean1 - mean0))
    } else {
        Ok(0.0)
    }
}

/// Checks the least-squares property: the variance MLE never exceeds the
/// mean squared deviation about any tree-ordered parameter vector.
pub fn unconstrained_bound_check(
    summary: &SampleSummary,
    params: &MeanParams,
    fit: &MleFit,
) -> Result<BoundCheck> {
    if params.mu.len() != summary.s() {
        return Err(Error::Precondition(
            "parameter vector length must match the number of treatments".into(),
        ));
    }
    let n_total = summary.total_size() as f64;
    let mut rss = summary.ssw().iter().sum::<f64>();
    let n0 = summary.layout().n0() as f64;
    let d0 = summary.control_mean() - params.mu0;
    rss += n0 * d0 * d0;
    for ((&m, &mu), &ni) in summary
        .treatment_means()
        .iter()
        .zip(&params.mu)
        .zip(summary.layout().treatment_sizes())
    {
        rss += ni as f64 * (m - mu) * (m - mu);
    }
    let upper_bound = rss / n_total;
    let slack = upper_bound - fit.sigma2_hat;
    let holds = slack >= -1e-10 * upper_bound.abs().max(1.0);
    Ok(BoundCheck {
        sigma2_hat: fit.sigma2_hat,
        upper_bound,
        slack,
        holds,
    })
}
