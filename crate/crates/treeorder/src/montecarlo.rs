//! Replication engine over an s-grid with deterministic parallelism,
//! plus the summary statistics used to study the estimators: box
//! summaries, histograms, CLT moment diagnostics and consistency trend
//! tables.
//!
//! Determinism contract: every replication draws from a substream keyed
//! by `(seed, replication, s)`, and results are merged in `(s,
//! replication)` order, so the output is a pure function of the plan and
//! independent of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator;
use crate::simulate::{self, ScenarioConfig};

/// Default bound on the number of replication records held in memory.
pub const DEFAULT_ROW_CAP: u64 = 50_000_000;

/// A full experiment: scenario, grid of population counts, replication
/// count and a worker hint (affects scheduling only, never results).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: ScenarioConfig,
    pub s_grid: Vec<u64>,
    pub replications: u64,
    #[serde(default = "default_workers")]
    pub worker_hint: usize,
    /// Upper bound on the produced record count.
    #[serde(default)]
    pub row_cap: Option<u64>,
}

fn default_workers() -> usize {
    1
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replications < 1 {
            return Err(Error::InvalidParams("replications must be >= 1".into()));
        }
        if self.s_grid.is_empty() {
            return Err(Error::InvalidParams("s grid must be nonempty".into()));
        }
        if !self.s_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParams("s grid must be strictly increasing".into()));
        }
        if self.s_grid[0] < 1 {
            return Err(Error::InvalidParams("s must be >= 1".into()));
        }
        let rows = self.s_grid.len() as u64 * self.replications;
        let cap = self.row_cap.unwrap_or(DEFAULT_ROW_CAP);
        if rows > cap {
            return Err(Error::Precondition(format!(
                "plan would produce {rows} records, exceeding the cap {cap}"
            )));
        }
        Ok(())
    }
}

/// One fitted replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub s: u64,
    pub replication: u64,
    pub n_total: u64,
    pub n0: u64,
    pub n_per: u64,
    pub sigma2_hat: f64,
    pub xi: f64,
    pub mu0_hat: f64,
    /// `mean_0 - mu0_hat`, always nonnegative.
    pub control_gap: f64,
    /// `mu0_hat - mu0` against the true control mean.
    pub mu0_error: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
}

/// Five-number box summary with the 1.5 IQR whisker rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub n_outliers: u64,
}

/// Equal-width histogram; bins are right-open except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Sample moments of `z = sqrt(N)(sigma2_hat - sigma2)` against the
/// normal limit with variance `2 sigma^4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostics {
    pub n: u64,
    pub mean: f64,
    /// Sample variance with the n - 1 divisor.
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub target_variance: f64,
    /// Standardized sample mean against the limit mean 0.
    pub mean_z: f64,
    /// Standardized sample variance against the limit variance.
    pub variance_z: f64,
}

/// Per-s consistency diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub s: u64,
    pub count: u64,
    pub mean_abs_sigma2_err: f64,
    pub q1_abs_sigma2_err: f64,
    pub median_abs_sigma2_err: f64,
    pub q3_abs_sigma2_err: f64,
    /// Median distance to the inconsistency limit `(m-1)/m sigma2`,
    /// present only for the fixed-size regime.
    pub median_abs_inconsistency_err: Option<f64>,
    pub median_abs_mu0_err: f64,
    pub median_control_gap: f64,
}

/// Trend table across the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
    /// Medians of |sigma2_hat - sigma2| strictly decreasing across s.
    pub sigma2_err_decreasing: bool,
    pub mu0_err_decreasing: bool,
    pub control_gap_decreasing: bool,
}

fn run_one(scenario: &ScenarioConfig, s: u64, replication: u64) -> Result<ReplicationRecord> {
    let mut stream = simulate::derive_stream(scenario.seed, replication, s);
    let summary = simulate::draw_summary(scenario, s, &mut stream)?;
    let fit = estimator::mle_variance(&summary)?;
    let (mu0_true, _) = scenario.mean_model.means(summary.s() as u64)?;
    Ok(ReplicationRecord {
        s,
        replication,
        n_total: summary.total_size(),
        n0: summary.layout().n0(),
        n_per: summary.layout().treatment_sizes()[0],
        sigma2_hat: fit.sigma2_hat,
        xi: fit.xi,
        mu0_hat: fit.mu0_hat,
        control_gap: summary.control_mean() - fit.mu0_hat,
        mu0_error: fit.mu0_hat - mu0_true,
        i1: fit.i1,
        i2: fit.i2,
        i3: fit.i3,
        i4: fit.i4,
    })
}

/// Runs every `(s, replication)` cell of the plan. Output order is fixed
/// by `(s, replication)` regardless of `worker_hint`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<ReplicationRecord>> {
    plan.validate()?;
    let tasks: Vec<(u64, u64)> = plan
        .s_grid
        .iter()
        .flat_map(|&s| (0..plan.replications).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.worker_hint.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("worker pool: {e}")))?;
    let records: Result<Vec<ReplicationRecord>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| run_one(&plan.scenario, s, r))
            .collect()
    });
    let records = records?;
    validate_records(&records)?;
    Ok(records)
}

/// Re-checks the estimator invariants on a record list.
pub fn validate_records(records: &[ReplicationRecord]) -> Result<()> {
    for rec in records {
        let sum = rec.i1 + rec.i2 + rec.i3 + rec.i4;
        if (rec.sigma2_hat - sum).abs() > 1e-10 * sum.abs().max(1.0) {
            return Err(Error::Precondition(format!(
                "decomposition identity violated at s = {}, replication = {}",
                rec.s, rec.replication
            )));
        }
        let xi = (rec.n_total as f64).sqrt() * (rec.i2 + rec.i4);
        if (rec.xi - xi).abs() > 1e-10 * xi.abs().max(1.0) {
            return Err(Error::Precondition(format!(
                "xi inconsistent with I2 + I4 at s = {}, replication = {}",
                rec.s, rec.replication
            )));
        }
        if rec.control_gap < -1e-12 {
            return Err(Error::Precondition(format!(
                "negative control gap at s = {}, replication = {}",
                rec.s, rec.replication
            )));
        }
    }
    Ok(())
}

/// Quantile by linear interpolation between order statistics at position
/// `1 + (n - 1) p` (the common "type 7" rule). Input must be sorted.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Median of an unsorted slice; errors on empty input.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Precondition("median of empty input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(quantile_sorted(&v, 0.5))
}

/// Box summary with whiskers at the most extreme points within 1.5 IQR
/// of the nearer quartile; points outside are counted as outliers.
pub fn box_summary(values: &[f64]) -> Result<BoxSummary> {
    if values.is_empty() {
        return Err(Error::Precondition("box summary of empty input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let mut whisker_low = q1;
    let mut whisker_high = q3;
    let mut n_outliers = 0u64;
    for &x in &v {
        if x < lo_fence || x > hi_fence {
            n_outliers += 1;
        } else {
            whisker_low = whisker_low.min(x);
            whisker_high = whisker_high.max(x);
        }
    }
    Ok(BoxSummary {
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
        n_outliers,
    })
}

/// Equal-width histogram over `range` (default: min..max of the data).
/// Values outside the range are dropped; bins are right-open except the
/// last, which is closed.
pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::Precondition("need at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::Precondition("histogram range must be increasing".into()));
            }
            (lo, hi)
        }
        None => {
            if values.is_empty() {
                return Err(Error::Precondition(
                    "empty input needs an explicit histogram range".into(),
                ));
            }
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                // Degenerate spread: widen to a unit window.
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0u64; bins];
    for &x in values {
        if x < lo || x > hi {
            continue;
        }
        let idx = if x == hi {
            bins - 1
        } else {
            (((x - lo) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { bin_edges, counts })
}

/// Moment diagnostics of `sqrt(N)(sigma2_hat - sigma2)` for records at
/// one grid point.
pub fn clt_diagnostics(records: &[ReplicationRecord], sigma2: f64) -> Result<MomentDiagnostics> {
    if records.len() < 2 {
        return Err(Error::Precondition("need at least two records".into()));
    }
    let s = records[0].s;
    if records.iter().any(|r| r.s != s) {
        return Err(Error::Precondition("records mix several s values".into()));
    }
    let z: Vec<f64> = records
        .iter()
        .map(|r| (r.n_total as f64).sqrt() * (r.sigma2_hat - sigma2))
        .collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = z.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = z.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let target_variance = 2.0 * sigma2 * sigma2;
    let mean_z = mean / (target_variance / n).sqrt();
    let variance_z = (variance - target_variance) / (target_variance * (2.0 / (n - 1.0)).sqrt());
    Ok(MomentDiagnostics {
        n: z.len() as u64,
        mean,
        variance,
        skewness,
        excess_kurtosis,
        target_variance,
        mean_z,
        variance_z,
    })
}

/// Per-s error summaries with a monotone-trend indicator on the medians.
/// `neyman_m` supplies the fixed size `m` when the regime keeps all
/// sizes bounded, enabling the inconsistency-limit column.
pub fn consistency_diagnostics(
    records: &[ReplicationRecord],
    sigma2: f64,
    neyman_m: Option<u64>,
) -> Result<ConsistencyTable> {
    let mut grid: Vec<u64> = records.iter().map(|r| r.s).collect();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 2 {
        return Err(Error::Precondition(
            "consistency diagnostics need at least two grid points".into(),
        ));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &s in &grid {
        let group: Vec<&ReplicationRecord> = records.iter().filter(|r| r.s == s).collect();
        let mut abs_err: Vec<f64> = group.iter().map(|r| (r.sigma2_hat - sigma2).abs()).collect();
        abs_err.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean_abs = abs_err.iter().sum::<f64>() / abs_err.len() as f64;
        let median_abs_inconsistency_err = neyman_m.map(|m| {
            let target = (m - 1) as f64 / m as f64 * sigma2;
            let v: Vec<f64> = group.iter().map(|r| (r.sigma2_hat - target).abs()).collect();
            median(&v).unwrap()
        });
        let mu0_err: Vec<f64> = group.iter().map(|r| r.mu0_error.abs()).collect();
        let gaps: Vec<f64> = group.iter().map(|r| r.control_gap).collect();
        rows.push(ConsistencyRow {
            s,
            count: group.len() as u64,
            mean_abs_sigma2_err: mean_abs,
            q1_abs_sigma2_err: quantile_sorted(&abs_err, 0.25),
            median_abs_sigma2_err: quantile_sorted(&abs_err, 0.5),
            q3_abs_sigma2_err: quantile_sorted(&abs_err, 0.75),
            median_abs_inconsistency_err,
            median_abs_mu0_err: median(&mu0_err)?,
            median_control_gap: median(&gaps)?,
        });
    }
    let decreasing = |f: fn(&ConsistencyRow) -> f64| rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    Ok(ConsistencyTable {
        sigma2_err_decreasing: decreasing(|r| r.median_abs_sigma2_err),
        mu0_err_decreasing: decreasing(|r| r.median_abs_mu0_err),
        control_gap_decreasing: decreasing(|r| r.median_control_gap),
        rows,
    })
}
