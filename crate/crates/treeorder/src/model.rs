//! Domain types: sample-size layouts, true parameters, raw datasets and
//! their reduction to sufficient statistics.
//!
//! All types here are immutable after construction and safe to share
//! across threads. Everything downstream (fitting, simulation) consumes
//! data only through [`SampleSummary`]; raw [`Dataset`]s exist for
//! ingestion and for oracle tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to clamp round-off negatives in sums of squares.
const SSW_CLAMP_REL: f64 = 1e-12;

/// Sample-size structure: `s` treatment populations plus one control.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationLayout {
    n0: u64,
    n: Vec<u64>,
}

impl PopulationLayout {
    /// Builds a layout from the control size and the treatment sizes.
    ///
    /// Requires at least one treatment population and every size >= 1.
    pub fn new(n0: u64, n: Vec<u64>) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::InvalidLayout("need s >= 1 treatment populations".into()));
        }
        if n0 < 1 {
            return Err(Error::InvalidLayout("control sample size must be >= 1".into()));
        }
        if let Some(i) = n.iter().position(|&ni| ni < 1) {
            return Err(Error::InvalidLayout(format!(
                "treatment {} has sample size 0",
                i + 1
            )));
        }
        Ok(Self { n0, n })
    }

    /// Number of treatment populations.
    pub fn s(&self) -> usize {
        self.n.len()
    }

    /// Control sample size.
    pub fn n0(&self) -> u64 {
        self.n0
    }

    /// Treatment sample sizes, index 0 = treatment 1.
    pub fn treatment_sizes(&self) -> &[u64] {
        &self.n
    }

    /// Size of population `i` with index 0 = control.
    pub fn size(&self, i: usize) -> u64 {
        if i == 0 {
            self.n0
        } else {
            self.n[i - 1]
        }
    }

    /// Total sample size `N = n0 + sum(n_i)`.
    pub fn total(&self) -> u64 {
        self.n0 + self.n.iter().sum::<u64>()
    }

    /// True when every treatment population has the same size.
    pub fn equal_treatment_sizes(&self) -> bool {
        self.n.iter().all(|&ni| ni == self.n[0])
    }
}

/// True model parameters under assumptions A1 (tree order), A2 (bound)
/// and a positive common variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanParams {
    pub mu0: f64,
    pub mu: Vec<f64>,
    pub sigma2: f64,
    pub bound: f64,
}

impl MeanParams {
    pub fn new(mu0: f64, mu: Vec<f64>, sigma2: f64, bound: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParams("sigma2 must be > 0".into()));
        }
        if mu0 > bound {
            return Err(Error::InvalidParams("mu0 exceeds the bound B".into()));
        }
        for (i, &mi) in mu.iter().enumerate() {
            if mi < mu0 {
                return Err(Error::InvalidParams(format!(
                    "tree order violated: mu[{}] = {} < mu0 = {}",
                    i + 1,
                    mi,
                    mu0
                )));
            }
            if mi > bound {
                return Err(Error::InvalidParams(format!(
                    "mu[{}] = {} exceeds the bound B = {}",
                    i + 1,
                    mi,
                    bound
                )));
            }
        }
        Ok(Self { mu0, mu, sigma2, bound })
    }
}

/// Raw per-population observations matching a [`PopulationLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    layout: PopulationLayout,
    observations: Vec<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from per-population observation vectors,
    /// `observations[0]` being the control sample.
    pub fn new(observations: Vec<Vec<f64>>) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::InvalidLayout(
                "need a control population and s >= 1 treatment populations".into(),
            ));
        }
        if let Some(i) = observations.iter().position(|o| o.is_empty()) {
            return Err(Error::InvalidLayout(format!("population {i} is empty")));
        }
        let n0 = observations[0].len() as u64;
        let n = observations[1..].iter().map(|o| o.len() as u64).collect();
        let layout = PopulationLayout::new(n0, n)?;
        Ok(Self { layout, observations })
    }

    pub fn layout(&self) -> &PopulationLayout {
        &self.layout
    }

    /// Observations of population `i`, index 0 = control.
    pub fn population(&self, i: usize) -> &[f64] {
        &self.observations[i]
    }
}

/// Sufficient statistics per population: sample mean and within-group sum
/// of squared deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    layout: PopulationLayout,
    mean: Vec<f64>,
    ssw: Vec<f64>,
}

impl SampleSummary {
    /// Builds a summary from precomputed statistics.
    ///
    /// `mean` and `ssw` are indexed with 0 = control and must have length
    /// `s + 1`. Tiny negative `ssw` entries (round-off) are clamped to 0;
    /// larger negatives are rejected.
    pub fn from_parts(layout: PopulationLayout, mean: Vec<f64>, mut ssw: Vec<f64>) -> Result<Self> {
        let want = layout.s() + 1;
        if mean.len() != want || ssw.len() != want {
            return Err(Error::InvalidLayout(format!(
                "summary vectors must have length s + 1 = {want}"
            )));
        }
        for (i, v) in ssw.iter_mut().enumerate() {
            if *v < 0.0 {
                let scale = mean[i].abs().max(1.0);
                if *v >= -SSW_CLAMP_REL * scale {
                    *v = 0.0;
                } else {
                    return Err(Error::InvalidLayout(format!(
                        "ssw[{i}] = {v} is negative"
                    )));
                }
            }
            if layout.size(i) == 1 && *v != 0.0 {
                return Err(Error::InvalidLayout(format!(
                    "ssw[{i}] must be 0 for a single-observation population"
                )));
            }
        }
        Ok(Self { layout, mean, ssw })
    }

    pub fn layout(&self) -> &PopulationLayout {
        &self.layout
    }

    pub fn s(&self) -> usize {
        self.layout.s()
    }

    pub fn total_size(&self) -> u64 {
        self.layout.total()
    }

    /// Sample means, index 0 = control.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Within-group sums of squared deviations, index 0 = control.
    pub fn ssw(&self) -> &[f64] {
        &self.ssw
    }

    /// Control sample mean.
    pub fn control_mean(&self) -> f64 {
        self.mean[0]
    }

    /// Treatment sample means, index 0 = treatment 1.
    pub fn treatment_means(&self) -> &[f64] {
        &self.mean[1..]
    }
}

/// Reduces raw observations to their sufficient statistics.
///
/// Uses a two-pass scheme: means first, then squared deviations about the
/// mean, which keeps the sum of squares nonnegative up to round-off.
pub fn summarize(data: &Dataset) -> SampleSummary {
    let layout = data.layout().clone();
    let mut mean = Vec::with_capacity(layout.s() + 1);
    let mut ssw = Vec::with_capacity(layout.s() + 1);
    for i in 0..=layout.s() {
        let obs = data.population(i);
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let sq = obs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        mean.push(m);
        ssw.push(sq);
    }
    SampleSummary::from_parts(layout, mean, ssw).expect("two-pass statistics are always valid")
}

/// Total sample size of a layout.
pub fn total_sample_size(layout: &PopulationLayout) -> u64 {
    layout.total()
}
