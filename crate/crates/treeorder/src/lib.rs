//! Constrained maximum-likelihood estimation of normal means under a tree
//! order restriction (a control mean dominated by every treatment mean),
//! the MLE of the common variance, and a deterministic Monte Carlo engine
//! for studying the large-`s` behaviour of these estimators.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod model;
pub mod montecarlo;
pub mod simulate;

pub use error::{Error, Result};
pub use estimator::{BoundsReport, MleFit};
pub use model::{Dataset, MeanParams, PopulationLayout, SampleSummary};
pub use montecarlo::{BoxSummary, ExperimentPlan, Histogram, MomentDiagnostics, ReplicationRecord};
pub use simulate::{MeanModel, RegimeSpec, ScenarioConfig, SizeSchedule};
