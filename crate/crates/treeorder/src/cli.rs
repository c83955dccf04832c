//! Command implementations behind the `treeorder` binary: dataset
//! fitting, experiment execution with file outputs, randomized oracle
//! self-checks, and re-aggregation of stored records.
//!
//! File conventions: records and summary CSVs start with a
//! `# manifest: manifest.json` reference line; reals are serialized with
//! 17 significant digits so parsing them back is bit-faithful.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{self, BRUTE_FORCE_MAX_S};
use crate::model::{Dataset, PopulationLayout, SampleSummary, summarize};
use crate::montecarlo::{
    self, ConsistencyTable, ExperimentPlan, MomentDiagnostics, ReplicationRecord,
};
use crate::simulate::{self, MeanModel, RegimeSpec, ScenarioConfig};

/// CLI-level error carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Validation(String),
    /// Exit code 2.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Serializes a real with 17 significant digits for bit-faithful
/// round-trips through text files.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn default_bound() -> f64 {
    1.0
}

/// On-disk experiment configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: RegimeSpec,
    pub mean_model: MeanModel,
    pub sigma2: f64,
    #[serde(default = "default_bound")]
    pub bound: f64,
    pub seed: u64,
    pub s_grid: Vec<u64>,
    pub replications: u64,
}

impl ExperimentConfig {
    pub fn to_plan(&self, workers: usize) -> ExperimentPlan {
        ExperimentPlan {
            scenario: ScenarioConfig {
                regime: self.regime.clone(),
                mean_model: self.mean_model.clone(),
                sigma2: self.sigma2,
                bound: self.bound,
                seed: self.seed,
            },
            s_grid: self.s_grid.clone(),
            replications: self.replications,
            worker_hint: workers,
            row_cap: None,
        }
    }
}

/// Run provenance: resolved configuration (defaults included), seed,
/// artifact version and the output file inventory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub timestamp: String,
    pub seed: u64,
    pub bins: usize,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

const MANIFEST_REF: &str = "# manifest: manifest.json";

const RECORD_HEADER: [&str; 14] = [
    "s",
    "replication",
    "N",
    "n0",
    "n",
    "sigma2_hat",
    "xi",
    "mu0_hat",
    "control_gap",
    "mu0_error",
    "I1",
    "I2",
    "I3",
    "I4",
];

/// Writes the records CSV (fixed column order, 17 significant digits).
pub fn write_records_csv(path: &Path, records: &[ReplicationRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(MANIFEST_REF);
    out.push('\n');
    out.push_str(&RECORD_HEADER.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.s,
            r.replication,
            r.n_total,
            r.n0,
            r.n_per,
            fmt_f64(r.sigma2_hat),
            fmt_f64(r.xi),
            fmt_f64(r.mu0_hat),
            fmt_f64(r.control_gap),
            fmt_f64(r.mu0_error),
            fmt_f64(r.i1),
            fmt_f64(r.i2),
            fmt_f64(r.i3),
            fmt_f64(r.i4),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a records CSV back, verifying the column schema.
pub fn read_records_csv(path: &Path) -> Result<Vec<ReplicationRecord>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RECORD_HEADER.iter().copied()) {
        return Err(CliError::Io(format!(
            "records schema mismatch in {}: expected columns {}",
            path.display(),
            RECORD_HEADER.join(",")
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != RECORD_HEADER.len() {
            return Err(CliError::Io(format!("short record row in {}", path.display())));
        }
        let f = |i: usize| -> Result<f64, CliError> {
            row[i].parse().map_err(|_| CliError::Io(format!("bad real in column {}", RECORD_HEADER[i])))
        };
        let u = |i: usize| -> Result<u64, CliError> {
            row[i].parse().map_err(|_| CliError::Io(format!("bad integer in column {}", RECORD_HEADER[i])))
        };
        records.push(ReplicationRecord {
            s: u(0)?,
            replication: u(1)?,
            n_total: u(2)?,
            n0: u(3)?,
            n_per: u(4)?,
            sigma2_hat: f(5)?,
            xi: f(6)?,
            mu0_hat: f(7)?,
            control_gap: f(8)?,
            mu0_error: f(9)?,
            i1: f(10)?,
            i2: f(11)?,
            i3: f(12)?,
            i4: f(13)?,
        });
    }
    Ok(records)
}

/// Summary-file bundle regenerated from a record list.
#[derive(Debug, Serialize)]
struct Diagnostics {
    sigma2: f64,
    clt: Vec<CltEntry>,
    consistency: Option<ConsistencyTable>,
}

#[derive(Debug, Serialize)]
struct CltEntry {
    s: u64,
    moments: MomentDiagnostics,
}

fn write_summaries(
    out_dir: &Path,
    records: &[ReplicationRecord],
    sigma2: f64,
    neyman_m: Option<u64>,
    bins: usize,
) -> Result<Vec<String>, CliError> {
    let mut by_s: BTreeMap<u64, Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        by_s.entry(r.s).or_default().push(r);
    }
    if by_s.is_empty() {
        return Err(CliError::Validation("no records to summarize".into()));
    }
    let mut outputs = Vec::new();

    // Per-s box summary of xi.
    let mut box_csv = String::new();
    box_csv.push_str(MANIFEST_REF);
    box_csv.push_str("\ns,count,q1,median,q3,whisker_low,whisker_high,n_outliers\n");
    for (&s, group) in &by_s {
        let xi: Vec<f64> = group.iter().map(|r| r.xi).collect();
        let b = montecarlo::box_summary(&xi)?;
        box_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s,
            xi.len(),
            fmt_f64(b.q1),
            fmt_f64(b.median),
            fmt_f64(b.q3),
            fmt_f64(b.whisker_low),
            fmt_f64(b.whisker_high),
            b.n_outliers,
        ));
    }
    fs::write(out_dir.join("box_xi.csv"), box_csv)?;
    outputs.push("box_xi.csv".to_string());

    // Histogram of xi at the largest grid point.
    let (&s_max, largest) = by_s.iter().next_back().unwrap();
    let xi: Vec<f64> = largest.iter().map(|r| r.xi).collect();
    let h = montecarlo::histogram(&xi, bins, None)?;
    let mut hist_csv = String::new();
    hist_csv.push_str(MANIFEST_REF);
    hist_csv.push_str("\nbin_low,bin_high,count\n");
    for (i, &c) in h.counts.iter().enumerate() {
        hist_csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(h.bin_edges[i]),
            fmt_f64(h.bin_edges[i + 1]),
            c
        ));
    }
    let hist_name = format!("histogram_xi_s{s_max}.csv");
    fs::write(out_dir.join(&hist_name), hist_csv)?;
    outputs.push(hist_name);

    // Moment and consistency diagnostics.
    let mut clt = Vec::new();
    for (&s, group) in &by_s {
        if group.len() >= 2 {
            let owned: Vec<ReplicationRecord> = group.iter().map(|&r| r.clone()).collect();
            clt.push(CltEntry {
                s,
                moments: montecarlo::clt_diagnostics(&owned, sigma2)?,
            });
        }
    }
    let consistency = if by_s.len() >= 2 {
        Some(montecarlo::consistency_diagnostics(records, sigma2, neyman_m)?)
    } else {
        None
    };
    let diag = Diagnostics { sigma2, clt, consistency };
    fs::write(
        out_dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&diag)? + "\n",
    )?;
    outputs.push("diagnostics.json".to_string());
    Ok(outputs)
}

fn neyman_limit_m(regime: &RegimeSpec) -> Option<u64> {
    match regime {
        RegimeSpec::NeymanScott { m } => Some(*m),
        _ => None,
    }
}

/// Options for `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateOpts {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub bins: usize,
}

fn resolve_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| {
            std::env::var("TREEORDER_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
        .max(1)
}

/// Runs an experiment from a JSON config and writes records, summaries
/// and the run manifest into the output directory.
pub fn cmd_simulate(opts: &SimulateOpts) -> Result<RunManifest, CliError> {
    let raw = fs::read_to_string(&opts.config)?;
    let mut config: ExperimentConfig = serde_json::from_str(&raw)
        .map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let workers = resolve_workers(opts.workers);
    let plan = config.to_plan(workers);
    plan.validate()?;
    fs::create_dir_all(&opts.out)?;

    let records = montecarlo::run_experiment(&plan)?;
    write_records_csv(&opts.out.join("records.csv"), &records)?;
    let mut outputs = vec!["records.csv".to_string()];
    outputs.extend(write_summaries(
        &opts.out,
        &records,
        config.sigma2,
        neyman_limit_m(&config.regime),
        opts.bins,
    )?);

    let manifest = RunManifest {
        artifact: "treeorder".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        seed: config.seed,
        bins: opts.bins,
        config,
        outputs,
    };
    fs::write(
        opts.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Re-aggregates stored records into summary files without resampling.
/// The manifest (default: `manifest.json` beside the records) supplies
/// the scenario parameters and binning.
pub fn cmd_report(
    records_path: &Path,
    manifest_path: Option<&Path>,
    out_dir: &Path,
    bins: Option<usize>,
) -> Result<(), CliError> {
    let default_manifest = records_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("manifest.json");
    let manifest_path = manifest_path.unwrap_or(&default_manifest);
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let records = read_records_csv(records_path)?;
    montecarlo::validate_records(&records)?;
    fs::create_dir_all(out_dir)?;
    write_summaries(
        out_dir,
        &records,
        manifest.config.sigma2,
        neyman_limit_m(&manifest.config.regime),
        bins.unwrap_or(manifest.bins),
    )?;
    Ok(())
}

/// Fits a headered CSV with columns `population_id,value` (0 = control)
/// and renders the estimate report.
pub fn cmd_fit(input: &Path) -> Result<String, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(input)?;
    {
        let headers = reader.headers()?;
        if headers.len() != 2 || &headers[0] != "population_id" || &headers[1] != "value" {
            return Err(CliError::Io(
                "expected CSV header population_id,value".to_string(),
            ));
        }
    }
    let mut by_id: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let id: u64 = row[0]
            .parse()
            .map_err(|_| CliError::Io(format!("bad population_id {:?}", &row[0])))?;
        let value: f64 = row[1]
            .parse()
            .map_err(|_| CliError::Io(format!("bad value {:?}", &row[1])))?;
        by_id.entry(id).or_default().push(value);
    }
    if by_id.is_empty() {
        return Err(CliError::Validation("no observations in input".into()));
    }
    if !by_id.contains_key(&0) {
        return Err(CliError::Validation("missing control population (id 0)".into()));
    }
    let max_id = *by_id.keys().next_back().unwrap();
    if max_id == 0 {
        return Err(CliError::Validation("need s >= 1 treatment populations".into()));
    }
    let mut observations = Vec::with_capacity(max_id as usize + 1);
    for id in 0..=max_id {
        match by_id.remove(&id) {
            Some(obs) => observations.push(obs),
            None => {
                return Err(CliError::Validation(format!(
                    "population ids must be contiguous; id {id} is missing"
                )))
            }
        }
    }
    let dataset = Dataset::new(observations)?;
    let summary = summarize(&dataset);
    render_fit_report(&summary)
}

fn render_fit_report(summary: &SampleSummary) -> Result<String, CliError> {
    let fit = estimator::mle_variance(summary)?;
    let mut out = String::new();
    out.push_str(&format!(
        "s = {}, n0 = {}, N = {}\n",
        summary.s(),
        summary.layout().n0(),
        summary.total_size()
    ));
    out.push_str(&format!("mu0_hat     = {}\n", fmt_f64(fit.mu0_hat)));
    for (i, m) in fit.mu_hat.iter().enumerate() {
        out.push_str(&format!("mu_hat[{}]   = {}\n", i + 1, fmt_f64(*m)));
    }
    out.push_str(&format!("sigma2_hat  = {}\n", fmt_f64(fit.sigma2_hat)));
    out.push_str(&format!(
        "I1, I2, I3, I4 = {}, {}, {}, {}\n",
        fmt_f64(fit.i1),
        fmt_f64(fit.i2),
        fmt_f64(fit.i3),
        fmt_f64(fit.i4)
    ));
    out.push_str(&format!("xi          = {}\n", fmt_f64(fit.xi)));
    if summary.layout().equal_treatment_sizes() {
        let b = estimator::mu0_bounds(summary)?;
        out.push_str(&format!(
            "bounds: rho = {}, lambda = {}, lower = {}, upper = {}\n",
            fmt_f64(b.rho),
            fmt_f64(b.lambda),
            fmt_f64(b.lower),
            fmt_f64(b.upper)
        ));
    }
    Ok(out)
}

/// Result of the randomized oracle scan.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub trials: u64,
    pub failures: u64,
    pub detail: Vec<String>,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Randomized self-check of the subset minimization against brute force,
/// the decomposition identity, and the mean bounds.
pub fn oracle_scan(trials: u64, max_s: usize, seed: u64) -> Result<OracleOutcome, CliError> {
    oracle_scan_with(trials, max_s, seed, &estimator::mle_mu0)
}

/// Same scan with a pluggable control-mean estimator; used as a negative
/// control in tests.
pub fn oracle_scan_with(
    trials: u64,
    max_s: usize,
    seed: u64,
    mu0_est: &dyn Fn(&SampleSummary) -> f64,
) -> Result<OracleOutcome, CliError> {
    if max_s > BRUTE_FORCE_MAX_S {
        return Err(CliError::Validation(format!(
            "max_s must be <= {BRUTE_FORCE_MAX_S}"
        )));
    }
    if max_s < 1 {
        return Err(CliError::Validation("max_s must be >= 1".into()));
    }
    let mut failures = 0u64;
    let mut detail = Vec::new();
    let mut note = |msg: String, failures: &mut u64| {
        *failures += 1;
        if detail.len() < 20 {
            detail.push(msg);
        }
    };
    for trial in 0..trials {
        let mut stream = simulate::derive_stream(seed, trial, u64::MAX);
        let s = stream.gen_range(1..=max_s);
        let equal_sizes = stream.gen_bool(0.5);
        let n0 = stream.gen_range(1..=10u64);
        let shared = stream.gen_range(1..=10u64);
        let sizes: Vec<u64> = (0..s)
            .map(|_| if equal_sizes { shared } else { stream.gen_range(1..=10) })
            .collect();
        let layout = PopulationLayout::new(n0, sizes)?;
        let mean: Vec<f64> = (0..=s).map(|_| stream.gen_range(-5.0..5.0)).collect();
        let ssw: Vec<f64> = (0..=s)
            .map(|i| {
                if layout.size(i) == 1 {
                    0.0
                } else {
                    stream.gen_range(0.0..10.0)
                }
            })
            .collect();
        let summary = SampleSummary::from_parts(layout, mean, ssw)?;

        let fast = mu0_est(&summary);
        let brute = estimator::mle_mu0_bruteforce(&summary)?;
        if (fast - brute).abs() > 1e-12 * summary.control_mean().abs().max(1.0) {
            note(
                format!("trial {trial}: mu0 {fast} != brute force {brute}"),
                &mut failures,
            );
        }

        let mu_hat: Vec<f64> = summary
            .treatment_means()
            .iter()
            .map(|&m| m.max(fast))
            .collect();
        let (i1, i2, i3, i4) = estimator::decompose(&summary, fast, &mu_hat);
        let fit = estimator::mle_variance(&summary)?;
        let sum = i1 + i2 + i3 + i4;
        if (fit.sigma2_hat - sum).abs() > 1e-10 * sum.abs().max(1.0) {
            note(
                format!("trial {trial}: decomposition {sum} != sigma2_hat {}", fit.sigma2_hat),
                &mut failures,
            );
        }

        if equal_sizes {
            let b = estimator::mu0_bounds(&summary)?;
            if fast < b.lower - 1e-12 || fast > b.upper + 1e-12 {
                note(
                    format!("trial {trial}: mu0 {fast} outside [{}, {}]", b.lower, b.upper),
                    &mut failures,
                );
            }
        }
    }
    Ok(OracleOutcome { trials, failures, detail })
}

/// Renders the oracle outcome as a human-readable report.
pub fn render_oracle_report(outcome: &OracleOutcome) -> String {
    let mut out = String::new();
    if outcome.trials == 0 {
        out.push_str("warning: 0 trials requested; vacuous pass\n");
    }
    out.push_str(&format!(
        "oracle check: {} trials, {} failures -> {}\n",
        outcome.trials,
        outcome.failures,
        if outcome.passed() { "PASS" } else { "FAIL" }
    ));
    for d in &outcome.detail {
        out.push_str(&format!("  {d}\n"));
    }
    out
}
