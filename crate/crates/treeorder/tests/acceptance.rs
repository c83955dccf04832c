//! Acceptance suite: one test per release criterion, each printing a
//! single PASS/FAIL line (run with `--nocapture` to see them as they
//! complete). Thresholds are fixed here, not tuned at runtime.

use std::fs;
use std::time::Instant;

use rand::Rng;
use treeorder::estimator;
use treeorder::model::{PopulationLayout, SampleSummary};
use treeorder::montecarlo::{self, ExperimentPlan, ReplicationRecord};
use treeorder::simulate::{self, MeanModel, RegimeSpec, ScenarioConfig, SizeSchedule};

fn report(num: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "ACCEPTANCE {num:02} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Random summary with s in [1, max_s], sizes in [1, 10], means in
/// [-5, 5]; equal treatment sizes when requested.
fn random_summary(
    stream: &mut simulate::RandomStream,
    max_s: usize,
    equal_sizes: bool,
    with_ssw: bool,
) -> SampleSummary {
    let s = stream.gen_range(1..=max_s);
    let n0 = stream.gen_range(1..=10u64);
    let shared = stream.gen_range(1..=10u64);
    let sizes: Vec<u64> = (0..s)
        .map(|_| if equal_sizes { shared } else { stream.gen_range(1..=10) })
        .collect();
    let layout = PopulationLayout::new(n0, sizes).unwrap();
    let mean: Vec<f64> = (0..=s).map(|_| stream.gen_range(-5.0..5.0)).collect();
    let ssw: Vec<f64> = (0..=s)
        .map(|i| {
            if with_ssw && layout.size(i) > 1 {
                stream.gen_range(0.0..10.0)
            } else {
                0.0
            }
        })
        .collect();
    SampleSummary::from_parts(layout, mean, ssw).unwrap()
}

fn plan(regime: RegimeSpec, sigma2: f64, seed: u64, s_grid: Vec<u64>, reps: u64) -> ExperimentPlan {
    ExperimentPlan {
        scenario: ScenarioConfig {
            regime,
            mean_model: MeanModel::AllZero,
            sigma2,
            bound: 1.0,
            seed,
        },
        s_grid,
        replications: reps,
        worker_hint: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        row_cap: None,
    }
}

fn medians_by_s(records: &[ReplicationRecord], f: impl Fn(&ReplicationRecord) -> f64) -> Vec<(u64, f64)> {
    let mut grid: Vec<u64> = records.iter().map(|r| r.s).collect();
    grid.sort_unstable();
    grid.dedup();
    grid.into_iter()
        .map(|s| {
            let v: Vec<f64> = records.iter().filter(|r| r.s == s).map(&f).collect();
            (s, montecarlo::median(&v).unwrap())
        })
        .collect()
}

#[test]
fn c01_subset_oracle_equivalence() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..1000u64 {
        let mut stream = simulate::derive_stream(101, trial, u64::MAX - 1);
        let sm = random_summary(&mut stream, 12, false, true);
        let fast = estimator::mle_mu0(&sm);
        let brute = estimator::mle_mu0_bruteforce(&sm).unwrap();
        worst = worst.max((fast - brute).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && elapsed < 10.0;
    assert!(report(
        1,
        "subset minimization matches brute force",
        pass,
        &format!("1000 instances, worst |diff| = {worst:.2e}, {elapsed:.2}s")
    ));
}

#[test]
fn c02_decomposition_identity() {
    let mut worst_rel = 0.0f64;
    let mut worst_term = 0.0f64;
    let mut check = |fit: &estimator::MleFit| {
        let sum = fit.i1 + fit.i2 + fit.i3 + fit.i4;
        worst_rel = worst_rel.max((fit.sigma2_hat - sum).abs() / sum.abs().max(1.0));
        worst_term = worst_term.min(fit.i1.min(fit.i2).min(fit.i3).min(fit.i4));
    };
    for trial in 0..2000u64 {
        let mut stream = simulate::derive_stream(102, trial, u64::MAX - 1);
        let sm = random_summary(&mut stream, 12, false, true);
        check(&estimator::mle_variance(&sm).unwrap());
    }
    // Also on Monte Carlo fits from a sampled regime.
    let records =
        montecarlo::run_experiment(&plan(RegimeSpec::NeymanScott { m: 5 }, 1.0, 102, vec![50], 200))
            .unwrap();
    for r in &records {
        let sum = r.i1 + r.i2 + r.i3 + r.i4;
        worst_rel = worst_rel.max((r.sigma2_hat - sum).abs() / sum.abs().max(1.0));
        worst_term = worst_term.min(r.i1.min(r.i2).min(r.i3).min(r.i4));
    }
    let pass = worst_rel <= 1e-10 && worst_term >= -1e-15;
    assert!(report(
        2,
        "variance decomposition identity",
        pass,
        &format!("worst relative gap {worst_rel:.2e}, most negative term {worst_term:.2e}")
    ));
}

#[test]
fn c03_mean_bounds() {
    let mut violations = 0u32;
    for trial in 0..1000u64 {
        let mut stream = simulate::derive_stream(103, trial, u64::MAX - 1);
        let sm = random_summary(&mut stream, 12, true, true);
        let b = estimator::mu0_bounds(&sm).unwrap();
        let m0 = estimator::mle_mu0(&sm);
        if m0 < b.lower - 1e-12 || m0 > b.upper + 1e-12 {
            violations += 1;
        }
    }
    assert!(report(
        3,
        "control-mean bounds",
        violations == 0,
        &format!("1000 equal-size instances, {violations} violations")
    ));
}

#[test]
fn c04_fixed_size_inconsistency_limit() {
    let start = Instant::now();
    let records =
        montecarlo::run_experiment(&plan(RegimeSpec::NeymanScott { m: 5 }, 1.0, 104, vec![5000], 200))
            .unwrap();
    let mean = records.iter().map(|r| r.sigma2_hat).sum::<f64>() / records.len() as f64;
    let mut singles_ok = true;
    let mut singles = Vec::new();
    for rep in 0..3u64 {
        let p = plan(RegimeSpec::NeymanScott { m: 5 }, 1.0, 2104 + rep, vec![20000], 1);
        let r = montecarlo::run_experiment(&p).unwrap();
        singles.push(r[0].sigma2_hat);
        singles_ok &= (r[0].sigma2_hat - 0.8).abs() <= 0.02;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (mean - 0.8).abs() <= 0.01 && singles_ok && elapsed < 120.0;
    assert!(report(
        4,
        "fixed-size variance limit 0.8",
        pass,
        &format!("mean sigma2_hat {mean:.4} over 200 reps at s=5000; singles at s=20000 {singles:?}; {elapsed:.1}s")
    ));
}

#[test]
fn c05_two_population_clt() {
    let start = Instant::now();
    let records = montecarlo::run_experiment(&plan(
        RegimeSpec::TwoPopulation { m: 4, mprime: 3 },
        1.0,
        105,
        vec![30000],
        2000,
    ))
    .unwrap();
    assert_eq!(records[0].n_total, 90004);
    let d = montecarlo::clt_diagnostics(&records, 1.0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass =
        d.mean.abs() <= 0.10 && (1.80..=2.20).contains(&d.variance) && elapsed < 60.0;
    assert!(report(
        5,
        "two-population CLT moments",
        pass,
        &format!(
            "mean z {:.4} (|.| <= 0.10), var z {:.4} (in [1.80, 2.20]), {elapsed:.1}s",
            d.mean, d.variance
        )
    ));
}

#[test]
fn c06_control_heavy_consistency() {
    let records = montecarlo::run_experiment(&plan(
        RegimeSpec::ControlHeavy { a: 2.0, m: 5 },
        1.0,
        106,
        vec![100, 500, 2000],
        50,
    ))
    .unwrap();
    let worst_at_2000 = records
        .iter()
        .filter(|r| r.s == 2000)
        .map(|r| (r.sigma2_hat - 1.0).abs())
        .fold(0.0f64, f64::max);
    let table = montecarlo::consistency_diagnostics(&records, 1.0, None).unwrap();
    let meds: Vec<f64> = table.rows.iter().map(|r| r.median_abs_sigma2_err).collect();
    let pass = worst_at_2000 <= 0.02 && table.sigma2_err_decreasing;
    assert!(report(
        6,
        "control-heavy strong consistency",
        pass,
        &format!("worst |err| at s=2000 = {worst_at_2000:.4}; medians {meds:?} decreasing = {}",
            table.sigma2_err_decreasing)
    ));
}

#[test]
fn c07_least_squares_upper_bound() {
    let mut violations = 0u32;
    for trial in 0..10_000u64 {
        let mut stream = simulate::derive_stream(107, trial, u64::MAX - 1);
        let s = stream.gen_range(1..=10usize);
        let n0 = stream.gen_range(1..=10u64);
        let sizes: Vec<u64> = (0..s).map(|_| stream.gen_range(1..=10)).collect();
        let layout = PopulationLayout::new(n0, sizes).unwrap();
        let mu0 = stream.gen_range(-2.0..2.0);
        let mu: Vec<f64> = (0..s).map(|_| mu0 + stream.gen_range(0.0..2.0)).collect();
        let sigma2 = stream.gen_range(0.25..4.0);
        let params =
            treeorder::model::MeanParams::new(mu0, mu.clone(), sigma2, mu0 + 2.0).unwrap();
        // Sample the summary from the true law.
        let mut mean = Vec::with_capacity(s + 1);
        let mut ssw = Vec::with_capacity(s + 1);
        for i in 0..=s {
            let ni = layout.size(i) as f64;
            let mi = if i == 0 { mu0 } else { mu[i - 1] };
            let u1: f64 = stream.gen_range(1e-12..1.0);
            let u2: f64 = stream.gen_range(0.0..std::f64::consts::TAU);
            let z = (-2.0 * u1.ln()).sqrt() * u2.cos();
            mean.push(mi + (sigma2 / ni).sqrt() * z);
            let mut sq = 0.0;
            for _ in 0..(layout.size(i) - 1) {
                let u1: f64 = stream.gen_range(1e-12..1.0);
                let u2: f64 = stream.gen_range(0.0..std::f64::consts::TAU);
                let z = (-2.0 * u1.ln()).sqrt() * u2.cos();
                sq += sigma2 * z * z;
            }
            ssw.push(sq);
        }
        let summary = SampleSummary::from_parts(layout, mean, ssw).unwrap();
        let fit = estimator::mle_variance(&summary).unwrap();
        let check = estimator::unconstrained_bound_check(&summary, &params, &fit).unwrap();
        if !check.holds {
            violations += 1;
        }
    }
    assert!(report(
        7,
        "variance MLE below unconstrained residual",
        violations == 0,
        &format!("10000 tree-ordered instances, {violations} violations")
    ));
}

const FULL_GRID: [u64; 7] = [10, 50, 100, 500, 1000, 5000, 10000];

#[test]
fn c08a_log_squared_xi_shrinks() {
    let start = Instant::now();
    let records = montecarlo::run_experiment(&plan(
        RegimeSpec::LogSquared,
        1.0,
        108,
        FULL_GRID.to_vec(),
        2500,
    ))
    .unwrap();
    let meds = medians_by_s(&records, |r| r.xi);
    let non_increasing = meds.windows(2).all(|w| w[1].1 <= w[0].1);
    let last_below_first = meds.last().unwrap().1 < meds[0].1;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = non_increasing && last_below_first && elapsed < 300.0;
    assert!(report(
        8,
        "a: log-squared regime xi medians shrink",
        pass,
        &format!("medians {:?}, {elapsed:.1}s", meds.iter().map(|m| m.1).collect::<Vec<_>>())
    ));
}

#[test]
fn c08b_linear_control_penalty_vs_xi() {
    let start = Instant::now();
    let records = montecarlo::run_experiment(&plan(
        RegimeSpec::LinearControl { c: 1.0, m: 100 },
        1.0,
        108,
        FULL_GRID.to_vec(),
        2500,
    ))
    .unwrap();
    let pen = medians_by_s(&records, |r| r.i2 + r.i4);
    let xi = medians_by_s(&records, |r| r.xi);
    let penalty_decreasing = pen.windows(2).all(|w| w[1].1 < w[0].1);
    let xi_stays_up = xi.last().unwrap().1 >= 0.5 * xi[0].1;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = penalty_decreasing && xi_stays_up && elapsed < 300.0;
    assert!(report(
        8,
        "b: linear-control penalty decreases while xi persists",
        pass,
        &format!(
            "median I2+I4 {:?} decreasing = {penalty_decreasing}; median xi first {:.4} last {:.4}; {elapsed:.1}s",
            pen.iter().map(|m| m.1).collect::<Vec<_>>(),
            xi[0].1,
            xi.last().unwrap().1
        )
    ));
}

#[test]
fn c09_control_gap_vs_mu0_consistency() {
    let regime = RegimeSpec::FastTotal {
        n0: SizeSchedule::Fixed { m: 3 },
        n: SizeSchedule::Product {
            factors: vec![
                SizeSchedule::CeilLogPow { coeff: 1.0, exp: 2.0 },
                SizeSchedule::CeilLogPow { coeff: 1.0, exp: 1.0 },
            ],
        },
    };
    let records =
        montecarlo::run_experiment(&plan(regime, 1.0, 109, vec![10, 10000], 2500)).unwrap();
    let gap = medians_by_s(&records, |r| r.control_gap);
    let mu0_err = medians_by_s(&records, |r| r.mu0_error.abs());
    let shrink_factor = gap[0].1 / gap[1].1;
    let gap_shrinks = shrink_factor >= 5.0;
    let mu0_stays_off = mu0_err[1].1 >= 0.1;
    let pass = gap_shrinks && mu0_stays_off;
    assert!(report(
        9,
        "control gap closes while mu0 stays inconsistent",
        pass,
        &format!(
            "median gap {:.4} -> {:.4} (factor {shrink_factor:.2}, need >= 5); median |mu0 err| at s=10000 = {:.4}",
            gap[0].1, gap[1].1, mu0_err[1].1
        )
    ));
}

#[test]
fn c10_determinism_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(
        &cfg,
        r#"{
            "regime": {"kind": "log_squared"},
            "mean_model": {"kind": "all_zero"},
            "sigma2": 1.0,
            "seed": 110,
            "s_grid": [10, 100],
            "replications": 25
        }"#,
    )
    .unwrap();
    let run = |out: &std::path::Path, workers: &str| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_treeorder"))
            .arg("simulate")
            .args(["--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(out)
            .args(["--workers", workers])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out1 = dir.path().join("w1");
    let out8 = dir.path().join("w8");
    run(&out1, "1");
    run(&out8, "8");
    let mut all_equal = true;
    for name in ["records.csv", "box_xi.csv", "histogram_xi_s100.csv", "diagnostics.json"] {
        all_equal &= fs::read(out1.join(name)).unwrap() == fs::read(out8.join(name)).unwrap();
    }
    assert!(report(
        10,
        "byte-identical outputs for 1 and 8 workers",
        all_equal,
        "records, box, histogram and diagnostics compared"
    ));
}
