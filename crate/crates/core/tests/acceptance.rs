//! Acceptance suite. Every criterion prints one PASS/FAIL line to stderr
//! (written directly, so it shows even when test output is captured), and the
//! test fails if any criterion fails. Criterion 10 needs external Preflib data
//! and is skipped unless `REPSEL_PREFLIB_DIR` is set.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use rand::Rng;
use repsel::decompose::repeated_selection;
use repsel::estimate::{fit, nll, nll_and_grad, BatchSize, FitConfig};
use repsel::evaluate::*;
use repsel::io::read_preflib;
use repsel::models::*;
use repsel::spectral::*;
use repsel::types::{ModelKind, ModelParams, Ranking, RankingDataset, Universe};

// Pinned tolerances.
const PROB_TOL: f64 = 1e-12;
const MALLOWS_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-6;
const TV_TOL: f64 = 0.01;
const PL_SLOPE_RANGE: (f64, f64) = (-1.15, -0.85);
const LAMBDA_TOL: f64 = 1e-9;
const CLOSED_FORM_TOL: f64 = 1e-8;
const NESTING_SLACK: f64 = 1e-3;
const REFERENCE_NLL_TOL: f64 = 0.3;

// Pilot-pinned constants. Ten pilot seeds of the PL bundle gave max/median
// ratios at ℓ = 2048 between 1.9 and 6.0; the CRS spreads were 1.3 to 1.8
// (full) and 1.9 to 2.0 (factorized) over two seeds.
const PL_BUNDLE_MAX_OVER_MEDIAN: f64 = 8.0;
const CRS_SPREAD_FACTOR: f64 = 2.5;
const LAMBDA2_PILOT_FRACTION: f64 = 0.9;

const RISK_SEED: u64 = 2024;
const CRS_ELLS: [usize; 3] = [1024, 2048, 4096];
const CRS_TRIALS: usize = 10;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

enum Status {
    Pass,
    Fail,
    Skip,
}

fn run(id: &str, title: &str, budget_s: f64, f: impl FnOnce() -> Check) -> Status {
    let t = Instant::now();
    let out = f();
    let secs = t.elapsed().as_secs_f64();
    let (status, detail) = match out {
        Ok(d) if d.starts_with("SKIP") => (Status::Skip, d),
        Ok(d) if secs <= budget_s => (Status::Pass, d),
        Ok(d) => (Status::Fail, format!("{d}; over the {budget_s} s budget")),
        Err(e) => (Status::Fail, e),
    };
    let tag = match status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    report(&format!("criterion {id:>2} {tag} [{title}] {detail} ({secs:.2} s)"));
    status
}

fn kernel_suite() -> Check {
    let mut checked = 0usize;
    for n in 2..=6 {
        for seed in 0..5u64 {
            let mut r = rng(100 * n as u64 + seed);
            let rank = 1 + seed as usize % 3;
            let models = [
                random_pl(&mut r, n),
                random_full(&mut r, n),
                random_factor(&mut r, n, rank),
                random_mallows(&mut r, n),
            ];
            let delta: f64 = r.random_range(-4.0..4.0);
            let ModelParams::Pl { theta } = &models[0] else { unreachable!() };
            let ModelParams::CrsFull { u, .. } = &models[1] else { unreachable!() };
            let shifted = [
                ModelParams::Pl { theta: theta.iter().map(|x| x + delta).collect() },
                ModelParams::CrsFull { n, u: u.iter().map(|x| x + delta).collect() },
            ];
            let induced = ModelParams::CrsFull { n, u: models[2].induced_u().map_err(err)? };
            for set in subsets(n) {
                for m in &models {
                    let total: f64 = set.iter().map(|&x| choice_logprob(m, &obs(x, &set)).exp()).sum();
                    ensure((total - 1.0).abs() <= PROB_TOL, || {
                        format!("{} on {set:?} sums to {total}", m.kind())
                    })?;
                }
                for &x in &set {
                    let o = obs(x, &set);
                    for (a, b) in models[..2].iter().zip(&shifted) {
                        let d = (choice_logprob(a, &o) - choice_logprob(b, &o)).abs();
                        ensure(d <= PROB_TOL, || format!("{} shift moved {o:?} by {d:e}", a.kind()))?;
                    }
                    let d = (choice_logprob(&models[2], &o) - choice_logprob(&induced, &o)).abs();
                    ensure(d <= PROB_TOL, || format!("factor vs full differ by {d:e} on {o:?}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} (winner, set) pairs, n = 2..6"))
}

fn mallows_identity() -> Check {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = 2 + i % 6;
        let sigma0 = random_perm(&mut r, n);
        let theta_c: f64 = r.random_range(0.0..5.0);
        let sigma = Ranking::unit(random_perm(&mut r, n), n).map_err(err)?;
        let reference = Ranking::unit(sigma0.clone(), n).map_err(err)?;
        let tau = kendall_tau(&sigma, &reference).map_err(err)?;
        let log_z = mallows_log_partition(theta_c, n);
        if n <= 6 {
            let brute: f64 = permutations(n)
                .map(|p| {
                    let t = kendall_tau(&Ranking::unit(p, n).unwrap(), &reference).unwrap();
                    (-theta_c * t as f64).exp()
                })
                .sum();
            ensure((brute.ln() - log_z).abs() <= MALLOWS_TOL, || {
                format!("log Z({theta_c}, {n}) = {log_z} but permutation sum gives {}", brute.ln())
            })?;
        }
        let p = ModelParams::Mallows { sigma0, theta_c };
        let d = (ranking_logprob(&p, &sigma).map_err(err)? + theta_c * tau as f64 + log_z).abs();
        worst = worst.max(d);
        ensure(d <= MALLOWS_TOL, || format!("triple {i}: stage product off by {d:e}"))?;
    }
    Ok(format!("200 triples, max deviation {worst:.1e}"))
}

fn flat(p: &ModelParams) -> Vec<f64> {
    match p {
        ModelParams::Pl { theta } => theta.clone(),
        ModelParams::CrsFull { u, .. } => u.clone(),
        ModelParams::CrsFactor { t, c, .. } => t.iter().chain(c).copied().collect(),
        ModelParams::Mallows { .. } => unreachable!(),
    }
}

fn rebuild(like: &ModelParams, v: Vec<f64>) -> ModelParams {
    match like {
        ModelParams::Pl { .. } => ModelParams::Pl { theta: v },
        ModelParams::CrsFull { n, .. } => ModelParams::CrsFull { n: *n, u: v },
        ModelParams::CrsFactor { n, rank, .. } => {
            let (t, c) = v.split_at(n * rank);
            ModelParams::CrsFactor { n: *n, rank: *rank, t: t.to_vec(), c: c.to_vec() }
        }
        ModelParams::Mallows { .. } => unreachable!(),
    }
}

fn gradient_checks() -> Check {
    let n = 5;
    let mut r = rng(3);
    let truth = random_full(&mut r, n);
    let mut ds = sample_rankings(&truth, &Universe::new(n).map_err(err)?, SampleConfig { seed: 4, count: 40 })
        .map_err(err)?;
    // mix in top-k ballots
    for (i, rk) in ds.rankings.iter_mut().enumerate() {
        rk.items.truncate(1 + i % n);
    }
    let cds = repeated_selection(&ds).map_err(err)?;
    let mut worst: f64 = 0.0;
    for family in 0..3 {
        for point in 0..20 {
            let p = match family {
                0 => random_pl(&mut r, n),
                1 => random_full(&mut r, n),
                _ => random_factor(&mut r, n, 3),
            };
            let (_, g) = nll_and_grad(&p, &cds).map_err(err)?;
            let x = flat(&p);
            let mut diff: f64 = 0.0;
            for i in 0..x.len() {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[i] += FD_STEP;
                down[i] -= FD_STEP;
                let fd = (nll(&rebuild(&p, up), &cds).map_err(err)?
                    - nll(&rebuild(&p, down), &cds).map_err(err)?)
                    / (2.0 * FD_STEP);
                diff = diff.max((fd - g[i]).abs());
            }
            let rel = diff / g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(rel);
            ensure(rel <= FD_REL_TOL, || format!("{} point {point}: relative error {rel:e}", p.kind()))?;
        }
    }
    Ok(format!("60 points, max relative error {worst:.1e}"))
}

fn sampler_fidelity() -> Check {
    let n = 4;
    let u = Universe::new(n).map_err(err)?;
    let mut r = rng(5);
    let models = [random_pl(&mut r, n), random_full(&mut r, n), random_mallows(&mut r, n)];
    let count = 100_000;
    let mut tvs = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let pmf = enumerate_pmf(m, &u).map_err(err)?;
        let ds = sample_rankings(m, &u, SampleConfig { seed: 60 + i as u64, count }).map_err(err)?;
        let mut freq = std::collections::HashMap::new();
        for rk in &ds.rankings {
            *freq.entry(rk.items.clone()).or_insert(0u64) += rk.weight;
        }
        let tv = 0.5
            * pmf
                .iter()
                .map(|(p, q)| (freq.get(p).copied().unwrap_or(0) as f64 / count as f64 - q).abs())
                .sum::<f64>();
        ensure(tv < TV_TOL, || format!("{}: TV {tv}", m.kind()))?;
        tvs.push(format!("{} {tv:.4}", m.kind()));
    }
    Ok(format!("TV: {}", tvs.join(", ")))
}

fn pl_rate() -> Check {
    let cfg = RiskExperimentConfig {
        model_kind: ModelKind::Pl,
        n_grid: vec![6],
        b: 1.5,
        ell_grid: (6..=12).map(|k| 1 << k).collect(),
        trials: 20,
        seed: RISK_SEED,
        fit_cfg: FitConfig::converged(),
    };
    let stats = tail_bundle_stats(&risk_experiment(&cfg).map_err(err)?).map_err(err)?;
    let x: Vec<f64> = stats.iter().map(|s| s.ell as f64).collect();
    let y: Vec<f64> = stats.iter().map(|s| s.median).collect();
    let slope = loglog_slope(&x, &y);
    let ratio = stats.iter().find(|s| s.ell == 2048).unwrap().max_over_median;
    ensure(slope >= PL_SLOPE_RANGE.0 && slope <= PL_SLOPE_RANGE.1, || format!("slope {slope:.3}"))?;
    ensure(ratio <= PL_BUNDLE_MAX_OVER_MEDIAN, || format!("bundle max/median {ratio:.2} at ℓ=2048"))?;
    Ok(format!("slope {slope:.3}, max/median at ℓ=2048 {ratio:.2} (≤ {PL_BUNDLE_MAX_OVER_MEDIAN})"))
}

fn scaled_medians(kind: ModelKind, n_grid: Vec<usize>, scale: impl Fn(usize) -> f64) -> Result<Vec<f64>, String> {
    let cfg = RiskExperimentConfig {
        model_kind: kind,
        n_grid,
        b: 1.5,
        ell_grid: CRS_ELLS.to_vec(),
        trials: CRS_TRIALS,
        seed: RISK_SEED,
        fit_cfg: FitConfig::converged(),
    };
    let stats = tail_bundle_stats(&risk_experiment(&cfg).map_err(err)?).map_err(err)?;
    Ok(stats.iter().map(|s| s.median * s.ell as f64 / scale(s.n)).collect())
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

fn crs_rate() -> Check {
    let full = scaled_medians(ModelKind::CrsFull, vec![6, 9, 12], |n| (n * n) as f64)?;
    let mut factor = Vec::new();
    for r in [2, 4] {
        factor.extend(scaled_medians(ModelKind::CrsFactor { rank: r }, vec![9, 12], move |n| (n * r) as f64)?);
    }
    let (sf, sr) = (spread(&full), spread(&factor));
    ensure(sf < CRS_SPREAD_FACTOR, || format!("risk·ℓ/n² spread {sf:.2} (values {full:.2?})"))?;
    ensure(sr < CRS_SPREAD_FACTOR, || format!("risk·ℓ/(nr) spread {sr:.2} (values {factor:.2?})"))?;
    Ok(format!("spread full {sf:.2}, factorized {sr:.2} (< {CRS_SPREAD_FACTOR})"))
}

fn spectral_certificates() -> Check {
    let one = RankingDataset::new(Universe::new(3).map_err(err)?, vec![Ranking::unit(vec![0, 1, 2], 3).map_err(err)?])
        .map_err(err)?;
    let cert = certify(&one, ModelKind::Pl, 1.5).map_err(err)?;
    ensure((cert.lambda2 - 1.5).abs() <= LAMBDA_TOL, || format!("(a) λ₂ = {}", cert.lambda2))?;
    ensure(cert.lambda2 >= 1.5 - LAMBDA_TOL && cert.bound_checks[0].holds, || "(a) crude bound".into())?;
    for n in 3..=10 {
        let l2 = lambda2(&build_cdm_gram(&leave_one_out_design(n).map_err(err)?).map_err(err)?).map_err(err)?;
        let closed = leave_one_out_lambda2(n);
        ensure(l2 > 1.0 / (4.0 * (n as f64).powi(3)), || format!("(b) n={n}: λ₂ {l2} below 1/(4n³)"))?;
        ensure((l2 - closed).abs() <= CLOSED_FORM_TOL, || format!("(b) n={n}: λ₂ {l2} vs closed form {closed}"))?;
    }
    for n in 3..=8 {
        let items: Vec<usize> = (0..n).rev().collect();
        let ds = RankingDataset::new(Universe::new(n).map_err(err)?, vec![Ranking::unit(items, n).map_err(err)?])
            .map_err(err)?;
        let c = certify(&ds, ModelKind::CrsFull, 1.5).map_err(err)?;
        ensure(c.lambda2.abs() <= LAMBDA2_ZERO && !c.connected_or_identified, || {
            format!("(c) n={n}: λ₂ = {}", c.lambda2)
        })?;
    }
    Ok(format!("(a) λ₂ = {:.12}; (b) n = 3..10; (c) n = 3..8", cert.lambda2))
}

fn lambda2_bounds() -> Check {
    let (n, ell, b) = (6usize, 500usize, 1.5);
    let u = Universe::new(n).map_err(err)?;
    let alpha = alpha_b(b);
    let floor = 1.0 - (n * n) as f64 * (-alpha * alpha * ell as f64).exp();
    let required = if floor > 0.0 { floor } else { LAMBDA2_PILOT_FRACTION };
    let mut holds = 0;
    let mut min_l2 = f64::MAX;
    for seed in 0..50u64 {
        let truth = draw_ground_truth(ModelKind::Pl, n, b, seed).map_err(err)?;
        let ds = sample_rankings(&truth, &u, SampleConfig { seed: seed + 1000, count: ell }).map_err(err)?;
        let cert = certify(&ds, ModelKind::Pl, b).map_err(err)?;
        min_l2 = min_l2.min(cert.lambda2);
        if cert.lambda2 >= alpha * n as f64 {
            holds += 1;
        }
    }
    let frac = holds as f64 / 50.0;
    ensure(frac >= required, || format!("bound held in {frac} of seeds, need {required}"))?;
    Ok(format!(
        "α_B·n = {:.5}, held in {holds}/50 (need {required}; probability floor {floor:.3}), min λ₂ {min_l2:.3}",
        alpha * n as f64
    ))
}

fn nesting() -> Check {
    let n = 5;
    let u = Universe::new(n).map_err(err)?;
    let cfg = FitConfig { epochs: 600, ..FitConfig::converged() };
    let mut worst = f64::MIN;
    for i in 0..10u64 {
        let kind = if i % 2 == 0 { ModelKind::Pl } else { ModelKind::CrsFull };
        let truth = draw_ground_truth(kind, n, 1.5, 500 + i).map_err(err)?;
        let ds = sample_rankings(&truth, &u, SampleConfig { seed: i, count: 300 }).map_err(err)?;
        let pl = fit(ModelKind::Pl, &ds, &cfg).map_err(err)?.train_nll_per_choice;
        let crs = fit(ModelKind::CrsFull, &ds, &cfg).map_err(err)?.train_nll_per_choice;
        worst = worst.max(crs - pl);
        ensure(crs <= pl + NESTING_SLACK, || format!("dataset {i}: CRS {crs} vs PL {pl}"))?;
    }
    Ok(format!("10 datasets, max (CRS − PL) NLL per choice {worst:.4}"))
}

fn find_dataset(dir: &Path, name: &str) -> Option<PathBuf> {
    ["soc", "soi", "toc", "toi"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.exists())
}

fn preflib_reference() -> Check {
    let Some(dir) = std::env::var_os("REPSEL_PREFLIB_DIR") else {
        return Ok("SKIP: set REPSEL_PREFLIB_DIR to a directory with sushi, dublin-north, dublin-west, meath".into());
    };
    let dir = PathBuf::from(dir);
    let cfg = FitConfig { batch_size: BatchSize::Size(64), ..FitConfig::default() };
    let mut lines = Vec::new();
    for (name, expect) in [("sushi", 14.24), ("dublin-north", 8.36), ("dublin-west", 6.36), ("meath", 8.46)] {
        let path = find_dataset(&dir, name).ok_or_else(|| format!("{name} not found in {}", dir.display()))?;
        let ds = read_preflib(&path).map_err(err)?;
        let pl = kfold_eval(&ds, ModelKind::Pl, 5, &cfg, 0).map_err(err)?.mean_test_nll_per_ranking;
        let crs = kfold_eval(&ds, ModelKind::CrsFactor { rank: 8 }, 5, &cfg, 0)
            .map_err(err)?
            .mean_test_nll_per_ranking;
        ensure((pl - expect).abs() <= REFERENCE_NLL_TOL, || format!("{name}: PL {pl:.2} vs {expect}"))?;
        ensure(crs < pl, || format!("{name}: CRS r=8 {crs:.2} does not beat PL {pl:.2}"))?;
        lines.push(format!("{name} PL {pl:.2} CRS8 {crs:.2}"));
    }
    Ok(lines.join(", "))
}

#[test]
fn acceptance() {
    let results = [
        run("1", "probability kernels", 10.0, kernel_suite),
        run("2", "Mallows identity", 30.0, mallows_identity),
        run("3", "gradient checks", 30.0, gradient_checks),
        run("4", "sampler fidelity", 60.0, sampler_fidelity),
        run("5", "PL rate", 600.0, pl_rate),
        run("6", "CRS rates", 1800.0, crs_rate),
        run("7", "spectral certificates", 60.0, spectral_certificates),
        run("8", "empirical λ₂ bound", 300.0, lambda2_bounds),
        run("9", "model nesting", 300.0, nesting),
        run("10", "Preflib CV reference values", f64::INFINITY, preflib_reference),
    ];
    let failed = results.iter().filter(|s| matches!(s, Status::Fail)).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
