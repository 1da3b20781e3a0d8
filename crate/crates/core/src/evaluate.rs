//! Cross-validation, position-level log-likelihood, and risk simulations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::ranking_stages;
use crate::error::{Error, Result};
use crate::estimate::{fit, FitConfig};
use crate::models::{choice_logprob, ranking_logprob, sample_rankings, sample_rng, SampleConfig};
use crate::types::{center, ModelKind, ModelParams, Ranking, RankingDataset, Universe};

/// Minimum trials per `(n, ℓ)` cell for [`tail_bundle_stats`].
pub const MIN_BUNDLE_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStat {
    /// Mean stage log-likelihood; 0 when `count` is 0.
    pub mean_log_likelihood: f64,
    pub count: u64,
}

/// Mean stage-k log-likelihood for `k = 1..n−1`. Position `k` averages over
/// the rankings that reach stage `k` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionProfile {
    pub per_position: Vec<PositionStat>,
}

#[derive(Debug, Clone)]
struct ProfileSums {
    sum: Vec<f64>,
    count: Vec<u64>,
}

impl ProfileSums {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n - 1],
            count: vec![0; n - 1],
        }
    }

    fn add_dataset(&mut self, params: &ModelParams, test: &RankingDataset) {
        let n = test.n();
        for r in &test.rankings {
            for (k, obs) in ranking_stages(r, n).iter().enumerate() {
                self.sum[k] += r.weight as f64 * choice_logprob(params, obs);
                self.count[k] += r.weight;
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.count[k] += other.count[k];
        }
    }

    fn finish(&self) -> PositionProfile {
        PositionProfile {
            per_position: self
                .sum
                .iter()
                .zip(&self.count)
                .map(|(&s, &c)| PositionStat {
                    mean_log_likelihood: if c == 0 { 0.0 } else { s / c as f64 },
                    count: c,
                })
                .collect(),
        }
    }
}

pub fn position_profile(params: &ModelParams, test: &RankingDataset) -> Result<PositionProfile> {
    params.check_universe(test.n())?;
    let mut acc = ProfileSums::new(test.n());
    acc.add_dataset(params, test);
    Ok(acc.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub model_kind: ModelKind,
    pub folds: usize,
    pub mean_test_nll_per_ranking: f64,
    /// Standard error of the fold means.
    pub sem: f64,
    pub per_fold_nll: Vec<f64>,
    /// Position profile pooled over all test folds, each fold scored by the
    /// model fit on its complement.
    pub profile: PositionProfile,
}

/// Fold index for each of `len` unit rankings: a seeded shuffle dealt
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(len: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut sample_rng(seed, 0));
    let mut fold = vec![0; len];
    for (p, &i) in order.iter().enumerate() {
        fold[i] = p % folds;
    }
    fold
}

/// k-fold cross-validated test NLL per ranking. Weighted rankings are
/// expanded to unit rankings before splitting.
pub fn kfold_eval(
    ds: &RankingDataset,
    model_kind: ModelKind,
    folds: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<CVResult> {
    let units = ds.expanded();
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    if folds > units.len() {
        return Err(Error::InvalidConfig(format!(
            "{folds} folds requested for {} rankings",
            units.len()
        )));
    }
    let assignment = fold_assignment(units.len(), folds, seed);
    let split = |f: usize| -> (RankingDataset, RankingDataset) {
        let (test, train): (Vec<(usize, &Ranking)>, Vec<(usize, &Ranking)>) = units
            .iter()
            .enumerate()
            .partition(|(i, _)| assignment[*i] == f);
        let mk = |v: Vec<(usize, &Ranking)>| RankingDataset {
            universe: ds.universe.clone(),
            rankings: v.into_iter().map(|(_, r)| r.clone()).collect(),
        };
        (mk(train), mk(test))
    };
    let per_fold: Vec<(f64, ProfileSums)> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<(f64, ProfileSums)> {
            let (train, test) = split(f);
            let params = fit(model_kind, &train, cfg)?.final_params;
            let mut total = 0.0;
            for r in &test.rankings {
                total -= ranking_logprob(&params, r)?;
            }
            let mut prof = ProfileSums::new(ds.n());
            prof.add_dataset(&params, &test);
            Ok((total / test.rankings.len() as f64, prof))
        })
        .collect::<Result<_>>()?;

    let per_fold_nll: Vec<f64> = per_fold.iter().map(|p| p.0).collect();
    let mean = per_fold_nll.iter().sum::<f64>() / folds as f64;
    let var = per_fold_nll.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (folds - 1) as f64;
    let mut pooled = ProfileSums::new(ds.n());
    for (_, p) in &per_fold {
        pooled.merge(p);
    }
    Ok(CVResult {
        model_kind,
        folds,
        mean_test_nll_per_ranking: mean,
        sem: (var / folds as f64).sqrt(),
        per_fold_nll,
        profile: pooled.finish(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskExperimentConfig {
    /// One of `Pl`, `CrsFull`, `CrsFactor { rank }`.
    pub model_kind: ModelKind,
    pub n_grid: Vec<usize>,
    /// Radius of the ground-truth parameter ball.
    pub b: f64,
    pub ell_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub fit_cfg: FitConfig,
}

impl RiskExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.model_kind == ModelKind::Mallows {
            return bad("risk experiments cover PL and CRS models".into());
        }
        if self.trials == 0 {
            return bad("trials must be ≥ 1".into());
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return bad("n grid must be non-empty with every n ≥ 2".into());
        }
        if self.ell_grid.is_empty()
            || self.ell_grid[0] == 0
            || self.ell_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("ℓ grid must be strictly increasing and positive".into());
        }
        if !(self.b > 0.0) {
            return bad("B must be > 0".into());
        }
        self.fit_cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub model: String,
    pub n: usize,
    pub rank: Option<usize>,
    pub ell: usize,
    pub trial: usize,
    pub squared_l2_risk: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for an independent job, independent of scheduling order.
pub fn job_seed(seed: u64, job: u64) -> u64 {
    seed ^ splitmix64(job)
}

fn truncated_normal<R: Rng>(rng: &mut R, b: f64) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= b {
            return x;
        }
    }
}

/// Rescale `row` onto the ℓ₁ ball of radius `b` if it lies outside.
fn clip_l1(row: &mut [f64], b: f64) {
    let l1: f64 = row.iter().map(|x| x.abs()).sum();
    if l1 > b {
        row.iter_mut().for_each(|x| *x *= b / l1);
    }
}

/// Draw a ground-truth model inside the `B`-ball.
///
/// PL: coordinates redrawn until `|θ_i| ≤ B`, then centered. CRS full: each
/// row `u_x` drawn standard normal and rescaled onto `‖u_x‖₁ ≤ B` when
/// outside, then globally centered. CRS factor: `T`, `C` entries truncated to
/// `[−B, B]`, then `t_x` rescaled so the induced row `u_x` satisfies the same
/// ℓ₁ bound.
pub fn draw_ground_truth(kind: ModelKind, n: usize, b: f64, seed: u64) -> Result<ModelParams> {
    let mut rng = sample_rng(seed, 0);
    match kind {
        ModelKind::Pl => {
            let theta: Vec<f64> = (0..n).map(|_| truncated_normal(&mut rng, b)).collect();
            Ok(ModelParams::Pl { theta: center(&theta) })
        }
        ModelKind::CrsFull => {
            let mut u = vec![0.0; n * (n - 1)];
            for row in u.chunks_mut(n - 1) {
                for x in row.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                clip_l1(row, b);
            }
            Ok(ModelParams::CrsFull { n, u: center(&u) })
        }
        ModelKind::CrsFactor { rank } => {
            let mut draw = |len: usize| -> Vec<f64> {
                (0..len).map(|_| truncated_normal(&mut rng, b)).collect()
            };
            let mut t = draw(n * rank);
            let c = draw(n * rank);
            let probe = ModelParams::CrsFactor { n, rank, t: t.clone(), c: c.clone() };
            let u = probe.induced_u()?;
            for (x, row) in u.chunks(n - 1).enumerate() {
                let l1: f64 = row.iter().map(|v| v.abs()).sum();
                if l1 > b {
                    t[x * rank..(x + 1) * rank].iter_mut().for_each(|v| *v *= b / l1);
                }
            }
            Ok(ModelParams::CrsFactor { n, rank, t, c })
        }
        ModelKind::Mallows => Err(Error::Unsupported("no ground-truth ball for Mallows".into())),
    }
}

/// Squared ℓ₂ distance between centered identified parameter vectors
/// (θ for PL, the induced `u` for both CRS forms).
pub fn squared_l2_risk(estimate: &ModelParams, truth: &ModelParams) -> Result<f64> {
    let identified = |p: &ModelParams| -> Result<Vec<f64>> {
        match p {
            ModelParams::Pl { theta } => Ok(center(theta)),
            other => Ok(center(&other.induced_u()?)),
        }
    };
    let (a, b) = (identified(estimate)?, identified(truth)?);
    if a.len() != b.len() {
        return Err(Error::InvalidParams("parameter shapes differ".into()));
    }
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum())
}

/// Squared-ℓ₂ risk of the MLE on growing prefixes of one sampled dataset per
/// `(n, trial)`. Rows are ordered by `n`, then trial, then ℓ.
pub fn risk_experiment(cfg: &RiskExperimentConfig) -> Result<Vec<RiskRow>> {
    cfg.validate()?;
    let max_ell = *cfg.ell_grid.last().unwrap();
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let rows: Vec<Vec<RiskRow>> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(n, trial))| -> Result<Vec<RiskRow>> {
            let seed = job_seed(cfg.seed, j as u64);
            let truth = draw_ground_truth(cfg.model_kind, n, cfg.b, seed)?;
            let universe = Universe::new(n)?;
            let data = sample_rankings(
                &truth,
                &universe,
                SampleConfig { seed: splitmix64(seed), count: max_ell },
            )?;
            let fit_cfg = FitConfig { seed: splitmix64(seed ^ 1), ..cfg.fit_cfg.clone() };
            cfg.ell_grid
                .iter()
                .map(|&ell| {
                    let est = fit(cfg.model_kind, &data.prefix(ell), &fit_cfg)?;
                    Ok(RiskRow {
                        model: cfg.model_kind.tag().to_string(),
                        n,
                        rank: cfg.model_kind.rank(),
                        ell,
                        trial,
                        squared_l2_risk: squared_l2_risk(&est.final_params, &truth)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleStats {
    pub model: String,
    pub n: usize,
    pub rank: Option<usize>,
    pub ell: usize,
    pub trials: usize,
    pub median: f64,
    pub iqr: f64,
    pub max_over_median: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-`(model, n, rank, ℓ)` spread of risk across trials.
pub fn tail_bundle_stats(rows: &[RiskRow]) -> Result<Vec<BundleStats>> {
    let mut groups: BTreeMap<(String, usize, Option<usize>, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.model.clone(), r.n, r.rank, r.ell))
            .or_default()
            .push(r.squared_l2_risk);
    }
    groups
        .into_iter()
        .map(|((model, n, rank, ell), mut v)| {
            if v.len() < MIN_BUNDLE_TRIALS {
                return Err(Error::InvalidConfig(format!(
                    "bundle statistics need ≥ {MIN_BUNDLE_TRIALS} trials, cell (n={n}, ℓ={ell}) has {}",
                    v.len()
                )));
            }
            v.sort_by(f64::total_cmp);
            let median = quantile(&v, 0.5);
            Ok(BundleStats {
                model,
                n,
                rank,
                ell,
                trials: v.len(),
                median,
                iqr: quantile(&v, 0.75) - quantile(&v, 0.25),
                max_over_median: v[v.len() - 1] / median,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
