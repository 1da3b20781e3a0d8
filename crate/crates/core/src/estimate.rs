//! Maximum-likelihood fitting.
//!
//! PL and CRS models are fit with Adam on the choice-decomposition negative
//! log-likelihood. The objective is invariant to a constant shift of θ (PL)
//! or u (CRS full); iterates are left to drift and the result is centered once
//! after the loop. Mallows uses a greedy reference permutation followed by a
//! golden-section search over the concentration.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decompose::{repeated_selection, ChoiceDataset, WeightedChoice};
use crate::error::{Error, Result};
use crate::models::{
    choice_logprob, inverse_permutation, log_softmax, mallows_stage_log_normalizer, sample_rng,
    stage_utilities,
};
use crate::types::{pair_index_unchecked, ModelKind, ModelParams, RankingDataset};

/// Upper end of the concentration search box.
pub const MALLOWS_THETA_MAX: f64 = 20.0;
/// Bracket width at which the concentration search stops.
pub const MALLOWS_THETA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSize {
    Full,
    Size(usize),
}

/// Adam settings; the defaults are Adam's standard constants with 10 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub seed: u64,
    /// Standard deviation of the random CRS-factor initialization.
    pub init_scale: f64,
    pub rank: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch_size: BatchSize::Full,
            seed: 0,
            init_scale: 0.1,
            rank: None,
        }
    }
}

impl FitConfig {
    /// Full-batch Adam run long enough to reach the MLE on the synthetic
    /// problems of the risk harness (lr 0.1, 300 epochs). The defaults above
    /// stop far short of the optimum, which would swamp the statistical error.
    pub fn converged() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.init_scale >= 0.0) {
            return bad("init scale must be ≥ 0");
        }
        if self.batch_size == BatchSize::Size(0) {
            return bad("batch size must be ≥ 1");
        }
        if self.rank == Some(0) {
            return bad("rank must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_params: ModelParams,
    pub train_nll_per_ranking: f64,
    pub train_nll_per_choice: f64,
    pub epochs_run: usize,
    /// Full-data NLL after each epoch.
    pub nll_trace: Vec<f64>,
    pub wall_time_seconds: f64,
}

/// Flattened trainable vector: θ, u, or `[T | C]` row-major.
fn flatten(params: &ModelParams) -> Vec<f64> {
    match params {
        ModelParams::Pl { theta } => theta.clone(),
        ModelParams::CrsFull { u, .. } => u.clone(),
        ModelParams::CrsFactor { t, c, .. } => t.iter().chain(c).copied().collect(),
        ModelParams::Mallows { .. } => Vec::new(),
    }
}

fn unflatten_into(params: &mut ModelParams, flat: &[f64]) {
    match params {
        ModelParams::Pl { theta } => theta.copy_from_slice(flat),
        ModelParams::CrsFull { u, .. } => u.copy_from_slice(flat),
        ModelParams::CrsFactor { t, c, .. } => {
            let half = t.len();
            t.copy_from_slice(&flat[..half]);
            c.copy_from_slice(&flat[half..]);
        }
        ModelParams::Mallows { .. } => {}
    }
}

/// Add one weighted observation's NLL and gradient.
fn accumulate(params: &ModelParams, wc: &WeightedChoice, nll: &mut f64, grad: &mut [f64]) {
    let set = &wc.obs.choice_set;
    let w = wc.weight as f64;
    let mut lp = stage_utilities(params, set);
    log_softmax(&mut lp);
    let win = set.binary_search(&wc.obs.winner).expect("winner in set");
    *nll -= w * lp[win];
    // residual of the NLL w.r.t. each member's utility: w·(p_y − 1[y = winner])
    let resid: Vec<f64> = lp
        .iter()
        .enumerate()
        .map(|(i, l)| w * (l.exp() - if i == win { 1.0 } else { 0.0 }))
        .collect();
    match params {
        ModelParams::Pl { .. } => {
            for (&y, r) in set.iter().zip(&resid) {
                grad[y] += r;
            }
        }
        ModelParams::CrsFull { n, .. } => {
            for (&y, r) in set.iter().zip(&resid) {
                for &z in set {
                    if z != y {
                        grad[pair_index_unchecked(y, z, *n)] += r;
                    }
                }
            }
        }
        ModelParams::CrsFactor { n, rank, t, c } => {
            let r = *rank;
            let (gt, gc) = grad.split_at_mut(n * r);
            let mut csum = vec![0.0; r];
            let mut rt = vec![0.0; r];
            for (&y, ry) in set.iter().zip(&resid) {
                for k in 0..r {
                    csum[k] += c[y * r + k];
                    rt[k] += ry * t[y * r + k];
                }
            }
            for (&y, ry) in set.iter().zip(&resid) {
                for k in 0..r {
                    gt[y * r + k] += ry * (csum[k] - c[y * r + k]);
                    gc[y * r + k] += rt[k] - ry * t[y * r + k];
                }
            }
        }
        ModelParams::Mallows { .. } => unreachable!("Mallows is not gradient-fit"),
    }
}

fn nll_and_grad_slice(params: &ModelParams, obs: &[&WeightedChoice]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; flatten(params).len()];
    let mut nll = 0.0;
    for wc in obs {
        accumulate(params, wc, &mut nll, &mut grad);
    }
    (nll, grad)
}

/// Weighted negative log-likelihood of `cds` and its exact gradient, shaped
/// like the flattened parameters (θ, u, or `[T | C]` row-major).
pub fn nll_and_grad(params: &ModelParams, cds: &ChoiceDataset) -> Result<(f64, Vec<f64>)> {
    if matches!(params, ModelParams::Mallows { .. }) {
        return Err(Error::Unsupported("no gradient for Mallows".into()));
    }
    params.check_universe(cds.n())?;
    let refs: Vec<&WeightedChoice> = cds.observations.iter().collect();
    Ok(nll_and_grad_slice(params, &refs))
}

/// Weighted negative log-likelihood under any model family.
pub fn nll(params: &ModelParams, cds: &ChoiceDataset) -> Result<f64> {
    params.check_universe(cds.n())?;
    Ok(cds
        .observations
        .iter()
        .map(|wc| -(wc.weight as f64) * choice_logprob(params, &wc.obs))
        .sum())
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(cfg: &FitConfig, dim: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    fn update(&mut self, x: &mut [f64], g: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            x[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Starting point for a gradient fit: zeros for PL and CRS full, i.i.d.
/// `N(0, init_scale²)` for CRS factor (zero is a saddle of the factorization).
pub fn initial_params(kind: ModelKind, n: usize, cfg: &FitConfig) -> Result<ModelParams> {
    match kind {
        ModelKind::CrsFactor { rank } => {
            let normal = Normal::new(0.0, cfg.init_scale)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut rng = sample_rng(cfg.seed, 0);
            let mut draw = |len: usize| -> Vec<f64> {
                (0..len).map(|_| normal.sample(&mut rng)).collect()
            };
            let t = draw(n * rank);
            let c = draw(n * rank);
            Ok(ModelParams::CrsFactor { n, rank, t, c })
        }
        other => Ok(ModelParams::zeros(other, n)),
    }
}

/// Fit `kind` to `ds`. Mallows is routed to [`fit_mallows`].
pub fn fit(kind: ModelKind, ds: &RankingDataset, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let kind = match (kind, cfg.rank) {
        (ModelKind::CrsFactor { .. }, Some(rank)) => ModelKind::CrsFactor { rank },
        (k, _) => k,
    };
    if kind == ModelKind::Mallows {
        return fit_mallows(ds);
    }
    let init = initial_params(kind, ds.n(), cfg)?;
    fit_from(init, ds, cfg)
}

/// Adam from an explicit starting point.
pub fn fit_from(init: ModelParams, ds: &RankingDataset, cfg: &FitConfig) -> Result<FitReport> {
    let start = Instant::now();
    cfg.validate()?;
    if matches!(init, ModelParams::Mallows { .. }) {
        return Err(Error::Unsupported("Mallows is fit with fit_mallows".into()));
    }
    init.check_universe(ds.n())?;
    let cds = repeated_selection(ds)?;
    let m = cds.total_weight();
    if m == 0 {
        return Err(Error::InvalidDataset("dataset has no choices to fit".into()));
    }
    let ell = ds.total_weight() as f64;
    let compact = cds.compacted();
    let all: Vec<&WeightedChoice> = compact.observations.iter().collect();

    let mut params = init;
    let mut x = flatten(&params);
    let mut adam = Adam::new(cfg, x.len());
    let mut trace = Vec::with_capacity(cfg.epochs);

    match cfg.batch_size {
        BatchSize::Full => {
            let (mut f, mut g) = nll_and_grad_slice(&params, &all);
            for epoch in 1..=cfg.epochs {
                if !f.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                adam.update(&mut x, &g);
                unflatten_into(&mut params, &x);
                (f, g) = nll_and_grad_slice(&params, &all);
                if !f.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                trace.push(f);
            }
        }
        BatchSize::Size(b) => {
            let mut order: Vec<&WeightedChoice> = cds.observations.iter().collect();
            let mut rng = sample_rng(cfg.seed, 1);
            for epoch in 1..=cfg.epochs {
                order.shuffle(&mut rng);
                for batch in order.chunks(b) {
                    let (f, g) = nll_and_grad_slice(&params, batch);
                    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Diverged { epoch });
                    }
                    adam.update(&mut x, &g);
                    unflatten_into(&mut params, &x);
                }
                let (f, _) = nll_and_grad_slice(&params, &all);
                if !f.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                trace.push(f);
            }
        }
    }

    let params = params.centered();
    let total = nll_and_grad_slice(&params, &all).0;
    if !total.is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs });
    }
    Ok(FitReport {
        final_params: params,
        train_nll_per_ranking: total / ell,
        train_nll_per_choice: total / m as f64,
        epochs_run: cfg.epochs,
        nll_trace: trace,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Weighted pairwise preference counts: `w[i][j]` is the weight of rankings
/// placing `i` above `j`. A top-k ranking places each ranked item above every
/// item ranked lower or left unranked.
pub fn preference_matrix(ds: &RankingDataset) -> Vec<Vec<f64>> {
    let n = ds.n();
    let mut w = vec![vec![0.0; n]; n];
    for r in &ds.rankings {
        let pos = r.positions(n);
        let wt = r.weight as f64;
        for (p, &i) in r.items.iter().enumerate() {
            for j in 0..n {
                if j != i && pos[j].is_none_or(|q| q > p) {
                    w[i][j] += wt;
                }
            }
        }
    }
    w
}

/// Greedy reference permutation: repeatedly append the remaining item with
/// the largest net preference `Σ_{j remaining} (W[i][j] − W[j][i])`,
/// breaking ties by lowest index.
pub fn mga_reference(ds: &RankingDataset) -> Vec<usize> {
    let n = ds.n();
    let w = preference_matrix(ds);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let score = |i: usize| -> f64 {
            remaining
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| w[i][j] - w[j][i])
                .sum()
        };
        let mut best = 0;
        let mut best_score = score(remaining[0]);
        for (slot, &i) in remaining.iter().enumerate().skip(1) {
            let s = score(i);
            if s > best_score {
                best = slot;
                best_score = s;
            }
        }
        out.push(remaining.remove(best));
    }
    out
}

/// Stage NLL of a Mallows model as a function of θ for fixed `σ₀`, reduced to
/// weighted `(set size, number of set members above the winner)` counts.
#[derive(Debug, Clone)]
pub struct MallowsObjective {
    counts: Vec<((usize, usize), f64)>,
}

impl MallowsObjective {
    pub fn new(sigma0: &[usize], cds: &ChoiceDataset) -> Self {
        let pos = inverse_permutation(sigma0);
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for wc in &cds.observations {
            let set = &wc.obs.choice_set;
            let above = set.iter().filter(|&&z| pos[z] < pos[wc.obs.winner]).count();
            *acc.entry((set.len(), above)).or_default() += wc.weight as f64;
        }
        Self {
            counts: acc.into_iter().collect(),
        }
    }

    pub fn nll(&self, theta_c: f64) -> f64 {
        self.counts
            .iter()
            .map(|&((k, v), w)| w * (theta_c * v as f64 + mallows_stage_log_normalizer(theta_c, k)))
            .sum()
    }
}

/// Golden-section minimization of `f` on `[lo, hi]` to bracket width `tol`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Mallows fit: greedy reference, then the concentration in
/// `[0, MALLOWS_THETA_MAX]` minimizing the stage-decomposition NLL.
pub fn fit_mallows(ds: &RankingDataset) -> Result<FitReport> {
    let start = Instant::now();
    let cds = repeated_selection(ds)?;
    let sigma0 = mga_reference(ds);
    let obj = MallowsObjective::new(&sigma0, &cds);
    let interior = golden_section(|t| obj.nll(t), 0.0, MALLOWS_THETA_MAX, MALLOWS_THETA_TOL);
    let theta_c = [interior, 0.0, MALLOWS_THETA_MAX]
        .into_iter()
        .map(|t| (t, obj.nll(t)))
        .fold((interior, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0;
    let total = obj.nll(theta_c);
    let m = cds.total_weight().max(1) as f64;
    Ok(FitReport {
        final_params: ModelParams::Mallows { sigma0, theta_c },
        train_nll_per_ranking: total / ds.total_weight() as f64,
        train_nll_per_choice: total / m,
        epochs_run: 0,
        nll_trace: vec![total],
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}
