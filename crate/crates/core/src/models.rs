//! Choice kernels, the ranking distributions they induce, and exact samplers.
//!
//! All arithmetic is in log space with max-subtracted log-sum-exp.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::ranking_stages;
use crate::error::{Error, Result};
use crate::types::{
    pair_index_unchecked, ChoiceObservation, ModelParams, Ranking, RankingDataset, Universe,
};

/// Largest universe [`enumerate_pmf`] accepts (8! = 40320 permutations).
pub const MAX_ENUMERATE_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub seed: u64,
    pub count: usize,
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax.
pub(crate) fn log_softmax(xs: &mut [f64]) {
    let lse = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

/// Rank position of every item under the permutation `sigma0`.
pub(crate) fn inverse_permutation(sigma0: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; sigma0.len()];
    for (p, &x) in sigma0.iter().enumerate() {
        pos[x] = p;
    }
    pos
}

/// Unnormalized log-weights (utilities) of each member of `set`, in set order.
///
/// For Mallows this is `−θ_c·v(y, S)` with `v` the number of set members
/// ranked above `y` by the reference.
pub fn stage_utilities(params: &ModelParams, set: &[usize]) -> Vec<f64> {
    match params {
        ModelParams::Pl { theta } => set.iter().map(|&y| theta[y]).collect(),
        ModelParams::CrsFull { n, u } => set
            .iter()
            .map(|&y| {
                set.iter()
                    .filter(|&&z| z != y)
                    .map(|&z| u[pair_index_unchecked(y, z, *n)])
                    .sum()
            })
            .collect(),
        ModelParams::CrsFactor { rank, t, c, .. } => {
            let r = *rank;
            let mut csum = vec![0.0; r];
            for &z in set {
                for k in 0..r {
                    csum[k] += c[z * r + k];
                }
            }
            set.iter()
                .map(|&y| (0..r).map(|k| t[y * r + k] * (csum[k] - c[y * r + k])).sum())
                .collect()
        }
        ModelParams::Mallows { sigma0, theta_c } => {
            let pos = inverse_permutation(sigma0);
            set.iter()
                .map(|&y| {
                    let above = set.iter().filter(|&&z| pos[z] < pos[y]).count();
                    -theta_c * above as f64
                })
                .collect()
        }
    }
}

/// Log choice probability of every member of `set`, in set order.
pub fn stage_log_probs(params: &ModelParams, set: &[usize]) -> Vec<f64> {
    let mut u = stage_utilities(params, set);
    log_softmax(&mut u);
    u
}

fn winner_slot(obs: &ChoiceObservation) -> usize {
    obs.choice_set
        .binary_search(&obs.winner)
        .expect("winner must be in the choice set")
}

/// MNL: `log(exp θ_x / Σ_{y∈S} exp θ_y)`.
pub fn mnl_choice_logprob(theta: &[f64], obs: &ChoiceObservation) -> f64 {
    let logits: Vec<f64> = obs.choice_set.iter().map(|&y| theta[y]).collect();
    theta[obs.winner] - log_sum_exp(&logits)
}

/// CDM in full (`CrsFull`) or factorized (`CrsFactor`) form.
pub fn cdm_choice_logprob(params: &ModelParams, obs: &ChoiceObservation) -> Result<f64> {
    match params {
        ModelParams::CrsFull { .. } | ModelParams::CrsFactor { .. } => {
            Ok(stage_log_probs(params, &obs.choice_set)[winner_slot(obs)])
        }
        other => Err(Error::InvalidParams(format!(
            "CDM kernel needs CRS parameters, got {}",
            other.kind()
        ))),
    }
}

/// `log Σ_{v=0}^{k−1} e^{−θv}`, the Mallows stage normalizer for a set of size `k`.
pub fn mallows_stage_log_normalizer(theta_c: f64, k: usize) -> f64 {
    if theta_c == 0.0 {
        return (k as f64).ln();
    }
    // (1 − e^{−θk}) / (1 − e^{−θ})
    (-(-theta_c * k as f64).exp_m1()).ln() - (-(-theta_c).exp_m1()).ln()
}

/// `log Z(θ, n)` for the Mallows ranking distribution,
/// `Z = Π_{i=1}^{n} (1 − e^{−θi}) / (1 − e^{−θ})`, with `Z(0, n) = n!`.
pub fn mallows_log_partition(theta_c: f64, n: usize) -> f64 {
    (1..=n).map(|i| mallows_stage_log_normalizer(theta_c, i)).sum()
}

/// Mallows stage kernel `P(x|S) ∝ exp(−θ_c·|{y ∈ S : σ₀(y) < σ₀(x)}|)`.
pub fn mallows_choice_logprob(sigma0: &[usize], theta_c: f64, obs: &ChoiceObservation) -> f64 {
    let pos = inverse_permutation(sigma0);
    let above = obs
        .choice_set
        .iter()
        .filter(|&&z| pos[z] < pos[obs.winner])
        .count();
    -theta_c * above as f64 - mallows_stage_log_normalizer(theta_c, obs.set_size())
}

/// Log choice probability of `obs` under any model family.
pub fn choice_logprob(params: &ModelParams, obs: &ChoiceObservation) -> f64 {
    match params {
        ModelParams::Pl { theta } => mnl_choice_logprob(theta, obs),
        ModelParams::Mallows { sigma0, theta_c } => mallows_choice_logprob(sigma0, *theta_c, obs),
        _ => stage_log_probs(params, &obs.choice_set)[winner_slot(obs)],
    }
}

/// Log probability of a ranking: the sum of its stage choice log-probabilities.
/// For a top-k ranking this is the marginal probability of that prefix.
pub fn ranking_logprob(params: &ModelParams, ranking: &Ranking) -> Result<f64> {
    let n = params.n();
    params.validate()?;
    if ranking.items.is_empty() || ranking.items.len() > n {
        return Err(Error::InvalidParams(format!(
            "ranking of length {} does not fit a universe of {n}",
            ranking.items.len()
        )));
    }
    if let Some(&x) = ranking.items.iter().find(|&&x| x >= n) {
        return Err(Error::InvalidParams(format!(
            "item {x} out of range for parameters with n={n}"
        )));
    }
    Ok(ranking_stages(ranking, n)
        .iter()
        .map(|obs| choice_logprob(params, obs))
        .sum())
}

/// Kendall τ distance: number of item pairs the two full rankings order oppositely.
pub fn kendall_tau(a: &Ranking, b: &Ranking) -> Result<u64> {
    let n = a.items.len();
    if b.items.len() != n {
        return Err(Error::Unsupported(
            "Kendall τ needs two full rankings of the same universe".into(),
        ));
    }
    let is_perm = |r: &Ranking| {
        let mut seen = vec![false; n];
        r.items.iter().all(|&x| x < n && !std::mem::replace(&mut seen[x], true))
    };
    if !is_perm(a) || !is_perm(b) {
        return Err(Error::Unsupported(
            "Kendall τ is only defined here for full rankings".into(),
        ));
    }
    let pos_b = inverse_permutation(&b.items);
    // Positions in b of the items in a's order; τ is its inversion count.
    let seq: Vec<usize> = a.items.iter().map(|&x| pos_b[x]).collect();
    let mut tau = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if seq[i] > seq[j] {
                tau += 1;
            }
        }
    }
    Ok(tau)
}

/// Draw one full ranking by sequential inverse-CDF sampling over the stage kernel.
fn sample_one<R: Rng>(params: &ModelParams, n: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    while remaining.len() > 1 {
        let lp = stage_log_probs(params, &remaining);
        let draw: f64 = rng.random();
        let mut cum = 0.0;
        let mut pick = remaining.len() - 1;
        for (slot, l) in lp.iter().enumerate() {
            cum += l.exp();
            if draw < cum {
                pick = slot;
                break;
            }
        }
        out.push(remaining.remove(pick));
    }
    out.push(remaining[0]);
    out
}

/// RNG for sample `index` of a seeded sampling run: stream `index` of ChaCha8.
pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw `cfg.count` full rankings. Each sample uses its own RNG stream, so the
/// output does not depend on the number of worker threads.
pub fn sample_rankings(
    params: &ModelParams,
    universe: &Universe,
    cfg: SampleConfig,
) -> Result<RankingDataset> {
    params.check_universe(universe.n)?;
    if cfg.count == 0 {
        return Err(Error::InvalidConfig("sample count must be ≥ 1".into()));
    }
    let n = universe.n;
    let rankings = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i as u64);
            Ranking {
                items: sample_one(params, n, &mut rng),
                weight: 1,
            }
        })
        .collect();
    Ok(RankingDataset {
        universe: universe.clone(),
        rankings,
    })
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).permutations(n)
}

/// Exact probability of every full ranking (lexicographic order), for `n ≤ 8`.
pub fn enumerate_pmf(params: &ModelParams, universe: &Universe) -> Result<Vec<(Vec<usize>, f64)>> {
    let n = universe.n;
    if n > MAX_ENUMERATE_N {
        return Err(Error::TooLarge {
            what: "exact enumeration",
            n,
            max: MAX_ENUMERATE_N,
        });
    }
    params.check_universe(n)?;
    permutations(n)
        .map(|p| {
            let lp = ranking_logprob(params, &Ranking { items: p.clone(), weight: 1 })?;
            Ok((p, lp.exp()))
        })
        .collect()
}
