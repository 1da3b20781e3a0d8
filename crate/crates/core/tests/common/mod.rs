#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repsel::types::{ChoiceObservation, ModelParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn random_pl(rng: &mut ChaCha8Rng, n: usize) -> ModelParams {
    ModelParams::Pl { theta: uniform_vec(rng, n, 2.0) }
}

pub fn random_full(rng: &mut ChaCha8Rng, n: usize) -> ModelParams {
    ModelParams::CrsFull { n, u: uniform_vec(rng, n * (n - 1), 1.0) }
}

pub fn random_factor(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> ModelParams {
    ModelParams::CrsFactor {
        n,
        rank,
        t: uniform_vec(rng, n * rank, 1.0),
        c: uniform_vec(rng, n * rank, 1.0),
    }
}

pub fn random_mallows(rng: &mut ChaCha8Rng, n: usize) -> ModelParams {
    ModelParams::Mallows { sigma0: random_perm(rng, n), theta_c: rng.random_range(0.0..3.0) }
}

/// Every subset of `0..n` with at least two members, in bitmask order.
pub fn subsets(n: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() >= 2)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

pub fn obs(winner: usize, set: &[usize]) -> ChoiceObservation {
    ChoiceObservation::new(winner, set.to_vec()).unwrap()
}
