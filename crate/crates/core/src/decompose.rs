//! Repeated selection: break rankings into conditionally independent choices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_dataset, ChoiceObservation, Ranking, RankingDataset, Universe};

/// A choice observation carrying an integer multiplicity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedChoice {
    pub obs: ChoiceObservation,
    pub weight: u64,
}

/// Choice data produced by repeated selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDataset {
    pub universe: Universe,
    pub observations: Vec<WeightedChoice>,
    /// `(ranking index, stage index)` for each observation, when known.
    pub source_map: Option<Vec<(usize, usize)>>,
}

impl ChoiceDataset {
    /// Total weighted number of choices `m`.
    pub fn total_weight(&self) -> u64 {
        self.observations.iter().map(|o| o.weight).sum()
    }

    pub fn n(&self) -> usize {
        self.universe.n
    }

    pub fn is_empty(&self) -> bool {
        self.total_weight() == 0
    }

    /// Merge identical `(winner, set)` observations, summing weights.
    /// Order is canonical (sorted by set, then winner); provenance is dropped.
    pub fn compacted(&self) -> Self {
        let mut acc: BTreeMap<(&[usize], usize), u64> = BTreeMap::new();
        for o in &self.observations {
            *acc.entry((o.obs.choice_set.as_slice(), o.obs.winner))
                .or_default() += o.weight;
        }
        let observations = acc
            .into_iter()
            .filter(|(_, w)| *w > 0)
            .map(|((set, winner), weight)| WeightedChoice {
                obs: ChoiceObservation {
                    winner,
                    choice_set: set.to_vec(),
                },
                weight,
            })
            .collect();
        Self {
            universe: self.universe.clone(),
            observations,
            source_map: None,
        }
    }

    /// Distinct choice sets with their summed weights, in canonical order.
    pub fn set_weights(&self) -> Vec<(Vec<usize>, u64)> {
        let mut acc: BTreeMap<&[usize], u64> = BTreeMap::new();
        for o in &self.observations {
            *acc.entry(o.obs.choice_set.as_slice()).or_default() += o.weight;
        }
        acc.into_iter()
            .filter(|(_, w)| *w > 0)
            .map(|(s, w)| (s.to_vec(), w))
            .collect()
    }
}

/// Stage choices of a single ranking over `n` items, in stage order.
///
/// Stage `j` chooses `items[j]` from the universe minus the `j` items already
/// ranked, so unranked items of a top-k ranking remain candidates. Stages
/// whose set would be a singleton are not emitted.
pub fn ranking_stages(ranking: &Ranking, n: usize) -> Vec<ChoiceObservation> {
    let stages = ranking.items.len().min(n - 1);
    let mut remaining = vec![true; n];
    let mut out = Vec::with_capacity(stages);
    for &winner in &ranking.items[..stages] {
        let choice_set: Vec<usize> = (0..n).filter(|&i| remaining[i]).collect();
        out.push(ChoiceObservation { winner, choice_set });
        remaining[winner] = false;
    }
    out
}

/// Decompose every ranking of `ds` into its stage choices.
///
/// Output order is ranking order, then stage order.
pub fn repeated_selection(ds: &RankingDataset) -> Result<ChoiceDataset> {
    let report = validate_dataset(ds);
    if !report.is_ok() {
        return Err(Error::InvalidDataset(report.to_string()));
    }
    let n = ds.n();
    let mut observations = Vec::new();
    let mut source = Vec::new();
    for (ri, r) in ds.rankings.iter().enumerate() {
        for (si, obs) in ranking_stages(r, n).into_iter().enumerate() {
            observations.push(WeightedChoice {
                obs,
                weight: r.weight,
            });
            source.push((ri, si));
        }
    }
    Ok(ChoiceDataset {
        universe: ds.universe.clone(),
        observations,
        source_map: Some(source),
    })
}

/// Weighted histogram of choice-set sizes; the largest key is `k_max`.
pub fn stage_counts(ds: &RankingDataset) -> BTreeMap<usize, u64> {
    let n = ds.n();
    let mut hist = BTreeMap::new();
    for r in &ds.rankings {
        let stages = r.items.len().min(n - 1);
        for j in 0..stages {
            *hist.entry(n - j).or_default() += r.weight;
        }
    }
    hist
}
