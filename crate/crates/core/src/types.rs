//! Domain types: items, rankings, choices, datasets and model parameters.
//!
//! Items are dense indices `0..n`; labels are for presentation only.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite collection of `n ≥ 2` items with optional display labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub n: usize,
    pub labels: Option<Vec<String>>,
}

impl Universe {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDataset(format!(
                "universe needs at least 2 items, got {n}"
            )));
        }
        Ok(Self { n, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut u = Self::new(labels.len())?;
        u.labels = Some(labels);
        Ok(u)
    }

    pub fn label(&self, item: usize) -> String {
        match &self.labels {
            Some(l) => l[item].clone(),
            None => item.to_string(),
        }
    }
}

/// An ordered, duplicate-free sequence of items (position 0 is rank 1).
///
/// A ranking shorter than the universe is a top-k ranking; its unranked items
/// stay in every stage's choice set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ranking {
    pub items: Vec<usize>,
    pub weight: u64,
}

impl Ranking {
    /// Checked constructor against a universe of `n` items.
    pub fn new(items: Vec<usize>, n: usize, weight: u64) -> Result<Self> {
        let r = Self { items, weight };
        if let Some(v) = r.violations(n).into_iter().next() {
            return Err(Error::InvalidRanking(v.to_string()));
        }
        Ok(r)
    }

    /// Unit-weight full or top-k ranking.
    pub fn unit(items: Vec<usize>, n: usize) -> Result<Self> {
        Self::new(items, n, 1)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self, n: usize) -> bool {
        self.items.len() == n
    }

    /// `positions[item] = rank index` (0-based). Unranked items map to `None`.
    pub fn positions(&self, n: usize) -> Vec<Option<usize>> {
        let mut pos = vec![None; n];
        for (p, &x) in self.items.iter().enumerate() {
            if x < n {
                pos[x] = Some(p);
            }
        }
        pos
    }

    fn violations(&self, n: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.items.is_empty() {
            out.push(Violation::EmptyRanking);
        }
        if self.items.len() > n {
            out.push(Violation::TooLong);
        }
        if self.weight == 0 {
            out.push(Violation::ZeroWeight);
        }
        let mut seen = vec![false; n];
        for &x in &self.items {
            if x >= n {
                out.push(Violation::OutOfRange(x));
            } else if seen[x] {
                out.push(Violation::Duplicate(x));
            } else {
                seen[x] = true;
            }
        }
        out
    }
}

/// A choice of `winner` from `choice_set` (sorted, distinct, size ≥ 2).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChoiceObservation {
    pub winner: usize,
    pub choice_set: Vec<usize>,
}

impl ChoiceObservation {
    pub fn new(winner: usize, mut choice_set: Vec<usize>) -> Result<Self> {
        choice_set.sort_unstable();
        if choice_set.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidChoice("duplicate item in choice set".into()));
        }
        if choice_set.len() < 2 {
            return Err(Error::InvalidChoice(format!(
                "choice set must have at least 2 items, got {}",
                choice_set.len()
            )));
        }
        if choice_set.binary_search(&winner).is_err() {
            return Err(Error::InvalidChoice(format!(
                "winner {winner} not in choice set"
            )));
        }
        Ok(Self { winner, choice_set })
    }

    pub fn set_size(&self) -> usize {
        self.choice_set.len()
    }
}

/// A multiset of weighted rankings over one universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDataset {
    pub universe: Universe,
    pub rankings: Vec<Ranking>,
}

impl RankingDataset {
    /// Checked constructor; rejects any dataset `validate_dataset` would flag.
    pub fn new(universe: Universe, rankings: Vec<Ranking>) -> Result<Self> {
        let ds = Self { universe, rankings };
        let report = validate_dataset(&ds);
        if !report.is_ok() {
            return Err(Error::InvalidDataset(report.to_string()));
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.universe.n
    }

    /// Weighted ranking count ℓ.
    pub fn total_weight(&self) -> u64 {
        self.rankings.iter().map(|r| r.weight).sum()
    }

    /// Each weighted ranking repeated `weight` times with unit weight.
    pub fn expanded(&self) -> Vec<Ranking> {
        self.rankings
            .iter()
            .flat_map(|r| {
                std::iter::repeat_n(
                    Ranking {
                        items: r.items.clone(),
                        weight: 1,
                    },
                    r.weight as usize,
                )
            })
            .collect()
    }

    /// Dataset holding the first `count` unit-weight rankings of the expansion.
    pub fn prefix(&self, count: usize) -> Self {
        let mut rankings = self.expanded();
        rankings.truncate(count);
        Self {
            universe: self.universe.clone(),
            rankings,
        }
    }
}

/// A single invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyDataset,
    EmptyRanking,
    TooLong,
    ZeroWeight,
    Duplicate(usize),
    OutOfRange(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDataset => write!(f, "empty dataset"),
            Violation::EmptyRanking => write!(f, "empty ranking"),
            Violation::TooLong => write!(f, "ranking longer than universe"),
            Violation::ZeroWeight => write!(f, "zero weight"),
            Violation::Duplicate(x) => write!(f, "duplicate item {x}"),
            Violation::OutOfRange(x) => write!(f, "index out of range: {x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `(ranking index, violation)`; dataset-level issues use index `None`.
    pub violations: Vec<(Option<usize>, Violation)>,
    /// Weighted ranking count ℓ.
    pub total_weight: u64,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok, {} rankings", self.total_weight);
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|(i, v)| match i {
                Some(i) => format!("ranking {i}: {v}"),
                None => v.to_string(),
            })
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Report every invariant violation in `ds` instead of stopping at the first.
pub fn validate_dataset(ds: &RankingDataset) -> ValidationReport {
    let n = ds.universe.n;
    let mut violations = Vec::new();
    if ds.rankings.is_empty() {
        violations.push((None, Violation::EmptyDataset));
    }
    for (i, r) in ds.rankings.iter().enumerate() {
        violations.extend(r.violations(n).into_iter().map(|v| (Some(i), v)));
    }
    ValidationReport {
        violations,
        total_weight: ds.total_weight(),
    }
}

/// Flat index of the ordered pair `(x, z)`, `x ≠ z`, in the `n(n−1)` CDM
/// parameter vector: row-major over `x` with the diagonal removed.
pub fn pair_index(x: usize, z: usize, n: usize) -> Result<usize> {
    if x == z || x >= n || z >= n {
        return Err(Error::InvalidPair { x, z, n });
    }
    Ok(pair_index_unchecked(x, z, n))
}

#[inline]
pub(crate) fn pair_index_unchecked(x: usize, z: usize, n: usize) -> usize {
    x * (n - 1) + if z < x { z } else { z - 1 }
}

/// Which model family a parameter set or fit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Pl,
    CrsFull,
    CrsFactor { rank: usize },
    Mallows,
}

impl ModelKind {
    /// Short tag used in files and column names.
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Pl => "pl",
            ModelKind::CrsFull => "crs_full",
            ModelKind::CrsFactor { .. } => "crs_factor",
            ModelKind::Mallows => "mallows",
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            ModelKind::CrsFactor { rank } => Some(*rank),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::CrsFactor { rank } => write!(f, "crs_factor(r={rank})"),
            other => f.write_str(other.tag()),
        }
    }
}

/// Model parameters for one universe.
///
/// `CrsFactor` stores `t` and `c` as row-major `n × rank` matrices; row `x`
/// is the target embedding `t_x` (resp. context embedding `c_x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Pl {
        theta: Vec<f64>,
    },
    CrsFull {
        n: usize,
        u: Vec<f64>,
    },
    CrsFactor {
        n: usize,
        rank: usize,
        t: Vec<f64>,
        c: Vec<f64>,
    },
    Mallows {
        sigma0: Vec<usize>,
        theta_c: f64,
    },
}

impl ModelParams {
    pub fn zeros(kind: ModelKind, n: usize) -> Self {
        match kind {
            ModelKind::Pl => ModelParams::Pl {
                theta: vec![0.0; n],
            },
            ModelKind::CrsFull => ModelParams::CrsFull {
                n,
                u: vec![0.0; n * (n - 1)],
            },
            ModelKind::CrsFactor { rank } => ModelParams::CrsFactor {
                n,
                rank,
                t: vec![0.0; n * rank],
                c: vec![0.0; n * rank],
            },
            ModelKind::Mallows => ModelParams::Mallows {
                sigma0: (0..n).collect(),
                theta_c: 0.0,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Pl { .. } => ModelKind::Pl,
            ModelParams::CrsFull { .. } => ModelKind::CrsFull,
            ModelParams::CrsFactor { rank, .. } => ModelKind::CrsFactor { rank: *rank },
            ModelParams::Mallows { .. } => ModelKind::Mallows,
        }
    }

    /// Universe size the parameters are dimensioned for.
    pub fn n(&self) -> usize {
        match self {
            ModelParams::Pl { theta } => theta.len(),
            ModelParams::CrsFull { n, .. } | ModelParams::CrsFactor { n, .. } => *n,
            ModelParams::Mallows { sigma0, .. } => sigma0.len(),
        }
    }

    /// Check internal dimensions and invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        match self {
            ModelParams::Pl { theta } => {
                if theta.len() < 2 {
                    return bad(format!("PL needs n ≥ 2, got {}", theta.len()));
                }
            }
            ModelParams::CrsFull { n, u } => {
                if *n < 2 || u.len() != n * (n - 1) {
                    return bad(format!(
                        "CRS full with n={n} needs {} entries, got {}",
                        n * n.saturating_sub(1),
                        u.len()
                    ));
                }
            }
            ModelParams::CrsFactor { n, rank, t, c } => {
                if *rank == 0 {
                    return bad("CRS factor rank must be ≥ 1".into());
                }
                if *n < 2 || t.len() != n * rank || c.len() != n * rank {
                    return bad(format!(
                        "CRS factor with n={n}, r={rank} needs {}×{rank} matrices",
                        n
                    ));
                }
            }
            ModelParams::Mallows { sigma0, theta_c } => {
                let n = sigma0.len();
                let mut seen = vec![false; n];
                for &x in sigma0 {
                    if x >= n || seen[x] {
                        return bad("Mallows reference is not a permutation".into());
                    }
                    seen[x] = true;
                }
                if n < 2 {
                    return bad("Mallows needs n ≥ 2".into());
                }
                if !(*theta_c >= 0.0) || !theta_c.is_finite() {
                    return bad(format!("Mallows concentration must be ≥ 0, got {theta_c}"));
                }
            }
        }
        Ok(())
    }

    /// Check that the parameters fit a universe of `n` items.
    pub fn check_universe(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.n() != n {
            return Err(Error::InvalidParams(format!(
                "parameters are for n={}, data has n={n}",
                self.n()
            )));
        }
        Ok(())
    }

    /// Zero-sum gauge: subtract the mean from PL θ and CRS-full u.
    /// Other families are returned unchanged.
    pub fn centered(&self) -> Self {
        match self {
            ModelParams::Pl { theta } => ModelParams::Pl {
                theta: center(theta),
            },
            ModelParams::CrsFull { n, u } => ModelParams::CrsFull {
                n: *n,
                u: center(u),
            },
            other => other.clone(),
        }
    }

    /// Pairwise interaction vector `u` implied by the parameters: for CRS
    /// factor `u_{xz} = c_zᵀ t_x`; for PL the fixed-set-size embedding is not
    /// unique, so only CDM families are supported.
    pub fn induced_u(&self) -> Result<Vec<f64>> {
        match self {
            ModelParams::CrsFull { u, .. } => Ok(u.clone()),
            ModelParams::CrsFactor { n, rank, t, c } => {
                let (n, r) = (*n, *rank);
                let mut u = vec![0.0; n * (n - 1)];
                for x in 0..n {
                    for z in 0..n {
                        if x != z {
                            u[pair_index_unchecked(x, z, n)] = (0..r)
                                .map(|k| c[z * r + k] * t[x * r + k])
                                .sum();
                        }
                    }
                }
                Ok(u)
            }
            other => Err(Error::Unsupported(format!(
                "no pairwise interaction form for {}",
                other.kind()
            ))),
        }
    }
}

pub(crate) fn center(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}
