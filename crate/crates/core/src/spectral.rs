//! Spectral identifiability diagnostics.
//!
//! The PL comparison Laplacian `L = (1/m) Σ_j w_j E_j (k_j I − 11ᵀ) E_jᵀ` is the
//! Laplacian of the weighted graph in which every choice set is a clique; its
//! algebraic connectivity λ₂ is positive exactly when the comparison graph is
//! connected. The CDM analogue lives on the `n(n−1)` pair slots:
//! `L = (1/m) Σ_j w_j E_j (I − 11ᵀ/k_j) E_jᵀ`, where column `y` of `E_j` marks the
//! slots `(y, z)`, `z ∈ S_j \ y`.

use serde::{Deserialize, Serialize};

use crate::decompose::{repeated_selection, ChoiceDataset};
use crate::error::{Error, Result};
use crate::types::{pair_index_unchecked, ModelKind, RankingDataset};

/// Largest CDM Gram dimension `n(n−1)` that will be assembled.
pub const MAX_CDM_DIM: usize = 1024;
/// λ₂ above this counts as connected / identified.
pub const LAMBDA2_ZERO: f64 = 1e-8;
/// Off-diagonal Frobenius norm (relative to `max(1, ‖A‖_F)`) at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-11;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `M·1`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.dim).map(|r| r.iter().sum()).collect()
    }
}

fn normalizer(cds: &ChoiceDataset) -> Result<f64> {
    let m = cds.total_weight();
    if m == 0 {
        return Err(Error::InvalidDataset(
            "spectral objects need at least one weighted choice".into(),
        ));
    }
    Ok(m as f64)
}

/// PL comparison Laplacian `L`, or `L̂` (each term further divided by `k_j`)
/// when `scaled` is set.
pub fn build_pl_laplacian(cds: &ChoiceDataset, scaled: bool) -> Result<SymMatrix> {
    let m = normalizer(cds)?;
    let n = cds.n();
    let mut l = SymMatrix::zeros(n);
    for (set, w) in cds.set_weights() {
        let k = set.len() as f64;
        let coef = w as f64 / m / if scaled { k } else { 1.0 };
        for &a in &set {
            for &b in &set {
                l.add(a, b, if a == b { coef * (k - 1.0) } else { -coef });
            }
        }
    }
    Ok(l)
}

/// CDM design-matrix Gram `(1/m) XᵀX` on the `n(n−1)` pair slots.
///
/// Per choice set the contribution is `E E ᵀ − (1/k) p pᵀ`, where `E Eᵀ` is
/// block-diagonal with an all-ones block over each member's slots and `p`
/// indicates every ordered pair inside the set.
pub fn build_cdm_gram(cds: &ChoiceDataset) -> Result<SymMatrix> {
    let n = cds.n();
    let dim = n * (n - 1);
    if dim > MAX_CDM_DIM {
        return Err(Error::TooLarge {
            what: "CDM Gram (n(n−1) ≤ 1024)",
            n,
            max: 32,
        });
    }
    let m = normalizer(cds)?;
    let mut g = SymMatrix::zeros(dim);
    for (set, w) in cds.set_weights() {
        let k = set.len() as f64;
        let coef = w as f64 / m;
        // slots grouped by owning member
        let groups: Vec<Vec<usize>> = set
            .iter()
            .map(|&y| {
                set.iter()
                    .filter(|&&z| z != y)
                    .map(|&z| pair_index_unchecked(y, z, n))
                    .collect()
            })
            .collect();
        let all: Vec<usize> = groups.iter().flatten().copied().collect();
        for &a in &all {
            for &b in &all {
                g.add(a, b, -coef / k);
            }
        }
        for grp in &groups {
            for &a in grp {
                for &b in grp {
                    g.add(a, b, coef);
                }
            }
        }
    }
    Ok(g)
}

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(matrix: &SymMatrix) -> Result<Vec<f64>> {
    let d = matrix.dim;
    let scale = matrix.frobenius().max(1.0);
    let asym = matrix.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::Asymmetric(asym));
    }
    let mut a = matrix.data.clone();
    // symmetrize exactly so rotations keep the two triangles identical
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    let tol = JACOBI_TOL * scale;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    let nkp = c * akp - s * akq;
                    let nkq = s * akp + c * akq;
                    a[k * d + p] = nkp;
                    a[p * d + k] = nkp;
                    a[k * d + q] = nkq;
                    a[q * d + k] = nkq;
                }
                a[p * d + p] = app - t * apq;
                a[q * d + q] = aqq + t * apq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Second-smallest eigenvalue.
pub fn lambda2(matrix: &SymMatrix) -> Result<f64> {
    if matrix.dim < 2 {
        return Err(Error::InvalidParams("λ₂ needs a matrix of dimension ≥ 2".into()));
    }
    Ok(symmetric_eigenvalues(matrix)?[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    PlLaplacian,
    PlLaplacianHat,
    CdmGram,
}

impl MatrixKind {
    pub fn tag(&self) -> &'static str {
        match self {
            MatrixKind::PlLaplacian => "pl_laplacian",
            MatrixKind::PlLaplacianHat => "pl_laplacian_hat",
            MatrixKind::CdmGram => "cdm_gram",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub bound_value: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub matrix_kind: MatrixKind,
    pub dim: usize,
    pub lambda2: f64,
    pub lambda_max: f64,
    pub connected_or_identified: bool,
    /// Parameter-ball radius the bound lines were evaluated for.
    pub b: f64,
    pub bound_checks: Vec<BoundCheck>,
}

/// `α_B = 1 / (4(1 + 2e^{3B}))`.
pub fn alpha_b(b: f64) -> f64 {
    1.0 / (4.0 * (1.0 + 2.0 * (3.0 * b).exp()))
}

/// High-probability CDM Gram floor `1 / (4 n³ (n−1) e^{2B})`.
pub fn cdm_gram_floor(n: usize, b: f64) -> f64 {
    let n = n as f64;
    1.0 / (4.0 * n.powi(3) * (n - 1.0) * (2.0 * b).exp())
}

/// The universe (weight `n`) together with every leave-one-out subset
/// (weight 1), i.e. `½ E_𝒳 M_n E_𝒳ᵀ + (1/2n) Σ_x E_{𝒳∖x} M_{n−1} E_{𝒳∖x}ᵀ`.
pub fn leave_one_out_design(n: usize) -> Result<ChoiceDataset> {
    use crate::decompose::WeightedChoice;
    use crate::types::{ChoiceObservation, Universe};
    let universe = Universe::new(n)?;
    let full: Vec<usize> = (0..n).collect();
    let mut observations = vec![WeightedChoice {
        obs: ChoiceObservation::new(0, full.clone())?,
        weight: n as u64,
    }];
    for x in 0..n {
        let set: Vec<usize> = full.iter().copied().filter(|&y| y != x).collect();
        observations.push(WeightedChoice {
            obs: ChoiceObservation::new(set[0], set)?,
            weight: 1,
        });
    }
    Ok(ChoiceDataset {
        universe,
        observations,
        source_map: None,
    })
}

/// Closed-form λ₂ of the Gram of [`leave_one_out_design`]: `λ/(2n)` with
/// `λ = (2n³ − 7n² + 8n − 1 − √β) / (2(n−1))`,
/// `β = 4n⁶ − 28n⁵ + 81n⁴ − 116n³ + 74n² − 12n + 1`.
pub fn leave_one_out_lambda2(n: usize) -> f64 {
    let n = n as f64;
    let a = 2.0 * n.powi(3) - 7.0 * n.powi(2) + 8.0 * n - 1.0;
    let beta = 4.0 * n.powi(6) - 28.0 * n.powi(5) + 81.0 * n.powi(4) - 116.0 * n.powi(3)
        + 74.0 * n.powi(2)
        - 12.0 * n
        + 1.0;
    let lam = (a - beta.sqrt()) / (2.0 * (n - 1.0));
    lam / (2.0 * n)
}

/// Build the matrix matching `model_kind` (PL: `L`; CRS: the CDM Gram),
/// compute its spectrum and evaluate the bound lines for radius `b`.
pub fn certify(ds: &RankingDataset, model_kind: ModelKind, b: f64) -> Result<SpectralCertificate> {
    let cds = repeated_selection(ds)?;
    certify_choices(&cds, model_kind, b)
}

pub fn certify_choices(
    cds: &ChoiceDataset,
    model_kind: ModelKind,
    b: f64,
) -> Result<SpectralCertificate> {
    let n = cds.n();
    let (matrix_kind, matrix) = match model_kind {
        ModelKind::Pl => (MatrixKind::PlLaplacian, build_pl_laplacian(cds, false)?),
        ModelKind::CrsFull | ModelKind::CrsFactor { .. } => {
            (MatrixKind::CdmGram, build_cdm_gram(cds)?)
        }
        ModelKind::Mallows => {
            return Err(Error::Unsupported("no spectral certificate for Mallows".into()))
        }
    };
    let eig = symmetric_eigenvalues(&matrix)?;
    let l2 = eig[1];
    let lmax = *eig.last().unwrap();
    let bound_checks = match matrix_kind {
        MatrixKind::CdmGram => {
            let floor = cdm_gram_floor(n, b);
            vec![BoundCheck {
                name: "cdm_gram_floor".into(),
                bound_value: floor,
                holds: l2 > floor,
            }]
        }
        _ => {
            let crude = n as f64 / (n as f64 - 1.0);
            let line = alpha_b(b) * n as f64;
            vec![
                BoundCheck {
                    name: "crude_n_over_n_minus_1".into(),
                    bound_value: crude,
                    holds: l2 >= crude - 1e-9,
                },
                BoundCheck {
                    name: "alpha_b_n".into(),
                    bound_value: line,
                    holds: l2 >= line,
                },
            ]
        }
    };
    Ok(SpectralCertificate {
        matrix_kind,
        dim: matrix.dim,
        lambda2: l2,
        lambda_max: lmax,
        connected_or_identified: l2 > LAMBDA2_ZERO,
        b,
        bound_checks,
    })
}
