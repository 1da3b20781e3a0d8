//! File formats: Preflib SOC/SOI ballots, parameter documents, CSV result
//! tables, and the Cayley-graph export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{BundleStats, CVResult, RiskRow};
use crate::models::{enumerate_pmf, permutations};
use crate::spectral::SpectralCertificate;
use crate::types::{ModelParams, Ranking, RankingDataset, Universe};

/// Version written into, and required from, parameter documents.
pub const PARAMS_FORMAT_VERSION: u32 = 1;
/// Largest universe [`export_cayley`] accepts.
pub const MAX_CAYLEY_N: usize = 6;

/// A classic-layout Preflib file, before conversion to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PreflibFile {
    pub n: usize,
    pub alternative_names: Vec<String>,
    /// `(num_voters, sum_of_counts, num_unique_orders)`
    pub counts_header: (u64, u64, usize),
    /// `(count, 0-based items)`
    pub order_lines: Vec<(u64, Vec<usize>)>,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| perr(line, format!("expected {what}, found {:?}", s.trim())))
}

impl PreflibFile {
    /// Parse the classic layout: `n`; `n` lines `index,name`; a
    /// `voters,sum,unique` line; then `count,c1,c2,…` lines with 1-based ids.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (ln, first) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
        let n: usize = parse_num(first, ln, "number of alternatives")?;
        if n < 2 {
            return Err(perr(ln, format!("need at least 2 alternatives, got {n}")));
        }

        let mut names: Vec<Option<String>> = vec![None; n];
        for _ in 0..n {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(ln, "file ends inside the alternative list"))?;
            let (idx, name) = l
                .split_once(',')
                .ok_or_else(|| perr(ln, "expected `index,name`"))?;
            let idx: usize = parse_num(idx, ln, "alternative index")?;
            if idx == 0 || idx > n {
                return Err(perr(ln, format!("alternative index {idx} out of range 1..={n}")));
            }
            if names[idx - 1].replace(name.trim().to_string()).is_some() {
                return Err(perr(ln, format!("alternative {idx} listed twice")));
            }
        }
        let alternative_names: Vec<String> = names.into_iter().map(Option::unwrap).collect();

        let (hl, header) = lines
            .next()
            .ok_or_else(|| perr(ln, "missing `voters,sum,unique` header"))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 3 {
            return Err(perr(hl, "malformed header, expected `voters,sum,unique`"));
        }
        let counts_header = (
            parse_num(fields[0], hl, "number of voters")?,
            parse_num(fields[1], hl, "sum of counts")?,
            parse_num(fields[2], hl, "number of unique orders")?,
        );

        let mut order_lines = Vec::new();
        for (ln, l) in lines {
            if l.contains('{') || l.contains('}') {
                return Err(perr(ln, "ties are not supported"));
            }
            let mut parts = l.split(',');
            let count: u64 = parse_num(parts.next().unwrap_or(""), ln, "count")?;
            let mut seen = vec![false; n];
            let mut items = Vec::new();
            for p in parts {
                let id: usize = parse_num(p, ln, "candidate id")?;
                if id == 0 || id > n {
                    return Err(perr(ln, format!("candidate id {id} out of range 1..={n}")));
                }
                if std::mem::replace(&mut seen[id - 1], true) {
                    return Err(perr(ln, format!("duplicate item {id}")));
                }
                items.push(id - 1);
            }
            if items.is_empty() {
                return Err(perr(ln, "order line lists no candidates"));
            }
            if count == 0 {
                return Err(perr(ln, "order count must be positive"));
            }
            order_lines.push((count, items));
        }

        let total: u64 = order_lines.iter().map(|(c, _)| c).sum();
        if total != counts_header.1 {
            return Err(perr(
                hl,
                format!("header sum of counts {} but lines sum to {total}", counts_header.1),
            ));
        }
        if order_lines.len() != counts_header.2 {
            return Err(perr(
                hl,
                format!(
                    "header lists {} unique orders but file has {}",
                    counts_header.2,
                    order_lines.len()
                ),
            ));
        }
        Ok(Self {
            n,
            alternative_names,
            counts_header,
            order_lines,
        })
    }

    pub fn to_dataset(&self) -> Result<RankingDataset> {
        let universe = Universe::with_labels(self.alternative_names.clone())?;
        let rankings = self
            .order_lines
            .iter()
            .map(|(c, items)| Ranking::new(items.clone(), self.n, *c))
            .collect::<Result<_>>()?;
        RankingDataset::new(universe, rankings)
    }
}

/// Parse Preflib SOC/SOI text into a weighted dataset (0-based items).
pub fn parse_preflib(text: &str) -> Result<RankingDataset> {
    PreflibFile::parse(text)?.to_dataset()
}

pub fn read_preflib(path: impl AsRef<Path>) -> Result<RankingDataset> {
    parse_preflib(&fs::read_to_string(path)?)
}

/// Serialize a dataset in the classic Preflib layout.
pub fn write_preflib(ds: &RankingDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", ds.n());
    for i in 0..ds.n() {
        let _ = writeln!(out, "{},{}", i + 1, ds.universe.label(i));
    }
    let total = ds.total_weight();
    let _ = writeln!(out, "{total},{total},{}", ds.rankings.len());
    for r in &ds.rankings {
        let ids: Vec<String> = r.items.iter().map(|x| (x + 1).to_string()).collect();
        let _ = writeln!(out, "{},{}", r.weight, ids.join(","));
    }
    out
}

/// On-disk parameter document. Arrays are keyed by name: `theta` (PL),
/// `u` (CRS full), `t` and `c` row-major `n × rank` (CRS factor), `sigma0`
/// and a one-element `theta_c` (Mallows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub version: u32,
    pub model_kind: String,
    pub n: usize,
    pub rank: Option<usize>,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl ParamsDocument {
    pub fn from_params(params: &ModelParams) -> Self {
        let mut arrays = BTreeMap::new();
        match params {
            ModelParams::Pl { theta } => {
                arrays.insert("theta".into(), theta.clone());
            }
            ModelParams::CrsFull { u, .. } => {
                arrays.insert("u".into(), u.clone());
            }
            ModelParams::CrsFactor { t, c, .. } => {
                arrays.insert("t".into(), t.clone());
                arrays.insert("c".into(), c.clone());
            }
            ModelParams::Mallows { sigma0, theta_c } => {
                arrays.insert("sigma0".into(), sigma0.iter().map(|&x| x as f64).collect());
                arrays.insert("theta_c".into(), vec![*theta_c]);
            }
        }
        Self {
            version: PARAMS_FORMAT_VERSION,
            model_kind: params.kind().tag().into(),
            n: params.n(),
            rank: params.kind().rank(),
            arrays,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.version != PARAMS_FORMAT_VERSION {
            return Err(Error::Document(format!(
                "unsupported version {} (expected {PARAMS_FORMAT_VERSION})",
                self.version
            )));
        }
        let n = self.n;
        let get = |key: &str, len: usize| -> Result<Vec<f64>> {
            let v = self
                .arrays
                .get(key)
                .ok_or_else(|| Error::Document(format!("missing array `{key}`")))?;
            if v.len() != len {
                return Err(Error::Document(format!(
                    "dimension mismatch: `{key}` has {} entries, expected {len}",
                    v.len()
                )));
            }
            Ok(v.clone())
        };
        let expect_keys = |keys: &[&str]| -> Result<()> {
            if let Some(k) = self.arrays.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(Error::Document(format!(
                    "unexpected array `{k}` for model kind {}",
                    self.model_kind
                )));
            }
            Ok(())
        };
        if n < 2 {
            return Err(Error::Document(format!("n must be ≥ 2, got {n}")));
        }
        let params = match self.model_kind.as_str() {
            "pl" => {
                expect_keys(&["theta"])?;
                ModelParams::Pl { theta: get("theta", n)? }
            }
            "crs_full" => {
                expect_keys(&["u"])?;
                ModelParams::CrsFull { n, u: get("u", n * (n - 1))? }
            }
            "crs_factor" => {
                expect_keys(&["t", "c"])?;
                let rank = self
                    .rank
                    .ok_or_else(|| Error::Document("crs_factor needs `rank`".into()))?;
                ModelParams::CrsFactor {
                    n,
                    rank,
                    t: get("t", n * rank)?,
                    c: get("c", n * rank)?,
                }
            }
            "mallows" => {
                expect_keys(&["sigma0", "theta_c"])?;
                let raw = get("sigma0", n)?;
                if raw.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                    return Err(Error::Document("`sigma0` must hold item indices".into()));
                }
                ModelParams::Mallows {
                    sigma0: raw.iter().map(|&x| x as usize).collect(),
                    theta_c: get("theta_c", 1)?[0],
                }
            }
            other => return Err(Error::Document(format!("unknown model kind `{other}`"))),
        };
        params
            .validate()
            .map_err(|e| Error::Document(e.to_string()))?;
        Ok(params)
    }
}

/// Render parameters as a JSON document. Floats are written in shortest
/// round-trip form, so reading back is bit-exact.
pub fn params_to_string(params: &ModelParams) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ParamsDocument::from_params(params))? + "\n")
}

pub fn params_from_str(text: &str) -> Result<ModelParams> {
    serde_json::from_str::<ParamsDocument>(text)?.to_params()
}

pub fn write_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, params_to_string(params)?)?;
    Ok(())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    params_from_str(&fs::read_to_string(path)?)
}

/// A row type that can be written as a CSV table.
pub trait TableRow {
    fn header() -> Vec<&'static str>;
    fn record(&self) -> Vec<String>;
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TableRow for RiskRow {
    fn header() -> Vec<&'static str> {
        vec!["model", "n", "rank", "ell", "trial", "squared_l2_risk"]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.n.to_string(),
            opt(self.rank),
            self.ell.to_string(),
            self.trial.to_string(),
            self.squared_l2_risk.to_string(),
        ]
    }
}

impl TableRow for BundleStats {
    fn header() -> Vec<&'static str> {
        vec!["model", "n", "rank", "ell", "trials", "median", "iqr", "max_over_median"]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.n.to_string(),
            opt(self.rank),
            self.ell.to_string(),
            self.trials.to_string(),
            self.median.to_string(),
            self.iqr.to_string(),
            self.max_over_median.to_string(),
        ]
    }
}

impl TableRow for CVResult {
    fn header() -> Vec<&'static str> {
        vec!["model", "rank", "folds", "mean_test_nll_per_ranking", "sem"]
    }
    fn record(&self) -> Vec<String> {
        vec![
            self.model_kind.tag().into(),
            opt(self.model_kind.rank()),
            self.folds.to_string(),
            self.mean_test_nll_per_ranking.to_string(),
            self.sem.to_string(),
        ]
    }
}

/// One line of a cross-validation report: the summary, or one position of the
/// pooled position profile.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalRow {
    Summary(CVResult),
    Position {
        model: String,
        position: usize,
        mean_log_likelihood: f64,
        count: u64,
    },
}

impl EvalRow {
    /// Summary line followed by one line per position.
    pub fn from_cv(cv: &CVResult) -> Vec<EvalRow> {
        let mut rows = vec![EvalRow::Summary(cv.clone())];
        rows.extend(cv.profile.per_position.iter().enumerate().map(|(k, s)| {
            EvalRow::Position {
                model: cv.model_kind.tag().into(),
                position: k + 1,
                mean_log_likelihood: s.mean_log_likelihood,
                count: s.count,
            }
        }));
        rows
    }
}

impl TableRow for EvalRow {
    fn header() -> Vec<&'static str> {
        vec!["section", "model", "folds", "position", "value", "sem", "count"]
    }
    fn record(&self) -> Vec<String> {
        match self {
            EvalRow::Summary(cv) => vec![
                "summary".into(),
                cv.model_kind.tag().into(),
                cv.folds.to_string(),
                String::new(),
                cv.mean_test_nll_per_ranking.to_string(),
                cv.sem.to_string(),
                String::new(),
            ],
            EvalRow::Position {
                model,
                position,
                mean_log_likelihood,
                count,
            } => vec![
                "position".into(),
                model.clone(),
                String::new(),
                position.to_string(),
                mean_log_likelihood.to_string(),
                String::new(),
                count.to_string(),
            ],
        }
    }
}

/// Certificate flattened to one row per bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRow<'a> {
    pub cert: &'a SpectralCertificate,
    pub check: Option<usize>,
}

impl CertificateRow<'_> {
    pub fn rows(cert: &SpectralCertificate) -> Vec<CertificateRow<'_>> {
        if cert.bound_checks.is_empty() {
            return vec![CertificateRow { cert, check: None }];
        }
        (0..cert.bound_checks.len())
            .map(|i| CertificateRow { cert, check: Some(i) })
            .collect()
    }
}

impl TableRow for CertificateRow<'_> {
    fn header() -> Vec<&'static str> {
        vec![
            "matrix_kind",
            "dim",
            "lambda2",
            "lambda_max",
            "connected_or_identified",
            "b",
            "check",
            "bound_value",
            "holds",
        ]
    }
    fn record(&self) -> Vec<String> {
        let c = self.cert;
        let check = self.check.map(|i| &c.bound_checks[i]);
        vec![
            c.matrix_kind.tag().into(),
            c.dim.to_string(),
            c.lambda2.to_string(),
            c.lambda_max.to_string(),
            c.connected_or_identified.to_string(),
            c.b.to_string(),
            opt(check.map(|b| b.name.clone())),
            opt(check.map(|b| b.bound_value)),
            opt(check.map(|b| b.holds)),
        ]
    }
}

/// Write `rows` as CSV (header first, LF line endings).
pub fn write_results_csv<R: TableRow>(rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(R::header())?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Shape of an exported Cayley graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CayleyExport {
    pub nodes: usize,
    pub edges: usize,
    pub dot_path: PathBuf,
    pub csv_path: PathBuf,
}

fn perm_id(p: &[usize]) -> String {
    p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("|")
}

/// Unique `p_<tag>` column names, numbering repeats (`p_pl`, `p_pl_2`, …).
fn probability_columns(params_list: &[ModelParams]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    params_list
        .iter()
        .map(|p| {
            let tag = p.kind().tag();
            let k = seen.entry(tag).or_default();
            *k += 1;
            if *k == 1 {
                format!("p_{tag}")
            } else {
                format!("p_{tag}_{k}")
            }
        })
        .collect()
}

/// Write the Cayley graph of `S_n` under adjacent transpositions as DOT at
/// `path`, with each node carrying one probability per model, and the node
/// table as CSV next to it (same stem, `.csv`).
pub fn export_cayley(
    params_list: &[ModelParams],
    n: usize,
    path: impl AsRef<Path>,
) -> Result<CayleyExport> {
    if n > MAX_CAYLEY_N {
        return Err(Error::TooLarge {
            what: "Cayley export",
            n,
            max: MAX_CAYLEY_N,
        });
    }
    let universe = Universe::new(n)?;
    let pmfs: Vec<Vec<(Vec<usize>, f64)>> = params_list
        .iter()
        .map(|p| enumerate_pmf(p, &universe))
        .collect::<Result<_>>()?;
    let columns = probability_columns(params_list);
    let perms: Vec<Vec<usize>> = permutations(n).collect();

    let mut dot = String::from("graph cayley {\n");
    let mut rows = Vec::with_capacity(perms.len());
    for (i, p) in perms.iter().enumerate() {
        let attrs: Vec<String> = columns
            .iter()
            .zip(&pmfs)
            .map(|(col, pmf)| format!("{col}=\"{}\"", pmf[i].1))
            .collect();
        if attrs.is_empty() {
            let _ = writeln!(dot, "  \"{}\";", perm_id(p));
        } else {
            let _ = writeln!(dot, "  \"{}\" [{}];", perm_id(p), attrs.join(", "));
        }
        let mut row = vec![perm_id(p)];
        row.extend(pmfs.iter().map(|pmf| pmf[i].1.to_string()));
        rows.push(row);
    }
    let mut edges = 0;
    for p in &perms {
        for i in 0..n - 1 {
            let mut q = p.clone();
            q.swap(i, i + 1);
            if *p < q {
                let _ = writeln!(dot, "  \"{}\" -- \"{}\";", perm_id(p), perm_id(&q));
                edges += 1;
            }
        }
    }
    dot.push_str("}\n");

    let dot_path = path.as_ref().to_path_buf();
    let csv_path = dot_path.with_extension("csv");
    fs::write(&dot_path, dot)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&csv_path)?;
    let mut header = vec!["node".to_string()];
    header.extend(columns);
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(CayleyExport {
        nodes: perms.len(),
        edges,
        dot_path,
        csv_path,
    })
}
