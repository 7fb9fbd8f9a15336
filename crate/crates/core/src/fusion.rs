//! Probability-level fusion of per-modality predictions.
//!
//! Four strategies: elementwise max, elementwise average, and their
//! informativity-weighted variants, where each modality's weight is a
//! normalized-entropy confidence in [0,1]. The decision is always the
//! argmax of the fused score vector.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A validated probability distribution over C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite probability".into()));
        }
        if p.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidDistribution("negative probability".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One sample's predictions across modalities.
#[derive(Debug, Clone)]
pub struct FusionInput {
    pub modalities: Vec<String>,
    pub dists: Vec<ProbDist>,
}

impl FusionInput {
    pub fn new(modalities: Vec<String>, dists: Vec<ProbDist>) -> Result<Self> {
        if dists.is_empty() {
            return Err(Error::InvalidParameter(
                "fusion needs at least one modality".into(),
            ));
        }
        if modalities.len() != dists.len() {
            return Err(Error::InvalidParameter(
                "modality names and distributions disagree in length".into(),
            ));
        }
        let c = dists[0].len();
        if dists.iter().any(|d| d.len() != c) {
            return Err(Error::InvalidParameter(
                "all modalities must share the class count".into(),
            ));
        }
        Ok(Self { modalities, dists })
    }

    pub fn num_classes(&self) -> usize {
        self.dists[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Max,
    Avg,
    WMax,
    WAvg,
}

impl FusionMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "avg" => Ok(Self::Avg),
            "wmax" => Ok(Self::WMax),
            "wavg" => Ok(Self::WAvg),
            _ => Err(Error::InvalidParameter(format!(
                "unknown fusion method '{s}' (expected max|avg|wmax|wavg)"
            ))),
        }
    }
}

/// S_c = max over modalities of p_c.
pub fn fuse_max(fi: &FusionInput) -> Vec<f64> {
    let c = fi.num_classes();
    let mut s = vec![f64::NEG_INFINITY; c];
    for d in &fi.dists {
        for (sc, &p) in s.iter_mut().zip(d.as_slice()) {
            *sc = sc.max(p);
        }
    }
    s
}

/// S_c = mean over modalities of p_c; itself a distribution.
pub fn fuse_avg(fi: &FusionInput) -> Vec<f64> {
    let c = fi.num_classes();
    let m = fi.dists.len() as f64;
    let mut s = vec![0.0; c];
    for d in &fi.dists {
        for (sc, &p) in s.iter_mut().zip(d.as_slice()) {
            *sc += p / m;
        }
    }
    s
}

/// Normalized-entropy confidence over the top-K probabilities:
/// gamma = sum_k p_k log p_k / log K + 1 after renormalizing the top K to
/// sum 1, with 0*log 0 = 0. Equals 0 exactly on a uniform top-K and 1 on a
/// one-hot; the log ratio makes it base-invariant.
pub fn informativity(p: &ProbDist, k: usize) -> Result<f64> {
    let c = p.len();
    if k < 2 || k > c {
        return Err(Error::InvalidParameter(format!(
            "top-K must satisfy 2 <= K <= C, got K={k}, C={c}"
        )));
    }
    let mut sorted: Vec<f64> = p.as_slice().to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.truncate(k);
    let top_sum: f64 = sorted.iter().sum();
    let entropy: f64 = sorted
        .iter()
        .map(|&v| {
            let pk = if top_sum > 0.0 { v / top_sum } else { 0.0 };
            if pk > 0.0 {
                pk * pk.ln()
            } else {
                0.0
            }
        })
        .sum();
    let gamma = entropy / (k as f64).ln() + 1.0;
    // The boundary values are contractual: uniform-over-K must give exactly
    // 0 and a one-hot exactly 1, so sub-ulp float residue is snapped.
    let gamma = gamma.clamp(0.0, 1.0);
    if gamma < 1e-12 {
        Ok(0.0)
    } else if gamma > 1.0 - 1e-12 {
        Ok(1.0)
    } else {
        Ok(gamma)
    }
}

/// Informativity-weighted fusion: per-modality gamma scales its
/// distribution before max/avg. The result is a score vector, not a
/// distribution; only the argmax matters.
pub fn fuse_weighted(fi: &FusionInput, mode: FusionMethod, k: usize) -> Result<Vec<f64>> {
    let gammas: Vec<f64> = fi
        .dists
        .iter()
        .map(|d| informativity(d, k))
        .collect::<Result<_>>()?;
    let c = fi.num_classes();
    let m = fi.dists.len() as f64;
    let mut s = match mode {
        FusionMethod::WMax | FusionMethod::Max => vec![f64::NEG_INFINITY; c],
        FusionMethod::WAvg | FusionMethod::Avg => vec![0.0; c],
    };
    for (d, &g) in fi.dists.iter().zip(&gammas) {
        for (sc, &p) in s.iter_mut().zip(d.as_slice()) {
            match mode {
                FusionMethod::WMax | FusionMethod::Max => *sc = sc.max(g * p),
                FusionMethod::WAvg | FusionMethod::Avg => *sc += g * p / m,
            }
        }
    }
    Ok(s)
}

/// Applies the configured strategy. `k = None` means top-K over all
/// classes.
pub fn fuse(fi: &FusionInput, method: FusionMethod, k: Option<usize>) -> Result<Vec<f64>> {
    match method {
        FusionMethod::Max => Ok(fuse_max(fi)),
        FusionMethod::Avg => Ok(fuse_avg(fi)),
        FusionMethod::WMax | FusionMethod::WAvg => {
            fuse_weighted(fi, method, k.unwrap_or_else(|| fi.num_classes()))
        }
    }
}

/// An argmax decision with its tie diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub index: usize,
    /// True when another class achieved exactly the winning score; the
    /// lowest index wins deterministically.
    pub tied: bool,
}

/// Lowest-index argmax with a tie flag.
pub fn decide(scores: &[f64]) -> Decision {
    let mut best = 0usize;
    let mut tied = false;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
            tied = false;
        } else if s == scores[best] {
            tied = true;
        }
    }
    Decision { index: best, tied }
}

// ---------------------------------------------------------------------------
// Probability files
// ---------------------------------------------------------------------------

/// Writes `<sample id> <p1> .. <pC>` lines. The format doubles as the
/// interchange point for externally supplied modalities.
pub fn write_prob_file(path: &Path, rows: &[(u64, ProbDist)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, dist) in rows {
        write!(out, "{id}")?;
        for p in dist.as_slice() {
            write!(out, " {p}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a probability file, validating every row to distribution
/// invariants.
pub fn read_prob_file(path: &Path) -> Result<Vec<(u64, ProbDist)>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut rows = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id: u64 = fields
            .next()
            .ok_or_else(|| Error::Parse {
                path: path_str.clone(),
                line: line_no + 1,
                detail: "missing sample id".into(),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                path: path_str.clone(),
                line: line_no + 1,
                detail: format!("sample id: {e}"),
            })?;
        let probs: std::result::Result<Vec<f64>, _> = fields.map(str::parse).collect();
        let probs = probs.map_err(|e| Error::Parse {
            path: path_str.clone(),
            line: line_no + 1,
            detail: format!("probability: {e}"),
        })?;
        rows.push((id, ProbDist::new(probs)?));
    }
    Ok(rows)
}
