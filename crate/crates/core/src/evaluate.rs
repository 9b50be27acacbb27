//! Error metrics and downstream scoring primitives.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::{conditional_prob, FactorPair, ParameterMatrix};
use crate::spectral::{procrustes_distance, StackedFactors};

/// `‖Θ̂ − Θ*‖_F`.
pub fn frob_error(theta_hat: &ParameterMatrix, theta_star: &ParameterMatrix) -> Result<f64> {
    if theta_hat.dim() != theta_star.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta_star.dim(),
            actual: theta_hat.dim(),
        });
    }
    Ok((theta_hat.as_matrix() - theta_star.as_matrix()).norm())
}

/// `ρ²([Û; V̂], [U*; U*])`.
pub fn subspace_error(fit: &FactorPair, u_star: &DMatrix<f64>) -> Result<f64> {
    let truth = FactorPair::new(u_star.clone(), u_star.clone())?;
    procrustes_distance(&StackedFactors::from_pair(fit), &StackedFactors::from_pair(&truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite);
        }
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(Error::invalid("AUC needs at least one positive and one negative label"));
        }
        Ok(LabeledScores { scores, labels })
    }

    /// Labels given as 0/1.
    pub fn from_binary(scores: Vec<f64>, labels: &[u8]) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        Self::new(scores, labels.iter().map(|&l| l == 1).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted one half. Computed from mid-ranks in
/// `O(N log N)`.
pub fn auc(ls: &LabeledScores) -> f64 {
    let n = ls.scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| ls.scores[a].total_cmp(&ls.scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ls.scores[idx[j + 1]] == ls.scores[idx[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie group i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if ls.labels[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let pos = ls.labels.iter().filter(|&&l| l).count() as f64;
    let neg = n as f64 - pos;
    (rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// `θ̂_jk` for each requested pair.
pub fn pair_scores(theta_hat: &ParameterMatrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let p = theta_hat.dim();
    pairs
        .iter()
        .map(|&(j, k)| {
            for i in [j, k] {
                if i >= p {
                    return Err(Error::IndexOutOfRange { index: i, dim: p });
                }
            }
            if j == k {
                return Err(Error::invalid(format!("pair ({j}, {k}) is on the diagonal")));
            }
            Ok(theta_hat.get(j, k))
        })
        .collect()
}

/// `P(X_j = +1 | x_{−j})` under `Θ̂`; the given `x_j` is ignored.
pub fn phenotype_score(theta_hat: &ParameterMatrix, x: &[i8], j: usize) -> Result<f64> {
    if j >= x.len() {
        return Err(Error::IndexOutOfRange { index: j, dim: x.len() });
    }
    let mut forced = x.to_vec();
    forced[j] = 1;
    conditional_prob(theta_hat, &forced, j)
}

/// `ŷ = Ûᵀx`.
pub fn embed(u_hat: &DMatrix<f64>, x: &[i8]) -> Result<DVector<f64>> {
    if u_hat.nrows() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: u_hat.nrows(),
            actual: x.len(),
        });
    }
    let xv = DVector::from_iterator(x.len(), x.iter().map(|&v| f64::from(v)));
    Ok(u_hat.tr_mul(&xv))
}

/// Linear-term coefficients `b_j = (ÛÛᵀ)_jj`, i.e. squared row norms.
pub fn linear_terms(u_hat: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(u_hat.nrows(), u_hat.row_iter().map(|r| r.norm_squared()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub threshold: f64,
    pub edges: Vec<Edge>,
}

impl EdgeList {
    /// CSV with header `source,target,weight`; indices are 0-based.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for e in &self.edges {
            wtr.serialize(e).map_err(|e| Error::Format(e.to_string()))?;
        }
        if self.edges.is_empty() {
            wtr.write_record(["source", "target", "weight"])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Pairs `j < k` whose `θ̂_jk` reaches the nearest-rank `quantile` of all
/// upper-triangle entries, in row-major order.
pub fn kg_edges(theta_hat: &ParameterMatrix, quantile: f64) -> Result<EdgeList> {
    let p = theta_hat.dim();
    if p < 2 {
        return Err(Error::invalid("knowledge graph needs p ≥ 2"));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid(format!("quantile {quantile} must lie in (0, 1)")));
    }
    let mut upper = Vec::with_capacity(p * (p - 1) / 2);
    for j in 0..p {
        for k in (j + 1)..p {
            upper.push(theta_hat.get(j, k));
        }
    }
    let mut sorted = upper.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];
    let mut edges = Vec::new();
    for j in 0..p {
        for k in (j + 1)..p {
            let w = theta_hat.get(j, k);
            if w >= threshold {
                edges.push(Edge {
                    source: j,
                    target: k,
                    weight: w,
                });
            }
        }
    }
    Ok(EdgeList { threshold, edges })
}
