//! Clustering, network-recovery and forecasting scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::linalg::{SymMatrix, ZERO_THRESHOLD};
use crate::model::ObservationSequence;

/// Contingency counts keyed by `(a, b)` label pairs.
fn contingency(a: &[usize], b: &[usize]) -> BTreeMap<(usize, usize), usize> {
    let mut table = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
    }
    table
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn marginal(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Harmonic mean of homogeneity and completeness.
pub fn v_measure(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(TagmError::InvalidInput(format!(
            "label vectors differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(TagmError::InvalidInput("label vectors are empty".into()));
    }
    let n = truth.len() as f64;
    let joint = contingency(truth, pred);
    let h_joint = entropy(joint.values().copied(), n);
    let h_truth = entropy(marginal(truth).values().copied(), n);
    let h_pred = entropy(marginal(pred).values().copied(), n);
    // H(truth | pred) = H(truth, pred) − H(pred), and symmetrically.
    let homogeneity = if h_truth == 0.0 { 1.0 } else { 1.0 - (h_joint - h_pred) / h_truth };
    let completeness = if h_pred == 0.0 { 1.0 } else { 1.0 - (h_joint - h_truth) / h_pred };
    if homogeneity + completeness == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * homogeneity * completeness / (homogeneity + completeness)).clamp(0.0, 1.0))
}

/// Maps each predicted state to the truth state it co-occurs with most;
/// ties go to the lowest truth index.
pub fn map_clusters(truth: &[usize], pred: &[usize]) -> Result<BTreeMap<usize, usize>> {
    if truth.len() != pred.len() {
        return Err(TagmError::InvalidInput("label vectors differ in length".into()));
    }
    let table = contingency(pred, truth);
    let mut best: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&(p, t), &count) in &table {
        let entry = best.entry(p).or_insert((t, count));
        if count > entry.1 {
            *entry = (t, count);
        }
    }
    Ok(best.into_iter().map(|(p, (t, _))| (p, t)).collect())
}

/// Undirected graph without self-loops, stored as a dense boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    dim: usize,
    adjacency: Vec<bool>,
}

impl EdgeSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            adjacency: vec![false; dim * dim],
        }
    }

    pub fn from_edges(dim: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut e = Self::empty(dim);
        for &(i, j) in edges {
            if i == j || i >= dim || j >= dim {
                return Err(TagmError::InvalidInput(format!("invalid edge ({i}, {j})")));
            }
            e.set(i, j, true);
        }
        Ok(e)
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.adjacency[i * self.dim + j] = v;
        self.adjacency[j * self.dim + i] = v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.dim + j]
    }

    pub fn n_edges(&self) -> usize {
        (0..self.dim).map(|i| ((i + 1)..self.dim).filter(|&j| self.has_edge(i, j)).count()).sum()
    }

    /// Every non-edge becomes an edge and vice versa.
    pub fn complement(&self) -> Self {
        let mut c = Self::empty(self.dim);
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                c.set(i, j, !self.has_edge(i, j));
            }
        }
        c
    }
}

/// Edges are off-diagonal entries with `|θ_ij| > threshold`.
pub fn graph_from_precision(theta: &SymMatrix, threshold: f64) -> EdgeSet {
    let d = theta.dim();
    let mut e = EdgeSet::empty(d);
    for i in 0..d {
        for j in (i + 1)..d {
            if theta.get(i, j).abs() > threshold {
                e.set(i, j, true);
            }
        }
    }
    e
}

/// Matthews correlation over the strict upper triangle; 0 when undefined.
pub fn mcc(truth: &EdgeSet, pred: &EdgeSet) -> Result<f64> {
    if truth.dim() != pred.dim() {
        return Err(TagmError::InvalidInput(format!(
            "edge sets differ in dimension: {} vs {}",
            truth.dim(),
            pred.dim()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..truth.dim() {
        for j in (i + 1)..truth.dim() {
            match (truth.has_edge(i, j), pred.has_edge(i, j)) {
                (true, true) => tp += 1.0,
                (false, false) => tn += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
            }
        }
    }
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)) as f64;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

/// `(1/N) Σ_n (1/d) Σ_j |x_nj − x̂_nj|`.
pub fn mae(truth: &ObservationSequence, pred: &ObservationSequence) -> Result<f64> {
    if truth.data().shape() != pred.data().shape() {
        return Err(TagmError::InvalidInput(format!(
            "shape mismatch: {:?} vs {:?}",
            truth.data().shape(),
            pred.data().shape()
        )));
    }
    let (n, d) = truth.data().shape();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..d {
            row += (truth.data()[(i, j)] - pred.data()[(i, j)]).abs();
        }
        total += row / d as f64;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMcc {
    pub predicted: usize,
    pub truth: usize,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScore {
    pub per_state: Vec<StateMcc>,
    pub mean: f64,
    /// Fraction of truth states that received at least one predicted state.
    pub coverage: f64,
}

/// Mean MCC between each predicted graph and the truth graph it maps to.
pub fn network_score(
    truth_labels: &[usize],
    truth_precisions: &[SymMatrix],
    pred_labels: &[usize],
    pred_precisions: &[SymMatrix],
) -> Result<NetworkScore> {
    let mapping = map_clusters(truth_labels, pred_labels)?;
    let mut per_state = Vec::with_capacity(mapping.len());
    for (&p, &t) in &mapping {
        let (Some(pt), Some(tt)) = (pred_precisions.get(p), truth_precisions.get(t)) else {
            return Err(TagmError::InvalidInput(format!("no precision for mapped pair {p} -> {t}")));
        };
        let score = mcc(
            &graph_from_precision(tt, ZERO_THRESHOLD),
            &graph_from_precision(pt, ZERO_THRESHOLD),
        )?;
        per_state.push(StateMcc {
            predicted: p,
            truth: t,
            mcc: score,
        });
    }
    let mean = if per_state.is_empty() {
        0.0
    } else {
        per_state.iter().map(|s| s.mcc).sum::<f64>() / per_state.len() as f64
    };
    let covered: std::collections::BTreeSet<usize> = mapping.values().copied().collect();
    let coverage = covered.len() as f64 / truth_precisions.len().max(1) as f64;
    Ok(NetworkScore {
        per_state,
        mean,
        coverage,
    })
}

/// Serialized evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub v_measure: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc_per_state: Option<Vec<StateMcc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    pub mapping: BTreeMap<usize, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v_measure_examples() {
        let t = [0, 0, 1, 1, 2, 2];
        assert!((v_measure(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let renamed = [2, 2, 0, 0, 1, 1];
        assert!((v_measure(&t, &renamed).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(v_measure(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert!(v_measure(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn mapping_examples() {
        let t = [0, 0, 1, 1, 2];
        let m = map_clusters(&t, &t).unwrap();
        assert_eq!(m, BTreeMap::from([(0, 0), (1, 1), (2, 2)]));
        let swapped = [1, 1, 0, 0, 2];
        assert_eq!(map_clusters(&t, &swapped).unwrap(), BTreeMap::from([(0, 1), (1, 0), (2, 2)]));
        // Row (3, 3) for predicted state 0.
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 0, 0, 0, 0];
        assert_eq!(map_clusters(&truth, &pred).unwrap()[&0], 0);
    }

    #[test]
    fn mcc_examples() {
        let truth = EdgeSet::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(mcc(&truth, &truth).unwrap(), 1.0);
        assert_eq!(mcc(&truth, &truth.complement()).unwrap(), -1.0);
        let t = EdgeSet::from_edges(3, &[(0, 1)]).unwrap();
        let p = EdgeSet::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        assert!((mcc(&t, &p).unwrap() - 0.5).abs() < 1e-15);
        assert!(mcc(&t, &EdgeSet::empty(4)).is_err());
    }

    #[test]
    fn graph_thresholds() {
        assert_eq!(graph_from_precision(&SymMatrix::identity(3), ZERO_THRESHOLD).n_edges(), 0);
        let t = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(graph_from_precision(&t, ZERO_THRESHOLD).n_edges(), 1);
        let t = SymMatrix::from_rows(&[vec![1.0, 1e-12], vec![1e-12, 1.0]]).unwrap();
        assert_eq!(graph_from_precision(&t, ZERO_THRESHOLD).n_edges(), 0);
    }

    #[test]
    fn mae_examples() {
        let a = ObservationSequence::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = ObservationSequence::from_rows(&[vec![1.0, 3.0]]).unwrap();
        assert_eq!(mae(&a, &b).unwrap(), 2.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let shifted = ObservationSequence::from_rows(&[vec![0.25, 0.25]]).unwrap();
        assert_eq!(mae(&a, &shifted).unwrap(), 0.25);
    }

    #[test]
    fn network_score_examples() {
        let chain = SymMatrix::from_rows(&[
            vec![1.0, 0.3, 0.0],
            vec![0.3, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let other = SymMatrix::from_rows(&[
            vec![1.0, 0.0, 0.2],
            vec![0.0, 1.0, 0.0],
            vec![0.2, 0.0, 1.0],
        ])
        .unwrap();
        let truth = [0, 0, 1, 1];
        let thetas = [chain.clone(), other.clone()];
        let exact = network_score(&truth, &thetas, &truth, &thetas).unwrap();
        assert_eq!(exact.mean, 1.0);
        assert_eq!(exact.coverage, 1.0);

        let swapped = network_score(&truth, &thetas, &[1, 1, 0, 0], &[other, chain]).unwrap();
        assert_eq!(swapped.mean, 1.0);

        let empty = [SymMatrix::identity(3), SymMatrix::identity(3)];
        assert_eq!(network_score(&truth, &thetas, &truth, &empty).unwrap().mean, 0.0);

        let merged = network_score(&truth, &thetas, &[0, 0, 0, 0], &thetas).unwrap();
        assert_eq!(merged.coverage, 0.5);
    }
}
