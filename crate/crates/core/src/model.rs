//! Observation sequences, model parameters and their JSON form.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::linalg::SymMatrix;

const STOCHASTIC_TOL: f64 = 1e-9;

/// `N` observations of dimension `d`; row `n` is `x_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    data: DMatrix<f64>,
}

impl ObservationSequence {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(TagmError::InvalidInput("observation matrix is empty".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let n = pos % data.nrows();
            return Err(TagmError::InvalidInput(format!("non-finite value in observation {n}")));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(n) = rows.iter().position(|r| r.len() != d) {
            return Err(TagmError::InvalidInput(format!("row {n} has {} columns, expected {d}", rows[n].len())));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n_obs(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        self.data.row(n).transpose()
    }

    /// Rows `start..end` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_obs() {
            return Err(TagmError::InvalidInput(format!("bad row range {start}..{end}")));
        }
        Self::new(self.data.rows(start, end - start).into_owned())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// θ = {π, A, μ_1..K, Θ_1..K}.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub pi: DVector<f64>,
    pub trans: DMatrix<f64>,
    /// Row `k` is μ_k.
    pub means: DMatrix<f64>,
    pub precisions: Vec<SymMatrix>,
}

impl ModelParams {
    pub fn new(pi: DVector<f64>, trans: DMatrix<f64>, means: DMatrix<f64>, precisions: Vec<SymMatrix>) -> Result<Self> {
        let p = Self {
            pi,
            trans,
            means,
            precisions,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        self.means.row(k).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 {
            return Err(TagmError::InvalidInput("model has no states".into()));
        }
        if self.trans.shape() != (k, k) || self.means.nrows() != k || self.precisions.len() != k {
            return Err(TagmError::InvalidInput("inconsistent parameter shapes".into()));
        }
        check_probability_vector(self.pi.iter().copied(), "pi")?;
        for (j, row) in self.trans.row_iter().enumerate() {
            check_probability_vector(row.iter().copied(), &format!("transition row {j}"))?;
        }
        if self.means.iter().any(|v| !v.is_finite()) {
            return Err(TagmError::InvalidInput("non-finite mean".into()));
        }
        let d = self.dim();
        for (s, theta) in self.precisions.iter().enumerate() {
            if theta.dim() != d {
                return Err(TagmError::InvalidInput(format!("precision {s} has wrong dimension")));
            }
            if !theta.is_positive_definite() {
                return Err(TagmError::NotPositiveDefinite(format!("precision of state {s}")));
            }
        }
        Ok(())
    }

    /// Reorders states so that new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.n_states();
        Self {
            pi: DVector::from_fn(k, |i, _| self.pi[perm[i]]),
            trans: DMatrix::from_fn(k, k, |i, j| self.trans[(perm[i], perm[j])]),
            means: DMatrix::from_fn(k, self.dim(), |i, j| self.means[(perm[i], j)]),
            precisions: perm.iter().map(|&p| self.precisions[p].clone()).collect(),
        }
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            k: self.n_states(),
            d: self.dim(),
            pi: self.pi.iter().copied().collect(),
            a: rows_of(&self.trans),
            means: rows_of(&self.means),
            precisions: self.precisions.iter().map(SparseSym::from_sym).collect(),
        }
    }

    pub fn from_json(j: &ModelJson) -> Result<Self> {
        if j.pi.len() != j.k || j.a.len() != j.k || j.means.len() != j.k || j.precisions.len() != j.k {
            return Err(TagmError::InvalidInput("model JSON arrays disagree with k".into()));
        }
        if j.a.iter().any(|r| r.len() != j.k) || j.means.iter().any(|r| r.len() != j.d) {
            return Err(TagmError::InvalidInput("model JSON rows have wrong length".into()));
        }
        let precisions = j
            .precisions
            .iter()
            .map(|p| {
                if p.dim != j.d {
                    return Err(TagmError::InvalidInput("precision dim disagrees with d".into()));
                }
                p.to_sym()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            DVector::from_vec(j.pi.clone()),
            DMatrix::from_fn(j.k, j.k, |r, c| j.a[r][c]),
            DMatrix::from_fn(j.k, j.d, |r, c| j.means[r][c]),
            precisions,
        )
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_probability_vector(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(TagmError::InvalidInput(format!("{what} has entry {v} outside [0, 1]")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(TagmError::InvalidInput(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Serialized model: `{k, d, pi, a, means, precisions}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub k: usize,
    pub d: usize,
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub precisions: Vec<SparseSym>,
}

/// Upper-triangle triplets `(i, j, value)` with `i <= j`; omitted entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSym {
    pub dim: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn from_sym(m: &SymMatrix) -> Self {
        let d = m.dim();
        let mut triplets = Vec::new();
        for i in 0..d {
            for j in i..d {
                let v = m.get(i, j);
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self { dim: d, triplets }
    }

    pub fn to_sym(&self) -> Result<SymMatrix> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.triplets {
            if i > j || j >= self.dim {
                return Err(TagmError::InvalidInput(format!("bad triplet index ({i}, {j})")));
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        SymMatrix::new(m)
    }
}

/// Posterior quantities from one forward-backward pass.
#[derive(Debug, Clone)]
pub struct EStepResult {
    /// `N×K`, row `n` is γ(z_n).
    pub gamma: DMatrix<f64>,
    /// `N−1` matrices; `xi[n−1][(j, k)]` is ξ(z_{n−1} = j, z_n = k).
    pub xi: Vec<DMatrix<f64>>,
    /// `ln c_n` for each step. The scale factors themselves can underflow
    /// for high-dimensional data, so they are kept in log form.
    pub log_scale: DVector<f64>,
    /// `ln p(X) = Σ_n ln c_n`.
    pub loglik: f64,
}

impl EStepResult {
    pub fn n_obs(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn scale(&self) -> DVector<f64> {
        self.log_scale.map(f64::exp)
    }

    /// Row-argmax of γ, ties toward the lowest state index.
    pub fn labels(&self) -> Vec<usize> {
        self.gamma.row_iter().map(|r| argmax(r.iter().copied())).collect()
    }

    pub fn last_gamma(&self) -> RowDVector<f64> {
        self.gamma.row(self.n_obs() - 1).into_owned()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams {
        ModelParams::new(
            DVector::from_vec(vec![0.3, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.1, -3.0, 1.0 / 3.0, 2.5e-12]),
            vec![
                SymMatrix::from_rows(&[vec![1.0, 0.1], vec![0.1, 2.0]]).unwrap(),
                SymMatrix::from_diagonal(&[0.7, 1.3]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = sample();
        let text = serde_json::to_string(&p.to_json()).unwrap();
        let back = ModelParams::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(p, back);
        // Diagonal precision has no off-diagonal triplets.
        assert_eq!(p.to_json().precisions[1].triplets.len(), 2);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let mut p = sample();
        p.trans[(0, 0)] = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax([0.5, 0.5].into_iter()), 0);
        assert_eq!(argmax([0.1, 0.6, 0.3].into_iter()), 1);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(ObservationSequence::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
