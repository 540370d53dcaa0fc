//! Symmetric matrices and the handful of dense linear-algebra helpers the
//! rest of the crate needs.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Result, TagmError};

/// Entries with magnitude below this are treated as structural zeros when
/// counting edges or free parameters.
pub const ZERO_THRESHOLD: f64 = 1e-8;

/// A dense symmetric matrix. Construction guarantees exact symmetry and
/// finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square, non-symmetric or non-finite input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(TagmError::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(TagmError::InvalidInput("matrix has dimension 0".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(TagmError::InvalidInput("matrix has non-finite entries".into()));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if m[(i, j)] != m[(j, i)] {
                    return Err(TagmError::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds a symmetric matrix from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(TagmError::InvalidInput("rows have inconsistent length".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// Averages `m` with its transpose. Use for matrices that are symmetric
    /// in exact arithmetic but picked up rounding asymmetry.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        let d = m.nrows();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            out[(i, i)] = m[(i, i)];
            for j in (i + 1)..d {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Self(out)
    }

    /// Builds from a function evaluated on the upper triangle (`i <= j`).
    pub fn from_upper_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        Self(DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn cholesky(&self) -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(self.0.clone())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, Dyn> {
        SymmetricEigen::new(self.0.clone())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().eigenvalues.min()
    }

    /// Inverse of a positive definite matrix, re-symmetrized.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let chol = self
            .cholesky()
            .ok_or_else(|| TagmError::NotPositiveDefinite("cannot invert".into()))?;
        Ok(Self::symmetrize(&chol.inverse()))
    }

    /// `ln det` of a positive definite matrix.
    pub fn log_det_pd(&self) -> Result<f64> {
        let chol = self
            .cholesky()
            .ok_or_else(|| TagmError::NotPositiveDefinite("log-determinant".into()))?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }

    /// Sum of absolute off-diagonal entries, both triangles counted.
    pub fn off_diag_l1(&self) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += self.0[(i, j)].abs();
                }
            }
        }
        s
    }

    /// Number of entries on or below the diagonal with magnitude above `threshold`.
    pub fn count_nonzero_lower(&self, threshold: f64) -> usize {
        let d = self.dim();
        (0..d)
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .filter(|&(i, j)| self.0[(i, j)].abs() > threshold)
            .count()
    }

    /// Adds `eps` to every diagonal entry.
    pub fn add_ridge(&self, eps: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..self.dim() {
            m[(i, i)] += eps;
        }
        Self(m)
    }

    /// `tr(self · other)` for two symmetric matrices.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.component_mul(&other.0).sum()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

/// Convex combination `Σ w_k M_k` of symmetric matrices.
pub fn weighted_sum(weights: &[f64], mats: &[SymMatrix]) -> SymMatrix {
    let d = mats[0].dim();
    let mut acc = DMatrix::zeros(d, d);
    for (w, m) in weights.iter().zip(mats) {
        if *w != 0.0 {
            acc += m.as_matrix() * *w;
        }
    }
    SymMatrix::symmetrize(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(TagmError::InvalidInput(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn log_det_and_inverse() {
        let s = SymMatrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((s.log_det_pd().unwrap() - 4f64.ln()).abs() < 1e-14);
        let inv = s.inverse_pd().unwrap();
        assert!((inv.get(0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(inv.get(0, 1), 0.0);
    }

    #[test]
    fn off_diag_norm_counts_both_triangles() {
        let s = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(s.off_diag_l1(), 1.0);
        assert_eq!(s.count_nonzero_lower(ZERO_THRESHOLD), 3);
        assert_eq!(SymMatrix::identity(3).count_nonzero_lower(ZERO_THRESHOLD), 3);
    }
}
