//! ℓ1-penalized Gaussian maximum likelihood for a sparse precision matrix.
//!
//! Minimizes `tr(SΘ) − ln det Θ + λ Σ_{i≠j} |Θ_ij|` over positive definite Θ
//! using ADMM: an eigendecomposition-based proximal step for the log-det
//! part alternates with entrywise soft-thresholding of the off-diagonal.
//! The penalty parameter ρ is adapted by residual balancing. Termination is
//! decided on the KKT residual of the sparse iterate, so a returned solution
//! always carries its own optimality certificate.

use nalgebra::DMatrix;

use crate::error::{Result, TagmError};
use crate::linalg::SymMatrix;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Below this smallest eigenvalue the input covariance gets a ridge.
pub const RIDGE_TRIGGER: f64 = 1e-8;
pub const RIDGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub theta: SymMatrix,
    /// Value of the minimized objective at `theta`.
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Solves the graphical lasso for covariance `s` and penalty `lambda`.
pub fn solve_glasso(s: &SymMatrix, lambda: f64, tol: f64, max_iter: usize) -> Result<GlassoSolution> {
    solve_glasso_warm(s, lambda, GlassoOptions { tol, max_iter }, None)
}

/// As [`solve_glasso`], optionally starting ADMM from a previous solution.
pub(crate) fn solve_glasso_warm(
    s: &SymMatrix,
    lambda: f64,
    opts: GlassoOptions,
    warm: Option<&SymMatrix>,
) -> Result<GlassoSolution> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TagmError::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(TagmError::InvalidInput("tol must be > 0 and max_iter >= 1".into()));
    }
    let s = regularize(s);
    let d = s.dim();

    // Closed forms: unpenalized MLE, and the all-diagonal optimum when every
    // off-diagonal covariance is inside the penalty band.
    if lambda == 0.0 {
        let theta = s.inverse_pd()?;
        return finish(&s, theta, lambda, 0, opts.tol);
    }
    let inside_band = (0..d).all(|i| (0..d).all(|j| i == j || s.get(i, j).abs() <= lambda));
    if inside_band {
        let diag: Vec<f64> = (0..d).map(|i| 1.0 / s.get(i, i)).collect();
        return finish(&s, SymMatrix::from_diagonal(&diag), lambda, 0, opts.tol);
    }

    let sm = s.as_matrix();
    let mut rho = 1.0;
    let mut z: DMatrix<f64> = match warm {
        Some(w) if w.dim() == d && w.is_positive_definite() => w.as_matrix().clone(),
        _ => DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 / sm[(i, i)] } else { 0.0 }),
    };
    // Scaled dual consistent with z being a fixed point of the log-det step.
    let z_inv = SymMatrix::symmetrize(&z).inverse_pd()?;
    let mut u: DMatrix<f64> = (z_inv.as_matrix() - sm) / rho;
    let mut x = z.clone();
    let mut last_kkt = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        // X-step: argmin tr(SX) − ln det X + ρ/2 ‖X − Z + U‖².
        let target = SymMatrix::symmetrize(&((&z - &u) * rho - sm));
        let eig = target.eigen();
        let q = &eig.eigenvectors;
        let scaled: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| (l + (l * l + 4.0 * rho).sqrt()) / (2.0 * rho))
            .collect();
        let mut qd = q.clone();
        for (c, &v) in scaled.iter().enumerate() {
            qd.column_mut(c).scale_mut(v);
        }
        x = SymMatrix::symmetrize(&(&qd * q.transpose())).into_matrix();

        // Z-step: soft-threshold the off-diagonal, keep the diagonal.
        let z_old = z.clone();
        let v = &x + &u;
        let kappa = lambda / rho;
        z = DMatrix::from_fn(d, d, |i, j| if i == j { v[(i, i)] } else { soft(v[(i, j)], kappa) });
        z = SymMatrix::symmetrize(&z).into_matrix();

        u += &x - &z;

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_old).norm();

        let zs = SymMatrix::symmetrize(&z);
        if let Ok(k) = kkt_residual(&s, &zs, lambda) {
            last_kkt = k;
            if k <= opts.tol {
                return finish(&s, zs, lambda, iter, opts.tol);
            }
        }

        if primal > 10.0 * dual {
            rho *= 2.0;
            u /= 2.0;
        } else if dual > 10.0 * primal {
            rho /= 2.0;
            u *= 2.0;
        }
    }

    let zs = SymMatrix::symmetrize(&z);
    let last = if zs.is_positive_definite() { zs } else { SymMatrix::symmetrize(&x) };
    Err(TagmError::GlassoNotConverged {
        iterations: opts.max_iter,
        residual: last_kkt,
        last: Box::new(last),
    })
}

fn soft(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

fn regularize(s: &SymMatrix) -> SymMatrix {
    if s.min_eigenvalue() < RIDGE_TRIGGER {
        s.add_ridge(RIDGE_EPS)
    } else {
        s.clone()
    }
}

fn finish(s: &SymMatrix, theta: SymMatrix, lambda: f64, iterations: usize, tol: f64) -> Result<GlassoSolution> {
    let kkt = kkt_residual(s, &theta, lambda)?;
    let objective = glasso_objective(s, &theta, lambda)?;
    if kkt > tol {
        return Err(TagmError::GlassoNotConverged {
            iterations,
            residual: kkt,
            last: Box::new(theta),
        });
    }
    Ok(GlassoSolution {
        theta,
        objective,
        iterations,
        kkt_residual: kkt,
    })
}

/// `tr(SΘ) − ln det Θ + λ‖Θ‖_{1,od}`.
pub fn glasso_objective(s: &SymMatrix, theta: &SymMatrix, lambda: f64) -> Result<f64> {
    Ok(s.trace_product(theta) - theta.log_det_pd()? + lambda * theta.off_diag_l1())
}

/// Max-norm violation of the stationarity condition `S − Θ⁻¹ + λG = 0`,
/// with `G` the best-fitting subgradient of the off-diagonal ℓ1 norm.
pub fn kkt_residual(s: &SymMatrix, theta: &SymMatrix, lambda: f64) -> Result<f64> {
    if s.dim() != theta.dim() {
        return Err(TagmError::InvalidInput("dimension mismatch".into()));
    }
    let w = theta.inverse_pd()?;
    let d = s.dim();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let r = s.get(i, j) - w.get(i, j);
            let t = theta.get(i, j);
            let v = if i == j {
                r.abs()
            } else if t > 0.0 {
                (r + lambda).abs()
            } else if t < 0.0 {
                (r - lambda).abs()
            } else {
                (r.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}
