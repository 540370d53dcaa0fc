//! Scaled forward-backward, the penalized M-step and one-step prediction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TagmError};
use crate::glasso::{glasso_objective, solve_glasso_warm, GlassoOptions};
use crate::linalg::SymMatrix;
use crate::model::{EStepResult, ModelParams, ObservationSequence};

/// Responsibility mass below which a state counts as empty.
pub const EMPTY_STATE_MASS: f64 = 1e-12;

/// `ln N(x | μ, Θ⁻¹)`.
pub fn log_emission(x: &DVector<f64>, mu: &DVector<f64>, theta: &SymMatrix) -> Result<f64> {
    let d = x.len();
    if mu.len() != d || theta.dim() != d {
        return Err(TagmError::InvalidInput("dimension mismatch in log_emission".into()));
    }
    let chol = theta
        .cholesky()
        .ok_or_else(|| TagmError::NotPositiveDefinite("emission precision".into()))?;
    let l = chol.l();
    let diff = x - mu;
    let y = l.transpose() * diff;
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * log_det - 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * y.norm_squared())
}

/// `N×K` matrix of `ln N(x_n | μ_k, Θ_k⁻¹)`.
pub fn log_emissions(params: &ModelParams, x: &ObservationSequence) -> Result<DMatrix<f64>> {
    let (n, d, k) = (x.n_obs(), x.dim(), params.n_states());
    if params.dim() != d {
        return Err(TagmError::InvalidInput(format!(
            "model dimension {} does not match data dimension {d}",
            params.dim()
        )));
    }
    let norm = -0.5 * d as f64 * (2.0 * PI).ln();
    let mut out = DMatrix::zeros(n, k);
    for s in 0..k {
        let chol = params.precisions[s]
            .cholesky()
            .ok_or_else(|| TagmError::NotPositiveDefinite(format!("precision of state {s}")))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut centered = x.data().clone();
        for (mut col, m) in centered.column_iter_mut().zip(params.means.row(s).iter()) {
            col.add_scalar_mut(-m);
        }
        let y = centered * l;
        for i in 0..n {
            out[(i, s)] = 0.5 * log_det + norm - 0.5 * y.row(i).norm_squared();
        }
    }
    Ok(out)
}

/// Emission likelihoods shifted per row by the row maximum, so the largest
/// entry of each row is exactly 1. Returns `(b, shift)`.
fn shifted_emissions(log_b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let shift: Vec<f64> = log_b.row_iter().map(|r| r.max()).collect();
    let b = DMatrix::from_fn(log_b.nrows(), log_b.ncols(), |i, j| (log_b[(i, j)] - shift[i]).exp());
    (b, shift)
}

pub(crate) struct ForwardPass {
    /// Scaled forward variables α̂; row `n` is `p(z_n | x_1..n)`.
    pub alpha: DMatrix<f64>,
    /// Scale factors of the shifted emissions.
    pub c: Vec<f64>,
    pub b: DMatrix<f64>,
    pub shift: Vec<f64>,
}

pub(crate) fn forward(params: &ModelParams, x: &ObservationSequence) -> Result<ForwardPass> {
    let log_b = log_emissions(params, x)?;
    let (b, shift) = shifted_emissions(&log_b);
    let (n, k) = (x.n_obs(), params.n_states());
    let a = &params.trans;
    let mut alpha = DMatrix::zeros(n, k);
    let mut c = vec![0.0; n];
    for t in 0..n {
        let mut total = 0.0;
        for s in 0..k {
            let prior = if t == 0 {
                params.pi[s]
            } else {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += alpha[(t - 1, j)] * a[(j, s)];
                }
                acc
            };
            let v = prior * b[(t, s)];
            alpha[(t, s)] = v;
            total += v;
        }
        if !(total > f64::MIN_POSITIVE) || !total.is_finite() {
            return Err(TagmError::DegenerateEmission { step: t });
        }
        for s in 0..k {
            alpha[(t, s)] /= total;
        }
        c[t] = total;
    }
    Ok(ForwardPass { alpha, c, b, shift })
}

/// Scaled forward-backward recursions.
pub fn forward_backward(params: &ModelParams, x: &ObservationSequence) -> Result<EStepResult> {
    let fw = forward(params, x)?;
    let (n, k) = (x.n_obs(), params.n_states());
    let a = &params.trans;
    let mut beta = DMatrix::from_element(n, k, 1.0);
    for t in (0..n.saturating_sub(1)).rev() {
        for j in 0..k {
            let mut acc = 0.0;
            for s in 0..k {
                acc += a[(j, s)] * fw.b[(t + 1, s)] * beta[(t + 1, s)];
            }
            beta[(t, j)] = acc / fw.c[t + 1];
        }
    }
    let gamma = fw.alpha.component_mul(&beta);
    let mut xi = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let m = DMatrix::from_fn(k, k, |j, s| {
            fw.alpha[(t - 1, j)] * a[(j, s)] * fw.b[(t, s)] * beta[(t, s)] / fw.c[t]
        });
        xi.push(m);
    }
    let log_scale = DVector::from_fn(n, |t, _| fw.c[t].ln() + fw.shift[t]);
    let loglik = log_scale.iter().sum();
    Ok(EStepResult {
        gamma,
        xi,
        log_scale,
        loglik,
    })
}

/// `(λ/2) Σ_k ‖Θ_k‖_{1,od}`.
pub fn penalty(precisions: &[SymMatrix], lambda: f64) -> f64 {
    0.5 * lambda * precisions.iter().map(SymMatrix::off_diag_l1).sum::<f64>()
}

pub fn penalized_loglik(params: &ModelParams, x: &ObservationSequence, lambda: f64) -> Result<f64> {
    Ok(forward_backward(params, x)?.loglik - penalty(&params.precisions, lambda))
}

/// Weighted mean and covariance of the rows of `x` about that mean.
/// Returns `(mass, mean, covariance)`.
pub(crate) fn weighted_moments(x: &DMatrix<f64>, w: &[f64]) -> (f64, DVector<f64>, SymMatrix) {
    let (n, d) = x.shape();
    let mut mass = 0.0;
    for &v in w {
        mass += v;
    }
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        if w[i] != 0.0 {
            mean.axpy(w[i], &x.row(i).transpose(), 1.0);
        }
    }
    mean /= mass;
    let mut centered = x.clone();
    for (mut col, m) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    let mut weighted = centered.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let cov = weighted.transpose() * centered / mass;
    (mass, mean, SymMatrix::symmetrize(&cov))
}

/// Normalizes accumulated transition mass row by row. Rows with no mass
/// fall back to `fallback` (or uniform).
pub(crate) fn normalize_rows(counts: &DMatrix<f64>, fallback: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let (r, c) = counts.shape();
    let mut out = DMatrix::zeros(r, c);
    for j in 0..r {
        let total: f64 = counts.row(j).iter().sum();
        if total > 0.0 {
            for s in 0..c {
                out[(j, s)] = counts[(j, s)] / total;
            }
        } else {
            for s in 0..c {
                out[(j, s)] = fallback.map_or(1.0 / c as f64, |f| f[(j, s)]);
            }
        }
    }
    out
}

/// Precision update for one state: graphical lasso at `λ / mass`, warm
/// started from `prev`. When `prev` scores better on the same subproblem it
/// is kept, which makes every M-step a non-decreasing step.
pub(crate) fn precision_update(
    cov: &SymMatrix,
    mass: f64,
    lambda: f64,
    opts: GlassoOptions,
    prev: Option<&SymMatrix>,
) -> Result<SymMatrix> {
    let scaled = lambda / mass;
    let theta = match solve_glasso_warm(cov, scaled, opts, prev) {
        Ok(sol) => sol.theta,
        Err(TagmError::GlassoNotConverged { last, .. }) if last.is_positive_definite() => *last,
        Err(e) => return Err(e),
    };
    if let Some(p) = prev {
        let new_obj = glasso_objective(cov, &theta, scaled)?;
        let old_obj = glasso_objective(cov, p, scaled)?;
        if old_obj < new_obj {
            return Ok(p.clone());
        }
    }
    Ok(theta)
}

pub(crate) fn initial_distribution(gamma: &DMatrix<f64>) -> DVector<f64> {
    let first = gamma.row(0);
    let total: f64 = first.iter().sum();
    DVector::from_fn(gamma.ncols(), |k, _| first[k] / total)
}

pub(crate) fn transition_counts(e: &EStepResult) -> DMatrix<f64> {
    let k = e.n_states();
    let mut counts = DMatrix::zeros(k, k);
    for m in &e.xi {
        counts += m;
    }
    counts
}

/// M-step: closed forms for π, A, μ and a graphical lasso per state.
pub fn m_step(x: &ObservationSequence, e: &EStepResult, lambda: f64, opts: GlassoOptions) -> Result<ModelParams> {
    m_step_from(x, e, lambda, opts, None)
}

pub(crate) fn m_step_from(
    x: &ObservationSequence,
    e: &EStepResult,
    lambda: f64,
    opts: GlassoOptions,
    prev: Option<&ModelParams>,
) -> Result<ModelParams> {
    if e.n_obs() != x.n_obs() {
        return Err(TagmError::InvalidInput("posteriors and data have different lengths".into()));
    }
    let k = e.n_states();
    let d = x.dim();
    let mut means = DMatrix::zeros(k, d);
    let mut precisions = Vec::with_capacity(k);
    for s in 0..k {
        let w: Vec<f64> = e.gamma.column(s).iter().copied().collect();
        let mass: f64 = w.iter().sum();
        if !(mass >= EMPTY_STATE_MASS) {
            return Err(TagmError::EmptyState { state: s, mass });
        }
        let (mass, mean, cov) = weighted_moments(x.data(), &w);
        means.set_row(s, &mean.transpose());
        let prev_theta = prev.map(|p| &p.precisions[s]);
        precisions.push(precision_update(&cov, mass, lambda, opts, prev_theta)?);
    }
    let pi = initial_distribution(&e.gamma);
    let trans = normalize_rows(&transition_counts(e), prev.map(|p| &p.trans));
    Ok(ModelParams {
        pi,
        trans,
        means,
        precisions,
    })
}

/// `x̂_{N+1} = Σ_k w_k μ_k` with `w = Aᵀ γ(z_N)`.
pub fn predict_next(params: &ModelParams, e: &EStepResult) -> DVector<f64> {
    let g = e.last_gamma().transpose();
    predict_from_state(params, &g)
}

pub(crate) fn predict_from_state(params: &ModelParams, state: &DVector<f64>) -> DVector<f64> {
    let w = params.trans.transpose() * state;
    params.means.transpose() * w
}

/// One-step-ahead predictions for every prefix: row `n` predicts `x_{n+1}`
/// from `x_1..x_n` using the filtered state distribution.
pub fn rolling_predictions(params: &ModelParams, x: &ObservationSequence) -> Result<DMatrix<f64>> {
    let fw = forward(params, x)?;
    let mut out = DMatrix::zeros(x.n_obs(), x.dim());
    for t in 0..x.n_obs() {
        let state = fw.alpha.row(t).transpose();
        out.set_row(t, &predict_from_state(params, &state).transpose());
    }
    Ok(out)
}
