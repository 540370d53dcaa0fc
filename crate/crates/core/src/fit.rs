//! EM driver: restarts, stopping rule and the fit result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::glasso::GlassoOptions;
use crate::hmm::{forward_backward, m_step_from, penalty};
use crate::init::{derive_seed, initialize, InitConfig};
use crate::model::{EStepResult, ModelParams, ObservationSequence};
use crate::selection::{count_free_params, BicReport};

/// A drop in the penalized log-likelihood larger than this aborts the fit.
pub const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_states: usize,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_init: usize,
    pub init: InitConfig,
    #[serde(default)]
    pub glasso_tol: Option<f64>,
    #[serde(default)]
    pub glasso_max_iter: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_states: 2,
            lambda: 0.0,
            tol: 1e-4,
            max_iter: 200,
            n_init: 1,
            init: InitConfig::default(),
            glasso_tol: None,
            glasso_max_iter: None,
        }
    }
}

impl FitConfig {
    pub fn glasso_options(&self) -> GlassoOptions {
        let d = GlassoOptions::default();
        GlassoOptions {
            tol: self.glasso_tol.unwrap_or(d.tol),
            max_iter: self.glasso_max_iter.unwrap_or(d.max_iter),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(TagmError::Config("n_states must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TagmError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(TagmError::Config("tol must be > 0".into()));
        }
        if self.max_iter == 0 || self.n_init == 0 {
            return Err(TagmError::Config("max_iter and n_init must be >= 1".into()));
        }
        Ok(())
    }

    /// Seed of restart `r`.
    pub fn restart_seed(&self, r: usize) -> u64 {
        derive_seed(self.init.seed, r as u64)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Posteriors under `params`.
    pub posteriors: EStepResult,
    /// Penalized log-likelihood before each M-step, then at the final parameters.
    pub trace: Vec<f64>,
    pub labels: Vec<usize>,
    pub bic: f64,
    pub n_free_params: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Index and seed of the winning restart.
    pub restart: usize,
    pub seed: u64,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        self.posteriors.loglik
    }

    pub fn penalized_loglik(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }

    pub fn bic_report(&self) -> BicReport {
        BicReport::new(self.loglik(), self.n_free_params, self.labels.len())
    }
}

/// The pieces of EM that differ between plain TAGM and its extensions.
pub(crate) trait EmModel: Sync {
    fn m_step(
        &self,
        x: &ObservationSequence,
        e: &EStepResult,
        lambda: f64,
        opts: GlassoOptions,
        prev: &ModelParams,
    ) -> Result<ModelParams>;

    fn penalty(&self, params: &ModelParams, lambda: f64) -> f64;
}

pub(crate) struct Plain;

impl EmModel for Plain {
    fn m_step(
        &self,
        x: &ObservationSequence,
        e: &EStepResult,
        lambda: f64,
        opts: GlassoOptions,
        prev: &ModelParams,
    ) -> Result<ModelParams> {
        m_step_from(x, e, lambda, opts, Some(prev))
    }

    fn penalty(&self, params: &ModelParams, lambda: f64) -> f64 {
        penalty(&params.precisions, lambda)
    }
}

pub(crate) struct EmRun {
    pub params: ModelParams,
    pub posteriors: EStepResult,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn run_em<M: EmModel>(
    model: &M,
    x: &ObservationSequence,
    init: ModelParams,
    cfg: &FitConfig,
) -> Result<EmRun> {
    let opts = cfg.glasso_options();
    let mut params = init;
    let mut trace: Vec<f64> = Vec::new();
    for iter in 0..=cfg.max_iter {
        let e = forward_backward(&params, x)?;
        let value = e.loglik - model.penalty(&params, cfg.lambda);
        let mut converged = false;
        if let Some(&prev) = trace.last() {
            if value < prev - MONOTONE_SLACK {
                return Err(TagmError::NonMonotone {
                    iteration: iter,
                    drop: prev - value,
                });
            }
            converged = value - prev < cfg.tol;
        }
        trace.push(value);
        if converged || iter == cfg.max_iter {
            return Ok(EmRun {
                params,
                posteriors: e,
                trace,
                iterations: iter,
                converged,
            });
        }
        params = model.m_step(x, &e, cfg.lambda, opts, &params)?;
    }
    unreachable!("loop returns at iter == max_iter")
}

/// Runs `cfg.n_init` restarts in parallel and keeps the best final
/// penalized log-likelihood; ties go to the lowest restart index.
pub(crate) fn best_of_restarts<M, F>(
    model: &M,
    x: &ObservationSequence,
    cfg: &FitConfig,
    init: F,
) -> Result<(EmRun, usize, u64)>
where
    M: EmModel,
    F: Fn(u64) -> Result<ModelParams> + Sync,
{
    cfg.validate()?;
    if x.n_obs() < cfg.n_states {
        return Err(TagmError::Config(format!(
            "{} observations cannot fill {} states",
            x.n_obs(),
            cfg.n_states
        )));
    }
    let runs: Vec<Result<EmRun>> = (0..cfg.n_init)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.restart_seed(r);
            run_em(model, x, init(seed)?, cfg)
        })
        .collect();

    let mut best: Option<(EmRun, usize)> = None;
    let mut last_err = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some((b, _)) => run.trace.last() > b.trace.last(),
                };
                if better {
                    best = Some((run, r));
                }
            }
            Err(e @ TagmError::NonMonotone { .. }) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((run, r)) => Ok((run, r, cfg.restart_seed(r))),
        None => Err(TagmError::FitFailed {
            restarts: cfg.n_init,
            last: last_err.map(|e| e.to_string()).unwrap_or_default(),
        }),
    }
}

fn finish(run: EmRun, restart: usize, seed: u64) -> FitResult {
    let labels = run.posteriors.labels();
    let n_free_params = count_free_params(&run.params);
    let bic = BicReport::new(run.posteriors.loglik, n_free_params, labels.len()).score;
    FitResult {
        params: run.params,
        posteriors: run.posteriors,
        trace: run.trace,
        labels,
        bic,
        n_free_params,
        iterations: run.iterations,
        converged: run.converged,
        restart,
        seed,
    }
}

/// Fits a TAGM by penalized EM with `cfg.n_init` restarts.
pub fn fit_em(x: &ObservationSequence, cfg: &FitConfig) -> Result<FitResult> {
    let opts = cfg.glasso_options();
    let (run, r, seed) = best_of_restarts(&Plain, x, cfg, |seed| {
        let init = InitConfig { seed, ..cfg.init };
        initialize(x, cfg.n_states, cfg.lambda, &init, opts)
    })?;
    Ok(finish(run, r, seed))
}

/// Single EM run from the given starting parameters.
pub fn fit_from(x: &ObservationSequence, init: ModelParams, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    init.validate()?;
    let run = run_em(&Plain, x, init, cfg)?;
    Ok(finish(run, 0, cfg.init.seed))
}

/// Scores fixed parameters on `x` without running EM.
pub fn evaluate_params(x: &ObservationSequence, params: ModelParams, lambda: f64) -> Result<FitResult> {
    params.validate()?;
    let posteriors = forward_backward(&params, x)?;
    let value = posteriors.loglik - penalty(&params.precisions, lambda);
    let run = EmRun {
        params,
        posteriors,
        trace: vec![value],
        iterations: 0,
        converged: true,
    };
    Ok(finish(run, 0, 0))
}
