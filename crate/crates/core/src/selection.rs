//! Hyper-parameter selection: BIC for the number of states and stability of
//! clusters (consensus dispersion) for the sparsity penalty.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::fit::{fit_em, FitConfig, FitResult};
use crate::init::derive_seed;
use crate::linalg::ZERO_THRESHOLD;
use crate::model::{ModelParams, ObservationSequence};

/// `(K−1) + K(K−1) + K·d + Σ_k ν(Θ_k)` where `ν(Θ)` counts the nonzero
/// entries on or below the diagonal.
pub fn count_free_params(params: &ModelParams) -> usize {
    let k = params.n_states();
    let d = params.dim();
    let graphs: usize = params
        .precisions
        .iter()
        .map(|t| t.count_nonzero_lower(ZERO_THRESHOLD))
        .sum();
    (k - 1) + k * (k - 1) + k * d + graphs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicReport {
    pub loglik: f64,
    pub n_free: usize,
    pub n_obs: usize,
    pub score: f64,
}

impl BicReport {
    pub fn new(loglik: f64, n_free: usize, n_obs: usize) -> Self {
        let score = bic_score(loglik, n_free, n_obs as f64);
        Self {
            loglik,
            n_free,
            n_obs,
            score,
        }
    }
}

/// `ln p(X) − (ν/2) ln N`.
pub fn bic_score(loglik: f64, n_free: usize, n_obs: f64) -> f64 {
    loglik - (n_free as f64 / 2.0) * n_obs.ln()
}

/// BIC of a fitted model on its data, using the unpenalized likelihood.
pub fn bic(fit: &FitResult, x: &ObservationSequence) -> BicReport {
    BicReport::new(fit.loglik(), fit.n_free_params, x.n_obs())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<BicReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Fits every K in `k_range` (deduplicated, ascending) and returns the one
/// with the highest BIC; ties go to the smaller K.
pub fn select_k(
    x: &ObservationSequence,
    k_range: &[usize],
    lambda: f64,
    cfg: &FitConfig,
) -> Result<(usize, Vec<KCandidate>)> {
    let ks: Vec<usize> = k_range.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ks.is_empty() {
        return Err(TagmError::Config("k_range is empty".into()));
    }
    let candidates: Vec<KCandidate> = ks
        .par_iter()
        .map(|&k| {
            let c = FitConfig {
                n_states: k,
                lambda,
                ..*cfg
            };
            match fit_em(x, &c) {
                Ok(fit) => KCandidate {
                    k,
                    seed: cfg.init.seed,
                    report: Some(bic(&fit, x)),
                    error: None,
                },
                Err(e) => KCandidate {
                    k,
                    seed: cfg.init.seed,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for c in &candidates {
        if let Some(r) = &c.report {
            if best.is_none_or(|(_, s)| r.score > s) {
                best = Some((c.k, r.score));
            }
        }
    }
    match best {
        Some((k, _)) => Ok((k, candidates)),
        None => Err(TagmError::FitFailed {
            restarts: candidates.len(),
            last: candidates.iter().rev().find_map(|c| c.error.clone()).unwrap_or_default(),
        }),
    }
}

/// `C_ij = 1` iff observations `i` and `j` carry the same label.
pub fn connectivity_matrix(labels: &[usize]) -> DMatrix<u8> {
    let n = labels.len();
    DMatrix::from_fn(n, n, |i, j| u8::from(labels[i] == labels[j]))
}

/// `ρ = (1/N²) Σ_ij 4 (C̄_ij − ½)²`.
pub fn dispersion(consensus: &DMatrix<f64>) -> f64 {
    let n = consensus.nrows() as f64;
    consensus.iter().map(|c| 4.0 * (c - 0.5) * (c - 0.5)).sum::<f64>() / (n * n)
}

#[derive(Debug, Clone)]
pub struct ConsensusReport {
    pub consensus: DMatrix<f64>,
    pub dispersion: f64,
    pub n_repeats: usize,
    pub seeds: Vec<u64>,
}

/// Mean of the connectivity matrices of several labelings.
pub fn consensus_matrix(labelings: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let n = labelings.first().map_or(0, Vec::len);
    if labelings.is_empty() || labelings.iter().any(|l| l.len() != n) {
        return Err(TagmError::InvalidInput("labelings must be nonempty and of equal length".into()));
    }
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for labels in labelings {
        for j in 0..n {
            for i in 0..n {
                if labels[i] == labels[j] {
                    acc[(i, j)] += 1.0;
                }
            }
        }
    }
    Ok(acc / labelings.len() as f64)
}

/// Repeats the fit with derived seeds and measures label agreement.
pub fn stability(
    x: &ObservationSequence,
    k: usize,
    lambda: f64,
    n_repeats: usize,
    cfg: &FitConfig,
) -> Result<ConsensusReport> {
    if n_repeats < 2 {
        return Err(TagmError::Stability("need at least 2 repeats".into()));
    }
    let seeds: Vec<u64> = (0..n_repeats).map(|r| derive_seed(cfg.init.seed, 1_000 + r as u64)).collect();
    let fits: Vec<(u64, Result<FitResult>)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = FitConfig {
                n_states: k,
                lambda,
                ..*cfg
            };
            c.init.seed = seed;
            (seed, fit_em(x, &c))
        })
        .collect();
    let mut used = Vec::new();
    let mut labelings = Vec::new();
    for (seed, fit) in fits {
        if let Ok(f) = fit {
            used.push(seed);
            labelings.push(f.labels);
        }
    }
    if labelings.len() < 2 {
        return Err(TagmError::Stability(format!(
            "only {} of {n_repeats} repeats succeeded",
            labelings.len()
        )));
    }
    let consensus = consensus_matrix(&labelings)?;
    Ok(ConsensusReport {
        dispersion: dispersion(&consensus),
        consensus,
        n_repeats: labelings.len(),
        seeds: used,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaCandidate {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<f64>,
    pub n_repeats: usize,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Picks the λ whose repeated fits agree most; ties go to the larger λ.
pub fn select_lambda(
    x: &ObservationSequence,
    k: usize,
    lambda_grid: &[f64],
    n_repeats: usize,
    cfg: &FitConfig,
) -> Result<(f64, Vec<LambdaCandidate>)> {
    if lambda_grid.is_empty() {
        return Err(TagmError::Config("lambda grid is empty".into()));
    }
    let candidates: Vec<LambdaCandidate> = lambda_grid
        .iter()
        .map(|&lambda| match stability(x, k, lambda, n_repeats, cfg) {
            Ok(r) => LambdaCandidate {
                lambda,
                dispersion: Some(r.dispersion),
                n_repeats: r.n_repeats,
                seeds: r.seeds,
                error: None,
            },
            Err(e) => LambdaCandidate {
                lambda,
                dispersion: None,
                n_repeats: 0,
                seeds: vec![],
                error: Some(e.to_string()),
            },
        })
        .collect();
    let scores: Vec<Option<f64>> = candidates.iter().map(|c| c.dispersion).collect();
    let chosen = pick_lambda(lambda_grid, &scores).ok_or_else(|| {
        TagmError::Stability("every lambda candidate failed".into())
    })?;
    Ok((chosen, candidates))
}

/// Maximizes the score; ties go to the larger λ.
pub fn pick_lambda(grid: &[f64], scores: &[Option<f64>]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, score) in grid.iter().zip(scores) {
        if let Some(s) = *score {
            best = match best {
                None => Some((lambda, s)),
                Some((bl, bs)) if s > bs || (s == bs && lambda > bl) => Some((lambda, s)),
                keep => keep,
            };
        }
    }
    best.map(|(l, _)| l)
}

/// Serialized selection outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub lambda_for_k: f64,
    pub k_candidates: Vec<KCandidate>,
    pub chosen_k: usize,
    pub lambda_candidates: Vec<LambdaCandidate>,
    pub chosen_lambda: f64,
}
