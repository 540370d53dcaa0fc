//! Higher-order memory by expanding the state space: a composite state packs
//! the last ν base states as base-K digits, most recent first, which turns
//! the order-ν chain into a first-order HMM over K^ν states.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::fit::{best_of_restarts, EmModel, FitConfig, FitResult};
use crate::glasso::GlassoOptions;
use crate::hmm::{initial_distribution, normalize_rows, penalty, precision_update, weighted_moments, EMPTY_STATE_MASS};
use crate::init::{initialize, InitConfig};
use crate::linalg::{SymMatrix, ZERO_THRESHOLD};
use crate::model::{argmax, EStepResult, ModelParams, ObservationSequence};
use crate::selection::BicReport;

/// Largest composite state space accepted by [`mem_fit`].
pub const MAX_COMPOSITE_STATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemConfig {
    /// Order of the chain `r`.
    pub chain_order: usize,
    /// Number of past states the emission depends on, `m`.
    pub emission_order: usize,
}

impl MemConfig {
    pub fn new(chain_order: usize, emission_order: usize) -> Result<Self> {
        if chain_order == 0 || emission_order == 0 {
            return Err(TagmError::Config("chain and emission orders must be >= 1".into()));
        }
        Ok(Self {
            chain_order,
            emission_order,
        })
    }

    pub fn nu(&self) -> usize {
        self.chain_order.max(self.emission_order)
    }
}

fn composite_count(k: usize, nu: usize) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..nu {
        total = total
            .checked_mul(k)
            .filter(|&t| t <= MAX_COMPOSITE_STATES)
            .ok_or_else(|| TagmError::Config(format!("K^nu exceeds {MAX_COMPOSITE_STATES} composite states")))?;
    }
    Ok(total)
}

/// Digits `[z_n, z_{n-1}, ...]` to a code, most recent digit most significant.
pub fn encode_state(digits: &[usize], k: usize) -> Result<usize> {
    let mut code = 0usize;
    for &d in digits {
        if d >= k {
            return Err(TagmError::InvalidInput(format!("digit {d} out of range for K = {k}")));
        }
        code = code * k + d;
    }
    Ok(code)
}

pub fn decode_state(code: usize, k: usize, nu: usize) -> Result<Vec<usize>> {
    let total = k.checked_pow(nu as u32).ok_or_else(|| TagmError::InvalidInput("K^nu overflows".into()))?;
    if code >= total {
        return Err(TagmError::InvalidInput(format!("code {code} out of range for K^nu = {total}")));
    }
    let mut digits = vec![0; nu];
    let mut c = code;
    for d in digits.iter_mut().rev() {
        *d = c % k;
        c /= k;
    }
    Ok(digits)
}

/// A move `i → j` is possible only when `j` shifts `i`'s history by one:
/// dropping `i`'s oldest digit leaves `j`'s trailing `ν − 1` digits.
pub fn transition_allowed(i: usize, j: usize, k: usize, nu: usize) -> bool {
    let tail = k.pow(nu as u32 - 1);
    i / k == j % tail
}

/// The block of codes sharing `i`'s leading `order` digits.
pub fn index_set(i: usize, k: usize, nu: usize, order: usize) -> std::ops::Range<usize> {
    let block = k.pow((nu - order) as u32);
    let start = (i / block) * block;
    start..start + block
}

struct Mem {
    k: usize,
    nu: usize,
    cfg: MemConfig,
}

impl Mem {
    fn n_codes(&self) -> usize {
        self.k.pow(self.nu as u32)
    }

    /// Codes per emission group.
    fn emission_block(&self) -> usize {
        self.k.pow((self.nu - self.cfg.emission_order.min(self.nu)) as u32)
    }

    fn group_precisions<'a>(&self, params: &'a ModelParams) -> impl Iterator<Item = &'a SymMatrix> {
        params.precisions.iter().step_by(self.emission_block())
    }

    /// Expands base-state parameters onto the composite space.
    fn expand(&self, base: &ModelParams) -> ModelParams {
        let n = self.n_codes();
        let lead = self.k.pow(self.nu as u32 - 1);
        let pi = DVector::from_fn(n, |i, _| base.pi[i / lead] / lead as f64);
        let trans = DMatrix::from_fn(n, n, |i, j| {
            if transition_allowed(i, j, self.k, self.nu) {
                base.trans[(i / lead, j / lead)]
            } else {
                0.0
            }
        });
        let means = DMatrix::from_fn(n, base.dim(), |i, j| base.means[(i / lead, j)]);
        let precisions = (0..n).map(|i| base.precisions[i / lead].clone()).collect();
        ModelParams {
            pi,
            trans,
            means,
            precisions,
        }
    }

    fn free_params(&self, params: &ModelParams) -> usize {
        let (k, d) = (self.k, params.dim());
        let r = self.cfg.chain_order.min(self.nu);
        let groups = self.n_codes() / self.emission_block();
        let edges: usize = self.group_precisions(params).map(|t| t.count_nonzero_lower(ZERO_THRESHOLD)).sum();
        (self.n_codes() - 1) + k.pow(r as u32) * (k - 1) + groups * d + edges
    }
}

impl EmModel for Mem {
    fn m_step(
        &self,
        x: &ObservationSequence,
        e: &EStepResult,
        lambda: f64,
        opts: GlassoOptions,
        prev: &ModelParams,
    ) -> Result<ModelParams> {
        let n_codes = self.n_codes();
        let (n, d, k, nu) = (x.n_obs(), x.dim(), self.k, self.nu);
        let block = self.emission_block();

        let mut means = DMatrix::zeros(n_codes, d);
        let mut precisions = Vec::with_capacity(n_codes);
        for g in 0..n_codes / block {
            let w: Vec<f64> = (0..n)
                .map(|t| {
                    let mut acc = 0.0;
                    for c in g * block..(g + 1) * block {
                        acc += e.gamma[(t, c)];
                    }
                    acc
                })
                .collect();
            let mass: f64 = w.iter().sum();
            if !(mass >= EMPTY_STATE_MASS) {
                return Err(TagmError::EmptyState { state: g, mass });
            }
            let (mass, mean, cov) = weighted_moments(x.data(), &w);
            let theta = precision_update(&cov, mass, lambda, opts, Some(&prev.precisions[g * block]))?;
            for c in g * block..(g + 1) * block {
                means.set_row(c, &mean.transpose());
                precisions.push(theta.clone());
            }
        }

        // Transitions are shared across codes with the same leading r digits.
        // Entry (i, j) pools the mass of every code in that block moving to a
        // successor whose new leading digit is j's.
        let r = self.cfg.chain_order.min(nu);
        let lead = k.pow(nu as u32 - 1);
        let mut counts = DMatrix::zeros(n_codes, n_codes);
        for i in 0..n_codes {
            let members = index_set(i, k, nu, r);
            for j in 0..n_codes {
                if !transition_allowed(i, j, k, nu) {
                    continue;
                }
                let digit = j / lead;
                let mut total = 0.0;
                for m in &e.xi {
                    let mut acc = 0.0;
                    for c in members.clone() {
                        acc += m[(c, c / k + digit * lead)];
                    }
                    total += acc;
                }
                counts[(i, j)] = total;
            }
        }
        let trans = normalize_rows(&counts, Some(&prev.trans));
        Ok(ModelParams {
            pi: initial_distribution(&e.gamma),
            trans,
            means,
            precisions,
        })
    }

    fn penalty(&self, params: &ModelParams, lambda: f64) -> f64 {
        let groups: Vec<SymMatrix> = self.group_precisions(params).cloned().collect();
        penalty(&groups, lambda)
    }
}

/// Fits a TAGM whose chain has order `r` and whose emissions depend on the
/// last `m` states. Returned parameters live on the composite space; labels
/// are base states (the leading digit of the most probable composite state).
pub fn mem_fit(x: &ObservationSequence, cfg: &FitConfig, mem: MemConfig) -> Result<FitResult> {
    let nu = mem.nu();
    let k = cfg.n_states;
    composite_count(k, nu)?;
    let model = Mem { k, nu, cfg: mem };
    let opts = cfg.glasso_options();
    let (run, restart, seed) = best_of_restarts(&model, x, cfg, |seed| {
        let init = InitConfig { seed, ..cfg.init };
        Ok(model.expand(&initialize(x, k, cfg.lambda, &init, opts)?))
    })?;
    let lead = k.pow(nu as u32 - 1);
    let labels: Vec<usize> = run.posteriors.gamma.row_iter().map(|r| argmax(r.iter().copied()) / lead).collect();
    let n_free_params = model.free_params(&run.params);
    let bic = BicReport::new(run.posteriors.loglik, n_free_params, labels.len()).score;
    Ok(FitResult {
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
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_state(&[1, 0], 2).unwrap(), 2);
        assert_eq!(encode_state(&[2], 3).unwrap(), 2);
        assert!(encode_state(&[2, 0], 2).is_err());
        assert!(decode_state(4, 2, 2).is_err());
        for code in 0..16 {
            let digits = decode_state(code, 2, 4).unwrap();
            assert_eq!(encode_state(&digits, 2).unwrap(), code);
        }
    }

    #[test]
    fn first_order_allows_everything() {
        for i in 0..3 {
            for j in 0..3 {
                assert!(transition_allowed(i, j, 3, 1));
            }
        }
    }

    #[test]
    fn index_set_examples() {
        assert_eq!(index_set(0, 2, 2, 1), 0..2);
        assert_eq!(index_set(3, 2, 2, 2), 3..4);
        assert_eq!(index_set(5, 3, 2, 1), 3..6);
    }

    #[test]
    fn guard_rejects_huge_spaces() {
        assert!(composite_count(10, 4).is_ok());
        assert!(composite_count(10, 5).is_err());
    }
}
