//! Initialization: chain parameters from one of three schemes, emission
//! parameters from a hard clustering of the observations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::glasso::GlassoOptions;
use crate::hmm::{precision_update, weighted_moments};
use crate::model::{ModelParams, ObservationSequence};

const CLUSTER_RETRIES: u64 = 10;
const LLOYD_MAX_ITER: usize = 100;
const GMM_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    #[default]
    Uniform,
    RandomUniform,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterInit {
    #[default]
    Kmeans,
    Gmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InitConfig {
    pub chain_init: ChainInit,
    pub cluster_init: ClusterInit,
    pub seed: u64,
}

/// SplitMix64 finalizer over `(base, index)`; used to derive independent
/// seeds for restarts, repeats and retries.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws a probability vector from a Dirichlet with the given concentrations.
pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|g| g / total).collect()
    } else {
        // All gamma draws underflowed; only reachable with tiny concentrations.
        let i = rng.random_range(0..alpha.len());
        (0..alpha.len()).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
    }
}

fn probability_row<R: Rng + ?Sized>(k: usize, scheme: ChainInit, rng: &mut R) -> Vec<f64> {
    match scheme {
        ChainInit::Uniform => vec![1.0 / k as f64; k],
        ChainInit::RandomUniform => loop {
            let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            if row.iter().all(|&v| v > 0.0) {
                break row.iter().map(|v| v / total).collect();
            }
        },
        ChainInit::Dirichlet => sample_dirichlet(&vec![1.0; k], rng),
    }
}

/// π and A drawn per `scheme`.
pub fn init_chain<R: Rng + ?Sized>(k: usize, scheme: ChainInit, rng: &mut R) -> (DVector<f64>, DMatrix<f64>) {
    let pi = DVector::from_vec(probability_row(k, scheme, rng));
    let mut a = DMatrix::zeros(k, k);
    for j in 0..k {
        let row = probability_row(k, scheme, rng);
        for s in 0..k {
            a[(j, s)] = row[s];
        }
    }
    (pi, a)
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    x.row(i).iter().zip(c.row(k).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// k-means++ seeding.
fn plus_plus_centers<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut centers = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.set_row(0, &x.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &v) in dist.iter().enumerate() {
                if r < v {
                    idx = i;
                    break;
                }
                r -= v;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &x.row(pick));
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. `None` when a cluster empties.
pub fn kmeans<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Option<Vec<usize>> {
    let (n, d) = x.shape();
    let mut centers = plus_plus_centers(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = sq_dist(x, i, &centers, c);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += x.row(i);
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            let mut row = sums.row(c).clone_owned();
            row /= counts[c] as f64;
            centers.set_row(c, &row);
        }
        if !changed {
            break;
        }
    }
    Some(labels)
}

/// Diagonal-covariance Gaussian mixture fitted by EM; returns hard
/// assignments. `None` when some component ends with no points.
pub fn gmm_diag<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Option<Vec<usize>> {
    let (n, d) = x.shape();
    let mut means = plus_plus_centers(x, k, rng);
    let global_mean = x.row_mean();
    let mut global_var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let v = x[(i, j)] - global_mean[j];
            global_var[j] += v * v / n as f64;
        }
    }
    let floor = 1e-6;
    let mut vars = DMatrix::from_fn(k, d, |_, j| global_var[j].max(floor));
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = DMatrix::zeros(n, k);
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..GMM_MAX_ITER {
        let mut ll = 0.0;
        for i in 0..n {
            let mut logp = vec![0.0; k];
            for c in 0..k {
                let mut s = weights[c].ln();
                for j in 0..d {
                    let v = vars[(c, j)];
                    let diff = x[(i, j)] - means[(c, j)];
                    s -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + diff * diff / v);
                }
                logp[c] = s;
            }
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logp.iter().map(|l| (l - m).exp()).sum();
            ll += m + total.ln();
            for c in 0..k {
                resp[(i, c)] = (logp[c] - m).exp() / total;
            }
        }
        for c in 0..k {
            let mass: f64 = resp.column(c).sum();
            if mass < 1e-12 {
                return None;
            }
            weights[c] = mass / n as f64;
            for j in 0..d {
                let mut mu = 0.0;
                for i in 0..n {
                    mu += resp[(i, c)] * x[(i, j)];
                }
                mu /= mass;
                let mut var = 0.0;
                for i in 0..n {
                    let diff = x[(i, j)] - mu;
                    var += resp[(i, c)] * diff * diff;
                }
                means[(c, j)] = mu;
                vars[(c, j)] = (var / mass).max(floor);
            }
        }
        if (ll - prev_ll).abs() < 1e-8 * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    let labels: Vec<usize> = resp
        .row_iter()
        .map(|r| crate::model::argmax(r.iter().copied()))
        .collect();
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        None
    } else {
        Some(labels)
    }
}

/// Emission parameters from a hard labelling: per-cluster mean and
/// covariance, then a graphical lasso with the cluster size as mass.
pub fn params_from_labels(
    x: &ObservationSequence,
    labels: &[usize],
    k: usize,
    lambda: f64,
    opts: GlassoOptions,
) -> Result<(DMatrix<f64>, Vec<crate::linalg::SymMatrix>)> {
    let d = x.dim();
    let mut means = DMatrix::zeros(k, d);
    let mut precisions = Vec::with_capacity(k);
    for c in 0..k {
        let w: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
        let (mass, mean, cov) = weighted_moments(x.data(), &w);
        if mass < 1.0 {
            return Err(TagmError::EmptyState { state: c, mass });
        }
        means.set_row(c, &mean.transpose());
        precisions.push(precision_update(&cov, mass, lambda, opts, None)?);
    }
    Ok((means, precisions))
}

/// Builds starting parameters for EM.
pub fn initialize(
    x: &ObservationSequence,
    k: usize,
    lambda: f64,
    cfg: &InitConfig,
    opts: GlassoOptions,
) -> Result<ModelParams> {
    if k == 0 {
        return Err(TagmError::Config("number of states must be >= 1".into()));
    }
    if x.n_obs() < k {
        return Err(TagmError::Config(format!("{} observations cannot fill {k} states", x.n_obs())));
    }
    let mut rng = rng_from(cfg.seed);
    let (pi, trans) = init_chain(k, cfg.chain_init, &mut rng);

    let mut labels = None;
    for attempt in 0..=CLUSTER_RETRIES {
        let mut crng = rng_from(derive_seed(cfg.seed, attempt));
        labels = match cfg.cluster_init {
            ClusterInit::Kmeans => kmeans(x.data(), k, &mut crng),
            ClusterInit::Gmm => gmm_diag(x.data(), k, &mut crng),
        };
        if labels.is_some() {
            break;
        }
    }
    let labels = labels.ok_or(TagmError::EmptyState { state: 0, mass: 0.0 })?;
    let (means, precisions) = params_from_labels(x, &labels, k, lambda, opts)?;
    Ok(ModelParams {
        pi,
        trans,
        means,
        precisions,
    })
}
