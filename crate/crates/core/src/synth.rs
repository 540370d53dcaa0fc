//! Synthetic benchmark sequences: a Markov chain over K Gaussian graphical
//! models, optionally blending parameters while the chain moves between
//! states.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::init::{rng_from, sample_dirichlet};
use crate::linalg::{weighted_sum, SymMatrix};
use crate::model::{ModelJson, ModelParams, ObservationSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanMode {
    Normal,
    Uniform { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovMode {
    DegreeBounded { max_degree: usize },
    RandomSpd,
    StressedIdentity { edge_prob: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionMode {
    Sudden,
    FixedSmooth { steps: usize },
    RandomSmooth { lo: usize, hi: usize },
    RandomSmoothRandomWeights { lo: usize, hi: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_obs: usize,
    pub n_states: usize,
    pub dim: usize,
    pub mean_mode: MeanMode,
    pub cov_mode: CovMode,
    /// Dirichlet concentration on the self-transition.
    pub kappa: f64,
    pub transition_mode: TransitionMode,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TagmError::Config(m));
        if self.n_obs == 0 || self.n_states == 0 || self.dim == 0 {
            return bad("n_obs, n_states and dim must be >= 1".into());
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if let MeanMode::Uniform { a, b } = self.mean_mode {
            if !(a < b) {
                return bad(format!("uniform means need a < b, got a={a}, b={b}"));
            }
        }
        match self.cov_mode {
            CovMode::DegreeBounded { max_degree } if max_degree == 0 || max_degree >= self.dim => {
                return bad(format!("max_degree must satisfy 1 <= max_degree < d, got {max_degree}"));
            }
            CovMode::StressedIdentity { edge_prob } if !(0.0..=1.0).contains(&edge_prob) => {
                return bad(format!("edge_prob must be in [0, 1], got {edge_prob}"));
            }
            _ => {}
        }
        match self.transition_mode {
            TransitionMode::FixedSmooth { steps: 0 } => bad("smooth steps must be >= 1".into()),
            TransitionMode::RandomSmooth { lo, hi } | TransitionMode::RandomSmoothRandomWeights { lo, hi }
                if !(lo > 1 && hi > lo) =>
            {
                bad(format!("random smooth transitions need hi > lo > 1, got lo={lo}, hi={hi}"))
            }
            _ => Ok(()),
        }
    }
}

/// Generated sequence together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub x: ObservationSequence,
    pub labels: Vec<usize>,
    /// `N×K` mixing weights used at each step.
    pub weights: DMatrix<f64>,
    /// Uniform π, the generating A, μ_k and Θ_k.
    pub params: ModelParams,
    /// Σ_k = Θ_k⁻¹.
    pub covariances: Vec<SymMatrix>,
}

/// Ground truth as written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthJson {
    #[serde(flatten)]
    pub model: ModelJson,
    pub labels: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

impl SyntheticDataset {
    pub fn truth_json(&self) -> TruthJson {
        TruthJson {
            model: self.params.to_json(),
            labels: self.labels.clone(),
            weights: self.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

/// Row `k` is μ_k.
pub fn gen_means<R: Rng + ?Sized>(k: usize, d: usize, mode: MeanMode, rng: &mut R) -> DMatrix<f64> {
    match mode {
        MeanMode::Normal => DMatrix::from_fn(k, d, |_, _| rng.sample(StandardNormal)),
        MeanMode::Uniform { a, b } => DMatrix::from_fn(k, d, |_, _| rng.random_range(a..=b)),
    }
}

/// Unit diagonal with random edges of weight `0.98 / max_degree`.
///
/// Nodes are visited in order; each one picks neighbours uniformly among
/// nodes that still have spare degree, so no node ever exceeds `max_degree`
/// edges and every row's off-diagonal sum stays at or below 0.98.
pub fn gen_precision_degree_bounded<R: Rng + ?Sized>(d: usize, max_degree: usize, rng: &mut R) -> SymMatrix {
    let weight = 0.98 / max_degree as f64;
    let mut m = DMatrix::identity(d, d);
    let mut degree = vec![0usize; d];
    for i in 0..d {
        let need = max_degree.saturating_sub(degree[i]);
        if need == 0 {
            continue;
        }
        let candidates: Vec<usize> = (0..d)
            .filter(|&j| j != i && m[(i, j)] == 0.0 && degree[j] < max_degree)
            .collect();
        let take = need.min(candidates.len());
        for idx in sample(rng, candidates.len(), take).into_iter() {
            let j = candidates[idx];
            m[(i, j)] = weight;
            m[(j, i)] = weight;
            degree[i] += 1;
            degree[j] += 1;
        }
    }
    SymMatrix::new(m).expect("construction is symmetric")
}

/// `MᵀM + d·ε·I` with `M` standard normal and `ε = 1e-3`.
pub fn gen_precision_random_spd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SymMatrix {
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut p = m.transpose() * &m;
    for i in 0..d {
        p[(i, i)] += d as f64 * 1e-3;
    }
    SymMatrix::symmetrize(&p)
}

/// Identity plus random unit links; if that is indefinite the diagonal is
/// raised to `1 + degree` per row.
pub fn gen_precision_stressed<R: Rng + ?Sized>(d: usize, edge_prob: f64, rng: &mut R) -> SymMatrix {
    let mut m = DMatrix::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.random_bool(edge_prob) {
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
            }
        }
    }
    let s = SymMatrix::new(m.clone()).expect("construction is symmetric");
    if s.is_positive_definite() {
        return s;
    }
    for i in 0..d {
        let degree = (0..d).filter(|&j| j != i && m[(i, j)] != 0.0).count();
        m[(i, i)] = 1.0 + degree as f64;
    }
    SymMatrix::new(m).expect("construction is symmetric")
}

/// Row `i` ~ Dirichlet with concentration κ on entry `i` and 1 elsewhere.
pub fn gen_transition_matrix<R: Rng + ?Sized>(k: usize, kappa: f64, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let alpha: Vec<f64> = (0..k).map(|j| if j == i { kappa } else { 1.0 }).collect();
        let row = sample_dirichlet(&alpha, rng);
        for j in 0..k {
            a[(i, j)] = row[j];
        }
    }
    a
}

fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding left u slightly above the total; take the last state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Weight schedule while the chain moves between states.
struct Blend {
    current: Vec<f64>,
    start: Vec<f64>,
    target: usize,
    step: usize,
    steps: usize,
}

impl Blend {
    fn new(k: usize, state: usize) -> Self {
        let mut current = vec![0.0; k];
        current[state] = 1.0;
        Self {
            start: current.clone(),
            current,
            target: state,
            step: 0,
            steps: 0,
        }
    }

    fn in_transition(&self) -> bool {
        self.step < self.steps
    }

    /// A different state was drawn: interpolate from the current blend.
    fn retarget(&mut self, target: usize, steps: usize) {
        self.start = self.current.clone();
        self.target = target;
        self.step = 0;
        self.steps = steps;
    }

    fn advance(&mut self) {
        if !self.in_transition() {
            return;
        }
        self.step += 1;
        if self.step == self.steps {
            self.current.iter_mut().for_each(|v| *v = 0.0);
            self.current[self.target] = 1.0;
            return;
        }
        let f = self.step as f64 / self.steps as f64;
        for (k, (c, s)) in self.current.iter_mut().zip(&self.start).enumerate() {
            let onehot = if k == self.target { 1.0 } else { 0.0 };
            *c = (1.0 - f) * s + f * onehot;
        }
    }
}

/// Argmax with ties resolved toward `destination`, then the lowest index.
fn blend_label(weights: &[f64], destination: usize) -> usize {
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if weights[destination] == max {
        destination
    } else {
        weights.iter().position(|&w| w == max).unwrap_or(destination)
    }
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let (n, k, d) = (cfg.n_obs, cfg.n_states, cfg.dim);
    let mut rng = rng_from(cfg.seed);

    let means = gen_means(k, d, cfg.mean_mode, &mut rng);
    let precisions: Vec<SymMatrix> = (0..k)
        .map(|_| match cfg.cov_mode {
            CovMode::DegreeBounded { max_degree } => gen_precision_degree_bounded(d, max_degree, &mut rng),
            CovMode::RandomSpd => gen_precision_random_spd(d, &mut rng),
            CovMode::StressedIdentity { edge_prob } => gen_precision_stressed(d, edge_prob, &mut rng),
        })
        .collect();
    let covariances = precisions.iter().map(SymMatrix::inverse_pd).collect::<Result<Vec<_>>>()?;
    let trans = gen_transition_matrix(k, cfg.kappa, &mut rng);
    let pi = DVector::from_element(k, 1.0 / k as f64);

    let state_chol: Vec<Cholesky<f64, Dyn>> = covariances
        .iter()
        .map(|c| c.cholesky().ok_or_else(|| TagmError::NotPositiveDefinite("covariance".into())))
        .collect::<Result<_>>()?;

    let mut data = DMatrix::zeros(n, d);
    let mut weights = DMatrix::zeros(n, k);
    let mut labels = Vec::with_capacity(n);
    let mut state = draw_categorical(pi.as_slice(), &mut rng);
    let mut blend = Blend::new(k, state);
    for t in 0..n {
        if t > 0 {
            let row: Vec<f64> = trans.row(state).iter().copied().collect();
            let next = draw_categorical(&row, &mut rng);
            if next != state {
                let steps = match cfg.transition_mode {
                    TransitionMode::Sudden => 1,
                    TransitionMode::FixedSmooth { steps } => steps,
                    TransitionMode::RandomSmooth { lo, hi } | TransitionMode::RandomSmoothRandomWeights { lo, hi } => {
                        rng.random_range(lo..=hi)
                    }
                };
                blend.retarget(next, steps);
            }
            state = next;
            blend.advance();
        }

        let w: Vec<f64> = match cfg.transition_mode {
            TransitionMode::RandomSmoothRandomWeights { .. } if blend.in_transition() => {
                let active: Vec<usize> = (0..k).filter(|&i| blend.current[i] > 0.0).collect();
                let draw = sample_dirichlet(&vec![1.0; active.len()], &mut rng);
                let mut w = vec![0.0; k];
                for (i, v) in active.iter().zip(draw) {
                    w[*i] = v;
                }
                w
            }
            _ => blend.current.clone(),
        };
        labels.push(blend_label(&w, blend.target));

        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sample = match w.iter().position(|&v| v == 1.0) {
            Some(s) => means.row(s).transpose() + state_chol[s].l() * z,
            None => {
                let mu = means.transpose() * DVector::from_row_slice(&w);
                let cov = weighted_sum(&w, &covariances);
                let chol = cov
                    .cholesky()
                    .ok_or_else(|| TagmError::NotPositiveDefinite("blended covariance".into()))?;
                mu + chol.l() * z
            }
        };
        data.set_row(t, &sample.transpose());
        for (s, v) in w.iter().enumerate() {
            weights[(t, s)] = *v;
        }
    }

    Ok(SyntheticDataset {
        x: ObservationSequence::new(data)?,
        labels,
        weights,
        params: ModelParams::new(pi, trans, means, precisions)?,
        covariances,
    })
}
