//! Online TAGM: a batch fit followed by one-observation updates of running
//! sufficient statistics, with an optional sliding window.
//!
//! The backward variables of the newest step are unknown, so they are taken
//! equal across states. Under that approximation the posterior of the newest
//! state is the filtered distribution, and the pairwise posterior of the last
//! move is `α̂_T,j A_jk b_k` normalized.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::fit::{fit_em, FitConfig, FitResult};
use crate::glasso::GlassoOptions;
use crate::hmm::{log_emission, precision_update, predict_from_state, weighted_moments, EMPTY_STATE_MASS};
use crate::linalg::SymMatrix;
use crate::model::{argmax, ModelParams, ObservationSequence};

/// Weighted mean and scatter of one state, kept in Welford form so that
/// contributions can be added and removed stably.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub mean: DVector<f64>,
    /// `Σ w (x − mean)(x − mean)ᵀ`.
    pub scatter: DMatrix<f64>,
}

impl Moments {
    fn zero(d: usize) -> Self {
        Self {
            mass: 0.0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        }
    }

    fn add(&mut self, w: f64, x: &DVector<f64>) {
        if w == 0.0 {
            return;
        }
        let mass = self.mass + w;
        let delta = x - &self.mean;
        let mean = &self.mean + &delta * (w / mass);
        self.scatter += (&delta * (x - &mean).transpose()) * w;
        self.mass = mass;
        self.mean = mean;
    }

    fn remove(&mut self, w: f64, x: &DVector<f64>) {
        if w == 0.0 {
            return;
        }
        let mass = self.mass - w;
        if mass <= 0.0 {
            *self = Self::zero(self.mean.len());
            return;
        }
        let mean = (&self.mean * self.mass - x * w) / mass;
        self.scatter -= ((x - &mean) * (x - &self.mean).transpose()) * w;
        self.mass = mass;
        self.mean = mean;
    }

    fn covariance(&self) -> SymMatrix {
        SymMatrix::symmetrize(&(&self.scatter / self.mass))
    }
}

/// Running sums behind the online parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub moments: Vec<Moments>,
    /// `Σ ξ(z_{n−1,j}, z_{n,k})`.
    pub trans_mass: DMatrix<f64>,
    /// `Σ γ(z_{n−1,j})` over every step that has a successor.
    pub trans_denom: DVector<f64>,
}

impl SuffStats {
    fn zero(k: usize, d: usize) -> Self {
        Self {
            moments: vec![Moments::zero(d); k],
            trans_mass: DMatrix::zeros(k, k),
            trans_denom: DVector::zeros(k),
        }
    }

    fn add(&mut self, rec: &StepRecord) {
        for (k, m) in self.moments.iter_mut().enumerate() {
            m.add(rec.gamma[k], &rec.x);
        }
        if let Some(xi) = &rec.xi {
            self.trans_mass += xi;
            for j in 0..xi.nrows() {
                self.trans_denom[j] += xi.row(j).sum();
            }
        }
    }

    fn remove(&mut self, rec: &StepRecord) {
        for (k, m) in self.moments.iter_mut().enumerate() {
            m.remove(rec.gamma[k], &rec.x);
        }
        if let Some(xi) = &rec.xi {
            self.trans_mass -= xi;
            for j in 0..xi.nrows() {
                self.trans_denom[j] -= xi.row(j).sum();
            }
            self.trans_mass.iter_mut().for_each(|v| *v = v.max(0.0));
            self.trans_denom.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    /// `A_jk = Σξ_jk / Σγ_j`; rows without mass keep `fallback`.
    pub fn transitions(&self, fallback: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.trans_mass.nrows();
        let mut a = fallback.clone();
        for j in 0..k {
            let denom: f64 = self.trans_mass.row(j).sum();
            if denom > 0.0 {
                for s in 0..k {
                    a[(j, s)] = self.trans_mass[(j, s)] / denom;
                }
            }
        }
        a
    }
}

/// One step's contribution: its state posterior, the pairwise posterior of
/// the move into it, and the observation.
#[derive(Debug, Clone, PartialEq)]
struct StepRecord {
    gamma: DVector<f64>,
    xi: Option<DMatrix<f64>>,
    x: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StreamMode {
    Inc,
    Slide { window: usize },
}

/// Output of one online update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Number of observations seen, counting this one.
    pub t: usize,
    pub gamma: Vec<f64>,
    pub label: usize,
    /// Forecast of the next observation.
    pub prediction: Vec<f64>,
    /// Whether the precisions were re-estimated at this step.
    pub refit: bool,
}

#[derive(Debug, Clone)]
pub struct IncState {
    pub t: usize,
    pub params: ModelParams,
    pub stats: SuffStats,
    pub last_alpha_hat: DVector<f64>,
    pub last_beta_approx: DVector<f64>,
    lambda: f64,
    opts: GlassoOptions,
    mode: StreamMode,
    refit_stride: usize,
    updates: usize,
    window: Option<(VecDeque<StepRecord>, SuffStats)>,
}

impl IncState {
    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn refit_stride(&self) -> usize {
        self.refit_stride
    }

    /// Reconstructs `A` from the statistics currently driving the parameters.
    pub fn reconstructed_transitions(&self) -> DMatrix<f64> {
        self.active_stats().transitions(&self.params.trans)
    }

    fn active_stats(&self) -> &SuffStats {
        match &self.window {
            Some((buf, w)) if self.windowed(buf) => w,
            _ => &self.stats,
        }
    }

    fn windowed(&self, buf: &VecDeque<StepRecord>) -> bool {
        match self.mode {
            StreamMode::Slide { window } => self.t > window && buf.len() == window,
            StreamMode::Inc => false,
        }
    }
}

/// Fits the batch and seeds the running statistics from its posteriors.
/// Returns the state together with the batch fit.
pub fn inc_init(
    batch: &ObservationSequence,
    cfg: &FitConfig,
    mode: StreamMode,
    refit_stride: usize,
) -> Result<(IncState, FitResult)> {
    let fit = fit_em(batch, cfg)?;
    let state = inc_from_fit(batch, &fit, cfg, mode, refit_stride)?;
    Ok((state, fit))
}

/// Seeds online statistics from an existing fit of `batch`.
pub fn inc_from_fit(
    batch: &ObservationSequence,
    fit: &FitResult,
    cfg: &FitConfig,
    mode: StreamMode,
    refit_stride: usize,
) -> Result<IncState> {
    if refit_stride == 0 {
        return Err(TagmError::Config("refit stride must be >= 1".into()));
    }
    if let StreamMode::Slide { window: 0 } = mode {
        return Err(TagmError::Config("window must be >= 1".into()));
    }
    let params = fit.params.clone();
    let post = &fit.posteriors;
    let (n, k, d) = (batch.n_obs(), params.n_states(), batch.dim());
    if post.n_obs() != n {
        return Err(TagmError::InvalidInput("fit does not belong to this batch".into()));
    }

    // Emission sums are centred on the fitted means so that the running
    // estimates start exactly at the batch parameters.
    let mut moments = Vec::with_capacity(k);
    for s in 0..k {
        let w: Vec<f64> = post.gamma.column(s).iter().copied().collect();
        let (mass, _, _) = weighted_moments(batch.data(), &w);
        let mean = params.mean(s);
        let mut scatter = DMatrix::zeros(d, d);
        for t in 0..n {
            if w[t] != 0.0 {
                let c = batch.row(t) - &mean;
                scatter += (&c * c.transpose()) * w[t];
            }
        }
        moments.push(Moments { mass, mean, scatter });
    }
    // Transition sums are scaled so their ratio reproduces the fitted A.
    let mut trans_denom = DVector::zeros(k);
    for t in 0..n.saturating_sub(1) {
        for s in 0..k {
            trans_denom[s] += post.gamma[(t, s)];
        }
    }
    let mut trans_mass = DMatrix::zeros(k, k);
    for j in 0..k {
        for s in 0..k {
            trans_mass[(j, s)] = params.trans[(j, s)] * trans_denom[j];
        }
    }
    let stats = SuffStats {
        moments,
        trans_mass,
        trans_denom,
    };

    let window = match mode {
        StreamMode::Inc => None,
        StreamMode::Slide { window } => {
            let mut buf = VecDeque::with_capacity(window + 1);
            let mut sums = SuffStats::zero(k, d);
            for t in n.saturating_sub(window)..n {
                let rec = StepRecord {
                    gamma: post.gamma.row(t).transpose(),
                    xi: (t > 0).then(|| post.xi[t - 1].clone()),
                    x: batch.row(t),
                };
                sums.add(&rec);
                buf.push_back(rec);
            }
            Some((buf, sums))
        }
    };

    let last_alpha_hat = post.last_gamma().transpose();
    Ok(IncState {
        t: n,
        last_beta_approx: DVector::from_element(k, 1.0 / k as f64),
        params,
        stats,
        last_alpha_hat,
        lambda: cfg.lambda,
        opts: cfg.glasso_options(),
        mode,
        refit_stride,
        updates: 0,
        window,
    })
}

/// Consumes one observation. Plain online mode grows the statistics over
/// the whole history; sliding mode drives the parameters from the last
/// `window` steps once that much history exists.
pub fn update(state: &mut IncState, x_new: &DVector<f64>) -> Result<UpdateRecord> {
    let (k, d) = (state.params.n_states(), state.params.dim());
    if x_new.len() != d {
        return Err(TagmError::InvalidInput(format!("expected {d} values, got {}", x_new.len())));
    }
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(TagmError::InvalidInput("observation contains non-finite values".into()));
    }

    let log_b: Vec<f64> = (0..k)
        .map(|s| log_emission(x_new, &state.params.mean(s), &state.params.precisions[s]))
        .collect::<Result<_>>()?;
    let shift = log_b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let b: Vec<f64> = log_b.iter().map(|v| (v - shift).exp()).collect();

    let a = &state.params.trans;
    let mut xi = DMatrix::from_fn(k, k, |j, s| state.last_alpha_hat[j] * a[(j, s)] * b[s]);
    let total = xi.sum();
    if !(total > f64::MIN_POSITIVE) || !total.is_finite() {
        return Err(TagmError::DegenerateEmission { step: state.t });
    }
    xi /= total;
    let gamma = DVector::from_fn(k, |s, _| xi.column(s).sum());
    let beta = DVector::from_fn(k, |j, _| (0..k).map(|s| a[(j, s)] * b[s]).sum::<f64>());
    let beta_total = beta.sum();

    let rec = StepRecord {
        gamma: gamma.clone(),
        xi: Some(xi),
        x: x_new.clone(),
    };
    state.stats.add(&rec);
    if let (StreamMode::Slide { window }, Some((buf, sums))) = (state.mode, state.window.as_mut()) {
        sums.add(&rec);
        buf.push_back(rec);
        while buf.len() > window {
            let old = buf.pop_front().expect("buffer is non-empty");
            sums.remove(&old);
        }
    }
    state.t += 1;
    state.updates += 1;

    let refit = state.updates.is_multiple_of(state.refit_stride);
    let stats = state.active_stats().clone();
    let mut params = state.params.clone();
    params.trans = stats.transitions(&state.params.trans);
    for (s, m) in stats.moments.iter().enumerate() {
        if !(m.mass >= EMPTY_STATE_MASS) {
            continue;
        }
        params.means.set_row(s, &m.mean.transpose());
        if refit {
            params.precisions[s] = precision_update(
                &m.covariance(),
                m.mass,
                state.lambda,
                state.opts,
                Some(&state.params.precisions[s]),
            )?;
        }
    }
    state.params = params;
    state.last_alpha_hat = gamma.clone();
    if beta_total > 0.0 {
        state.last_beta_approx = beta / beta_total;
    }

    let prediction = predict_from_state(&state.params, &gamma);
    Ok(UpdateRecord {
        t: state.t,
        label: argmax(gamma.iter().copied()),
        gamma: gamma.iter().copied().collect(),
        prediction: prediction.iter().copied().collect(),
        refit,
    })
}

/// Batch labels from the smoothed posteriors followed by online labels for
/// every streamed observation.
pub fn inc_labels(
    x: &ObservationSequence,
    batch_len: usize,
    cfg: &FitConfig,
    mode: StreamMode,
    refit_stride: usize,
) -> Result<Vec<usize>> {
    let batch = x.slice(0, batch_len)?;
    let (mut state, fit) = inc_init(&batch, cfg, mode, refit_stride)?;
    let mut labels = fit.labels;
    for t in batch_len..x.n_obs() {
        labels.push(update(&mut state, &x.row(t))?.label);
    }
    Ok(labels)
}
