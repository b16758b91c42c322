//! Batch normalization over the batch dimension of an `n × K` activation matrix.
//!
//! The layer normalizes each channel as `γ·(x − μ)/√(σ² + ε) + β`. Which
//! `(μ, σ²)` is used is the caller's choice:
//!
//! * train regime: the statistics of the batch itself ([`batch_stats`]),
//! * frozen eval: the running globals held in [`BnState`],
//! * external: any statistics supplied by the caller (a per-domain bank, or
//!   the online estimates maintained during adaptation).
//!
//! Running globals are exponential moving averages of batch statistics, with
//! the variance stored Bessel-corrected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TRAIN_MOMENTUM: f64 = 0.1;

/// Per-channel mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl BnStats {
    /// Zero mean, unit variance.
    pub fn standard(channels: usize) -> Self {
        Self {
            mu: vec![0.0; channels],
            sigma2: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub(crate) fn check(&self, channels: usize, op: &'static str) -> Result<()> {
        if self.mu.len() != channels || self.sigma2.len() != channels {
            return Err(Error::dim(
                op,
                format!("{channels} channels"),
                format!("mu {} / sigma2 {}", self.mu.len(), self.sigma2.len()),
            ));
        }
        Ok(())
    }

    /// Euclidean norms of the mean and variance vectors.
    pub fn norms(&self) -> (f64, f64) {
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (n(&self.mu), n(&self.sigma2))
    }
}

/// Learned affine parameters plus running statistics of one BN layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running: BnStats,
    pub eps: f64,
    pub train_momentum: f64,
}

impl BnState {
    /// `γ = 1`, `β = 0`, `μ = 0`, `σ² = 1` with the default ε and momentum.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running: BnStats::standard(channels),
            eps: DEFAULT_EPS,
            train_momentum: DEFAULT_TRAIN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.channels();
        if self.beta.len() != k {
            return Err(Error::dim("BnState", k, self.beta.len()));
        }
        self.running.check(k, "BnState")?;
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.train_momentum > 0.0 && self.train_momentum <= 1.0) {
            return Err(Error::Config(format!(
                "train momentum must lie in (0, 1], got {}",
                self.train_momentum
            )));
        }
        if self.running.sigma2.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("running variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Values retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub input: Tensor,
    pub stats: BnStats,
    pub x_hat: Tensor,
    /// True when `stats` are the input batch's own statistics.
    pub batch_mode: bool,
}

/// Per-channel population mean and variance (no Bessel correction).
pub fn batch_stats(x: &Tensor) -> Result<BnStats> {
    let (n, k) = x.expect_matrix("batch_stats")?;
    if n == 0 {
        return Err(Error::Empty("batch_stats"));
    }
    let inv_n = 1.0 / n as f64;
    let mu: Vec<f64> = x.column_sums().into_iter().map(|s| s * inv_n).collect();
    let mut sigma2 = vec![0.0; k];
    for i in 0..n {
        for ((s, &v), &m) in sigma2.iter_mut().zip(x.row(i)).zip(&mu) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut sigma2 {
        *s *= inv_n;
    }
    Ok(BnStats { mu, sigma2 })
}

fn normalize_into(
    x: &Tensor,
    state: &BnState,
    stats: &BnStats,
    keep_hat: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let (n, k) = x.expect_matrix("bn_forward")?;
    if state.channels() != k {
        return Err(Error::dim(
            "bn_forward",
            format!("{} channels", state.channels()),
            k,
        ));
    }
    stats.check(k, "bn_forward")?;
    let inv_std: Vec<f64> = stats
        .sigma2
        .iter()
        .map(|&s| 1.0 / (s + state.eps).sqrt())
        .collect();
    let mut y = x.clone();
    let mut hat = keep_hat.then(|| x.clone());
    for i in 0..n {
        let row = y.row_mut(i);
        for j in 0..k {
            let h = (row[j] - stats.mu[j]) * inv_std[j];
            row[j] = state.gamma[j] * h + state.beta[j];
            if let Some(hat) = hat.as_mut() {
                hat.row_mut(i)[j] = h;
            }
        }
    }
    Ok((y, hat))
}

/// Normalizes `x` with the given statistics, without retaining a cache.
pub fn bn_normalize(x: &Tensor, state: &BnState, stats: &BnStats) -> Result<Tensor> {
    normalize_into(x, state, stats, false).map(|(y, _)| y)
}

/// Normalizes `x` with caller-chosen statistics and keeps a cache.
///
/// The cache is only usable by [`bn_backward`] if `stats` are the batch's own
/// statistics; prefer [`bn_forward_train`] for that case.
pub fn bn_forward(x: &Tensor, state: &BnState, stats: &BnStats) -> Result<(Tensor, BnCache)> {
    let (y, hat) = normalize_into(x, state, stats, true)?;
    let cache = BnCache {
        input: x.clone(),
        stats: stats.clone(),
        x_hat: hat.expect("hat requested"),
        batch_mode: false,
    };
    Ok((y, cache))
}

/// Train-regime forward: normalizes with the batch's own statistics.
pub fn bn_forward_train(x: &Tensor, state: &BnState) -> Result<(Tensor, BnCache)> {
    let stats = batch_stats(x)?;
    let (y, mut cache) = bn_forward(x, state, &stats)?;
    cache.batch_mode = true;
    Ok((y, cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub x: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Exact gradients of the batch-statistics normalization, with `μ_B` and
/// `σ²_B` treated as functions of the input.
pub fn bn_backward(cache: &BnCache, state: &BnState, grad_y: &Tensor) -> Result<BnGrads> {
    if !cache.batch_mode {
        return Err(Error::Batch(
            "backward requires a cache from a train-regime forward".into(),
        ));
    }
    cache.x_hat.expect_same_shape(grad_y, "bn_backward")?;
    let (n, k) = grad_y.expect_matrix("bn_backward")?;
    if state.channels() != k || cache.stats.channels() != k {
        return Err(Error::Batch(format!(
            "cache/state channel mismatch: state {}, cache {}, grad {k}",
            state.channels(),
            cache.stats.channels()
        )));
    }
    let beta = grad_y.column_sums();
    let mut gamma = vec![0.0; k];
    // Σ_i ∂L/∂x̂_i and Σ_i ∂L/∂x̂_i · x̂_i per channel
    let mut sum_dh = vec![0.0; k];
    let mut sum_dh_h = vec![0.0; k];
    for i in 0..n {
        let g = grad_y.row(i);
        let h = cache.x_hat.row(i);
        for j in 0..k {
            gamma[j] += g[j] * h[j];
            let dh = g[j] * state.gamma[j];
            sum_dh[j] += dh;
            sum_dh_h[j] += dh * h[j];
        }
    }
    let nf = n as f64;
    let mut x = grad_y.clone();
    for i in 0..n {
        let h = cache.x_hat.row(i).to_vec();
        let row = x.row_mut(i);
        for j in 0..k {
            let inv_std = 1.0 / (cache.stats.sigma2[j] + state.eps).sqrt();
            let dh = row[j] * state.gamma[j];
            row[j] = inv_std / nf * (nf * dh - sum_dh[j] - h[j] * sum_dh_h[j]);
        }
    }
    Ok(BnGrads { x, gamma, beta })
}

/// One step of the moving-average recursion shared by training and online adaptation:
///
/// `μ ← (1−w)·μ + w·μ̂`, `σ² ← (1−w)·σ² + w·n/(n−1)·σ̂²`,
///
/// where `σ̂²` is a population variance over `n` samples.
pub fn ema_update(global: &mut BnStats, local: &BnStats, n: usize, weight: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Batch(format!(
            "at least 2 samples are needed for a Bessel-corrected variance, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!(
            "update weight must lie in [0, 1], got {weight}"
        )));
    }
    local.check(global.channels(), "ema_update")?;
    let bessel = n as f64 / (n as f64 - 1.0);
    let keep = 1.0 - weight;
    for (m, &mb) in global.mu.iter_mut().zip(&local.mu) {
        *m = keep * *m + weight * mb;
    }
    for (s, &sb) in global.sigma2.iter_mut().zip(&local.sigma2) {
        *s = (keep * *s + weight * bessel * sb).max(0.0);
    }
    Ok(())
}

/// Folds a training batch's statistics into the layer's running globals.
pub fn update_running(
    state: &mut BnState,
    batch: &BnStats,
    n_b: usize,
    momentum: f64,
) -> Result<()> {
    ema_update(&mut state.running, batch, n_b, momentum)
}
