//! Temperature softmax and the sparse-noisy (sn) backward rule.
//!
//! The forward pass is an ordinary softmax at temperature `t`. The sn
//! backward pass adds a second Jacobian-vector product evaluated on the same
//! logits at the smoother temperature `s * t`:
//!
//! ```text
//! dl/dA = J(beta_t)/t * g + J(beta_st)/(s t) * g,   J(b) = diag(b) - b b^T
//! ```
//!
//! Once `beta_t` saturates to a one-hot vector the first term vanishes while
//! the second still carries gradient, which lets saturated architecture
//! parameters keep moving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// Upper bound on the scaling factor produced by [`ScalePolicy::StConst`].
pub const MAX_SCALE: f64 = 1e6;

/// Largest `|a| / t` for which [`softmax_t`] is guaranteed not to overflow.
pub const MAX_SCALED_LOGIT: f64 = 700.0;

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be finite and > 0, got {t}"
        )));
    }
    Ok(())
}

/// `softmax(A / t)`, stabilized by subtracting `max(A / t)`.
pub fn softmax_t(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty logit vector"));
    }
    if let Some(bad) = logits.iter().find(|a| !a.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {bad}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|a| a / t).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Dense Jacobian `(diag(beta) - beta beta^T) / t`.
///
/// The diagonal is formed as `beta_i * sum_{j != i} beta_j` so that a
/// nearly one-hot `beta` keeps its relative precision.
pub fn softmax_jacobian(beta: &[f64], t: f64) -> Result<Matrix> {
    check_temperature(t)?;
    let m = beta.len();
    let mut jac = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            jac[(i, j)] = if i == j {
                let rest: f64 = beta
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, b)| b)
                    .sum();
                beta[i] * rest / t
            } else {
                -beta[i] * beta[j] / t
            };
        }
    }
    Ok(jac)
}

/// Jacobian-vector product of the temperature softmax without forming the
/// matrix. The Jacobian is symmetric, so this is also the vector-Jacobian
/// product used in backpropagation.
///
/// Computed as `beta_i * sum_j beta_j (g_i - g_j) / t`, which avoids the
/// cancellation in `g_i - beta . g` when one entry of `beta` is close to 1.
pub fn softmax_jvp(beta: &[f64], t: f64, upstream: &[f64]) -> Vec<f64> {
    beta.iter()
        .zip(upstream)
        .map(|(bi, gi)| {
            let centred: f64 = beta
                .iter()
                .zip(upstream)
                .map(|(bj, gj)| bj * (gi - gj))
                .sum();
            bi * centred / t
        })
        .collect()
}

/// Forward state of one sn-softmax evaluation.
///
/// `beta` is the only value downstream computation should consume;
/// `beta_noisy` is cached for the backward pass. A distribution with
/// `s == 1` carries no noise term and backpropagates like a plain softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperedDistribution {
    pub beta: Vec<f64>,
    pub t: f64,
    pub beta_noisy: Vec<f64>,
    pub s: f64,
}

impl TemperedDistribution {
    /// A plain softmax distribution (no noise term).
    pub fn plain(logits: &[f64], t: f64) -> Result<Self> {
        let beta = softmax_t(logits, t)?;
        Ok(Self {
            beta_noisy: beta.clone(),
            beta,
            t,
            s: 1.0,
        })
    }

    /// A distribution whose backward pass is `J_t g`, built directly from a
    /// probability vector (used for one-hot genotype evaluation).
    pub fn from_beta(beta: Vec<f64>, t: f64) -> Self {
        Self {
            beta_noisy: beta.clone(),
            beta,
            t,
            s: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn noise_active(&self) -> bool {
        self.s > 1.0
    }

    /// `J(beta_t)/t * g`
    pub fn plain_term(&self, upstream: &[f64]) -> Vec<f64> {
        softmax_jvp(&self.beta, self.t, upstream)
    }

    /// `J(beta_st)/(s t) * g`
    pub fn noise_term(&self, upstream: &[f64]) -> Vec<f64> {
        softmax_jvp(&self.beta_noisy, self.s * self.t, upstream)
    }
}

/// Algorithm-1 feedforward: `beta = softmax(A/t)` plus the cached smoother
/// `softmax(A/(s t))`.
pub fn sn_forward(logits: &[f64], t: f64, s: f64) -> Result<TemperedDistribution> {
    if !(s.is_finite() && s > 1.0) {
        return Err(Error::invalid(format!(
            "sn-softmax needs a scaling factor s > 1, got {s}"
        )));
    }
    let beta = softmax_t(logits, t)?;
    let beta_noisy = softmax_t(logits, s * t)?;
    Ok(TemperedDistribution {
        beta,
        t,
        beta_noisy,
        s,
    })
}

/// sn backward: `(J_t + J_st) g`. Falls back to the plain term when the
/// distribution carries no noise branch.
pub fn sn_backward(dist: &TemperedDistribution, upstream: &[f64]) -> Result<Vec<f64>> {
    sn_backward_weighted(dist, upstream, 1.0)
}

/// `J_t g + noise_weight * J_st g`. A zero weight reproduces the plain
/// softmax backward exactly.
pub fn sn_backward_weighted(
    dist: &TemperedDistribution,
    upstream: &[f64],
    noise_weight: f64,
) -> Result<Vec<f64>> {
    if upstream.len() != dist.len() {
        return Err(Error::invalid(format!(
            "upstream gradient has length {}, distribution has {}",
            upstream.len(),
            dist.len()
        )));
    }
    let mut grad = dist.plain_term(upstream);
    if dist.noise_active() && noise_weight != 0.0 {
        let noise = dist.noise_term(upstream);
        for (g, n) in grad.iter_mut().zip(&noise) {
            *g += noise_weight * n;
        }
    }
    Ok(grad)
}

/// How the backward temperature `s * t` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePolicy {
    /// Constant `s`.
    Fixed(f64),
    /// Constant product `s * t = c`, i.e. `s = c / t`, clamped to [`MAX_SCALE`].
    StConst(f64),
}

impl ScalePolicy {
    pub fn scale_at(&self, t: f64) -> f64 {
        match *self {
            ScalePolicy::Fixed(s) => s,
            ScalePolicy::StConst(c) => (c / t).min(MAX_SCALE),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ScalePolicy::Fixed(s) => format!("s{s}"),
            ScalePolicy::StConst(c) => format!("st{c}"),
        }
    }
}

/// Which softmax the supernet uses for its architecture distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxMode {
    Plain,
    Sn(ScalePolicy),
}

impl SoftmaxMode {
    /// Forward distribution at temperature `t`. Under [`ScalePolicy::StConst`]
    /// a temperature at or above `c` gives `s <= 1`; the noise branch is then
    /// inactive and the distribution behaves as plain softmax.
    pub fn distribution(&self, logits: &[f64], t: f64) -> Result<TemperedDistribution> {
        match self {
            SoftmaxMode::Plain => TemperedDistribution::plain(logits, t),
            SoftmaxMode::Sn(policy) => {
                check_temperature(t)?;
                let s = policy.scale_at(t);
                if s > 1.0 {
                    sn_forward(logits, t, s)
                } else {
                    TemperedDistribution::plain(logits, t)
                }
            }
        }
    }
}

/// One row of the gradient-norm probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub t: f64,
    pub plain_norm: f64,
    pub sn_norm: f64,
}

/// Fixed unit upstream vector used by the probe: a centered ramp, which is
/// orthogonal to the all-ones direction every softmax Jacobian annihilates.
pub fn probe_direction(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let centre = (m as f64 - 1.0) / 2.0;
    let ramp: Vec<f64> = (0..m).map(|i| i as f64 - centre).collect();
    let n = norm(&ramp);
    ramp.into_iter().map(|r| r / n).collect()
}

/// Gradient norms of plain softmax and sn-softmax over a temperature grid.
pub fn grad_norm_probe(
    logits: &[f64],
    t_grid: &[f64],
    policy: ScalePolicy,
) -> Result<Vec<ProbeRow>> {
    if t_grid.is_empty() {
        return Err(Error::invalid("temperature grid is empty"));
    }
    let g = probe_direction(logits.len());
    t_grid
        .iter()
        .map(|&t| {
            let beta = softmax_t(logits, t)?;
            let plain = softmax_jvp(&beta, t, &g);
            let s = policy.scale_at(t);
            let sn = if s > 1.0 {
                let dist = sn_forward(logits, t, s)?;
                sn_backward(&dist, &g)?
            } else {
                plain.clone()
            };
            Ok(ProbeRow {
                t,
                plain_norm: norm(&plain),
                sn_norm: norm(&sn),
            })
        })
        .collect()
}

/// `n` log-spaced temperatures from `t_max` down to `t_min` inclusive.
pub fn log_grid(t_max: f64, t_min: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !(t_min > 0.0 && t_max > 0.0) || t_min > t_max {
        return Err(Error::invalid(format!(
            "bad temperature grid: {n} points from {t_max} to {t_min}"
        )));
    }
    if n == 1 {
        return Ok(vec![t_max]);
    }
    let (hi, lo) = (t_max.ln(), t_min.ln());
    Ok((0..n)
        .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
        .collect())
}
