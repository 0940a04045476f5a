//! Probability, loss, and gradient primitives.
//!
//! Every softmax and logarithm path goes through max-subtraction so that
//! large logits never overflow. Probabilities are stored exactly as
//! computed; the only clamping happens inside `ln` when a caller hands in a
//! probability vector rather than logits.

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` accepted when constructing a [`ProbVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Floor applied to probabilities inside logarithms only.
pub const LOG_FLOOR: f64 = 1e-12;

/// Unnormalized class scores `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "probability {i} is outside [0, 1] ({})",
                values[i]
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Ground-truth class, the implied vector has a single 1 at `class_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OneHotLabel(pub usize);

impl OneHotLabel {
    pub fn class_index(self) -> usize {
        self.0
    }

    pub fn to_vec(self, n_classes: usize) -> Vec<f64> {
        let mut y = vec![0.0; n_classes];
        y[self.0] = 1.0;
        y
    }

    fn check(self, n_classes: usize) -> Result<()> {
        if self.0 >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {n_classes} classes",
                self.0
            )));
        }
        Ok(())
    }
}

/// Derivative of a scalar loss with respect to each logit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// `z / tau - max(z / tau)`, the shifted logits both softmax and log-softmax use.
fn shifted(z: &LogitVector, tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.as_slice().iter().map(|v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scaled.into_iter().map(|v| v - max).collect()
}

/// Tempered softmax `exp(z_i/τ) / Σ exp(z_j/τ)`.
pub fn softmax(z: &LogitVector, tau: f64) -> Result<ProbVector> {
    check_tau(tau)?;
    let exps: Vec<f64> = shifted(z, tau).into_iter().map(f64::exp).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// `ln softmax(z/τ)` via log-sum-exp.
pub fn log_softmax(z: &LogitVector, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let shifted = shifted(z, tau);
    let lse = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    Ok(shifted.into_iter().map(|v| v - lse).collect())
}

/// `Σ t_i ln(t_i / s_i)` for an arbitrary non-negative target `t`, with
/// `0 · ln(0/·) = 0`. `t` need not sum to one.
pub(crate) fn kl_against_log_probs(target: &[f64], log_s: &[f64]) -> f64 {
    target
        .iter()
        .zip(log_s)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, ls)| t * (t.ln() - ls))
        .sum()
}

/// Forward KL divergence `KL(t ‖ s) = Σ t_i ln(t_i / s_i)`.
pub fn kl_divergence(t: &ProbVector, s: &ProbVector) -> Result<f64> {
    if t.len() != s.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: target has {} classes, prediction has {}",
            t.len(),
            s.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&ti, &si)) in t.as_slice().iter().zip(s.as_slice()).enumerate() {
        if ti == 0.0 {
            continue;
        }
        if si == 0.0 {
            return Err(Error::DivergenceInfinite(format!(
                "class {i} has target mass {ti} but zero predicted probability"
            )));
        }
        total += ti * (ti.ln() - si.max(LOG_FLOOR).ln());
    }
    Ok(total)
}

/// `−ln s_c` for the true class `c`.
pub fn cross_entropy(y: OneHotLabel, s: &ProbVector) -> Result<f64> {
    y.check(s.len())?;
    let sc = s.as_slice()[y.0];
    if sc == 0.0 {
        return Err(Error::DivergenceInfinite(format!(
            "true class {} has zero predicted probability",
            y.0
        )));
    }
    Ok(-sc.max(LOG_FLOOR).ln())
}

/// Cross-entropy of `softmax(z/τ)` computed straight from the logits.
pub fn cross_entropy_from_logits(y: OneHotLabel, z: &LogitVector, tau: f64) -> Result<f64> {
    y.check(z.len())?;
    Ok(-log_softmax(z, tau)?[y.0])
}

/// `∂ CE(y, softmax(z/τ)) / ∂z = (s − onehot(y)) / τ`.
///
/// At the true class this is `(s_c − 1)/τ`, elsewhere `s_i/τ`.
pub fn ce_softmax_gradient(z: &LogitVector, y: OneHotLabel, tau: f64) -> Result<GradientVector> {
    y.check(z.len())?;
    let s = softmax(z, tau)?;
    let mut g: Vec<f64> = s.0.iter().map(|si| si / tau).collect();
    g[y.0] = (s.0[y.0] - 1.0) / tau;
    Ok(GradientVector(g))
}

/// `∂ KL(t ‖ softmax(z/τ)) / ∂z = (s − t) / τ`.
pub fn kl_softmax_gradient(t: &ProbVector, z: &LogitVector, tau: f64) -> Result<GradientVector> {
    if t.len() != z.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: target has {} classes, logits have {}",
            t.len(),
            z.len()
        )));
    }
    target_kl_gradient(t.as_slice(), z, tau)
}

/// Gradient of `Σ t_i ln(t_i / s_i)` for a non-negative target of any mass
/// `m = Σ t`: `(m·s − t) / τ`. Reduces to [`kl_softmax_gradient`] on the simplex.
pub(crate) fn target_kl_gradient(
    target: &[f64],
    z: &LogitVector,
    tau: f64,
) -> Result<GradientVector> {
    let s = softmax(z, tau)?;
    let mass: f64 = target.iter().sum();
    Ok(GradientVector(
        s.0.iter()
            .zip(target)
            .map(|(si, ti)| (mass * si - ti) / tau)
            .collect(),
    ))
}

/// Central-difference estimate `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Result<GradientVector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {h}"
        )));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::OracleFailure(format!(
                "non-finite evaluation around coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(GradientVector(grad))
}
