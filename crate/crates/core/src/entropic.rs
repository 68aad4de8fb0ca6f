//! Entropic utility `μ^γ(X) = (1/γ) ln E[e^{γX}]` of finite distributions.
//!
//! Every exponential is taken after shifting by the extreme outcome on the
//! side that makes all exponents non-positive, so nothing overflows. Near
//! `γ = 0` the sum is accumulated through `expm1` and closed with `ln_1p`,
//! which keeps full relative precision down to subnormal products `γ·X`.

use crate::error::{Error, Result};

/// Below this value of `|γ|·span(X)` the entropic value and the mean agree
/// to far better than double precision, and the mean is returned.
pub const NEUTRAL_SCALE: f64 = 1e-280;

/// Distribution tolerance on the total weight.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// A finite discrete law: outcome values with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(outcomes: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let (values, weights): (Vec<f64>, Vec<f64>) = outcomes.into_iter().unzip();
        Self::from_parts(values, weights)
    }

    pub fn from_parts(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::Dimension {
                expected: values.len(),
                got: weights.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "distribution has no outcomes".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("outcome {v} is not finite")));
        }
        if let Some(w) = weights.iter().find(|w| w.is_nan() || **w < 0.0) {
            return Err(Error::InvalidArgument(format!("weight {w} is negative")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Ok(Self { values, weights })
    }

    pub fn point(value: f64) -> Self {
        Self {
            values: vec![value],
            weights: vec![1.0],
        }
    }

    /// Equal weight on each sample.
    pub fn empirical(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::from_parts(values, vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values, &self.weights)
    }

    /// Range of the outcomes that carry positive weight.
    pub fn span(&self) -> f64 {
        let (lo, hi) = support_range(&self.values, &self.weights);
        hi - lo
    }

    pub fn min(&self) -> f64 {
        support_range(&self.values, &self.weights).0
    }

    pub fn max(&self) -> f64 {
        support_range(&self.values, &self.weights).1
    }
}

/// `μ^γ(X)`; the mean at `γ = 0`.
pub fn entropic_value(dist: &FiniteDistribution, gamma: f64) -> f64 {
    entropic(&dist.values, &dist.weights, gamma)
}

/// Slice form of [`entropic_value`] used on the hot paths. Outcomes with
/// zero weight are ignored. Weights are used as given.
pub fn entropic(values: &[f64], weights: &[f64], gamma: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    if gamma == 0.0 {
        return mean(values, weights);
    }
    let (lo, hi) = support_range(values, weights);
    let spread = hi - lo;
    if spread == 0.0 {
        return lo;
    }
    if gamma.abs() * spread < NEUTRAL_SCALE {
        return mean(values, weights);
    }
    // γ (v - shift) <= 0 for every outcome.
    let shift = if gamma > 0.0 { hi } else { lo };
    let mut direct = 0.0;
    for (&v, &w) in values.iter().zip(weights) {
        if w > 0.0 {
            direct += w * (gamma * (v - shift)).exp();
        }
    }
    let log_mgf = if direct < 0.5 {
        direct.ln()
    } else {
        let mut excess = 0.0;
        for (&v, &w) in values.iter().zip(weights) {
            if w > 0.0 {
                excess += w * (gamma * (v - shift)).exp_m1();
            }
        }
        excess.ln_1p()
    };
    shift + log_mgf / gamma
}

/// `(μ^γ(X), E[X] + (|γ|/2)·span(X)²)`; the first never exceeds the second.
pub fn hoeffding_gap(dist: &FiniteDistribution, gamma: f64) -> Result<(f64, f64)> {
    if gamma == 0.0 {
        return Err(Error::ZeroGamma);
    }
    let lhs = entropic_value(dist, gamma);
    let s = dist.span();
    Ok((lhs, dist.mean() + 0.5 * gamma.abs() * s * s))
}

pub(crate) fn mean(values: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, w)| v * w)
        .sum()
}

fn support_range(values: &[f64], weights: &[f64]) -> (f64, f64) {
    values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        })
}
