//! Focal loss on the true-class probability, `-alpha (1 - p)^gamma log p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    /// Cross-entropy as a special case.
    pub const CROSS_ENTROPY: FocalConfig = FocalConfig {
        alpha: 1.0,
        gamma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("focal alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }
}

pub(crate) fn loss_value(p_true: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p_true.clamp(PROB_FLOOR, 1.0);
    // `+ 0.0` turns the -0.0 produced at p == 1 into +0.0.
    alpha * (1.0 - p).powf(gamma) * (-p.ln()) + 0.0
}

/// d(loss)/d(p_true).
pub(crate) fn loss_grad(p_true: f64, alpha: f64, gamma: f64) -> f64 {
    if p_true < PROB_FLOOR {
        return 0.0;
    }
    let p = p_true.min(1.0);
    let q = 1.0 - p;
    let modulating_term = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    alpha * (modulating_term - q.powf(gamma) / p)
}

/// Focal loss of a probability vector `probs` for true class `target`.
pub fn focal_loss(probs: &[f64], target: usize, cfg: &FocalConfig) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        Error::Input(format!("class {target} out of range for {} probabilities", probs.len()))
    })?;
    Ok(loss_value(*p, cfg.alpha, cfg.gamma))
}

pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        Error::Input(format!("class {target} out of range for {} probabilities", probs.len()))
    })?;
    Ok(-p.clamp(PROB_FLOOR, 1.0).ln())
}
