use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `b_α = |ln α| + ln(8 m_α)`.
pub fn threshold_from_alpha(alpha: f64, window: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if window == 0 {
        return Err(Error::domain("window must be >= 1"));
    }
    Ok(alpha.ln().abs() + (8.0 * window as f64).ln())
}

/// Threshold that keeps the LOO-CuSum false alarm rate at or below `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub alpha: f64,
    pub window: usize,
    pub value: f64,
}

impl ThresholdPolicy {
    pub fn new(alpha: f64, window: usize) -> Result<Self> {
        Ok(Self {
            alpha,
            window,
            value: threshold_from_alpha(alpha, window)?,
        })
    }
}

/// Window sizing `m_α ≥ f |ln α| / I_lb` with `f > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub f: f64,
    /// Lower bound on `D(p₁ ‖ p₀)` supplied by the user.
    pub kl_lower_bound: f64,
    pub alpha: f64,
}

impl WindowPolicy {
    pub fn size(&self) -> Result<usize> {
        window_from_alpha(self)
    }
}

/// Smallest window meeting the policy, and never below 2.
pub fn window_from_alpha(policy: &WindowPolicy) -> Result<usize> {
    check_alpha(policy.alpha)?;
    if !(policy.f > 1.0 && policy.f.is_finite()) {
        return Err(Error::domain(format!("f must be > 1, got {}", policy.f)));
    }
    if !(policy.kl_lower_bound > 0.0 && policy.kl_lower_bound.is_finite()) {
        return Err(Error::domain(format!(
            "KL lower bound must be > 0, got {}",
            policy.kl_lower_bound
        )));
    }
    let m = (policy.f * policy.alpha.ln().abs() / policy.kl_lower_bound).ceil();
    Ok((m as usize).max(2))
}
