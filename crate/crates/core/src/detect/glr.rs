use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::GaussianModel;

use super::Detector;

/// Window-limited GLR-CuSum for a one-sided mean shift `N(θ, σ²)`, `θ > μ₀`.
///
/// For a segment with centered sum `S` over `L` samples the supremum over the
/// family is `max(0, S)² / (2 σ² L)`; the statistic is the maximum over all
/// segments that end at the current time and fit in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct GlrWindowState {
    pre: GaussianModel,
    window: VecDeque<f64>,
    capacity: usize,
    time: u64,
}

impl GlrWindowState {
    pub fn new(pre: GaussianModel, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("GLR window must hold at least one sample"));
        }
        Ok(Self {
            pre,
            window: VecDeque::with_capacity(capacity),
            capacity,
            time: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, x: f64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(x);
        self.time += 1;
    }

    pub fn statistic(&self) -> Result<f64> {
        if self.window.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        Ok(glr_window_stat(
            self.window.iter().rev().copied(),
            &self.pre,
        ))
    }
}

/// GLR statistic over segments ending at the newest sample; `newest_first`
/// yields the window from the most recent observation backwards.
pub fn glr_window_stat(newest_first: impl Iterator<Item = f64>, pre: &GaussianModel) -> f64 {
    let mu0 = pre.mean();
    let two_var = 2.0 * pre.variance();
    let mut sum = 0.0;
    let mut best = 0.0f64;
    for (len, x) in newest_first.enumerate() {
        sum += x - mu0;
        if sum > 0.0 {
            best = best.max(sum * sum / (two_var * (len + 1) as f64));
        }
    }
    best
}

impl Detector for GlrWindowState {
    fn observe(&mut self, x: f64) -> Option<f64> {
        self.push(x);
        Some(glr_window_stat(self.window.iter().rev().copied(), &self.pre))
    }

    fn time(&self) -> u64 {
        self.time
    }

    fn reset(&mut self) {
        self.window.clear();
        self.time = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(xs: &[f64]) -> GlrWindowState {
        let mut s = GlrWindowState::new(GaussianModel::standard(), 10).unwrap();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    #[test]
    fn examples() {
        assert_abs_diff_eq!(state(&[1.0, 1.0]).statistic().unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(state(&[-0.5, -2.0, -0.1]).statistic().unwrap(), 0.0);
        assert_abs_diff_eq!(state(&[1.0]).statistic().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn empty_window_is_an_error() {
        assert_eq!(
            state(&[]).statistic(),
            Err(Error::InsufficientSamples { needed: 1, got: 0 })
        );
    }

    #[test]
    fn window_drops_oldest() {
        let mut s = GlrWindowState::new(GaussianModel::standard(), 2).unwrap();
        for x in [10.0, -1.0, -1.0] {
            s.observe(x);
        }
        assert_eq!(s.statistic().unwrap(), 0.0);
        assert_eq!(s.time(), 3);
    }
}
