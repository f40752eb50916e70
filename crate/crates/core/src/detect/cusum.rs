use crate::model::{Density, GaussianModel};

use super::Detector;

/// Page's CuSum with known pre- and post-change densities.
///
/// `W(n) = max(W(n−1) + Z_n, 0)`, which equals `max_{1≤k≤n+1} Σ_{i=k}^n Z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    pre: GaussianModel,
    post: GaussianModel,
    statistic: f64,
    time: u64,
}

impl CusumState {
    pub fn new(pre: GaussianModel, post: GaussianModel) -> Self {
        Self {
            pre,
            post,
            statistic: 0.0,
            time: 0,
        }
    }

    pub fn statistic(&self) -> f64 {
        self.statistic
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let z = self.post.log_density(x) - self.pre.log_density(x);
        self.statistic = (self.statistic + z).max(0.0);
        self.time += 1;
        self.statistic
    }
}

impl Detector for CusumState {
    fn observe(&mut self, x: f64) -> Option<f64> {
        Some(self.step(x))
    }

    fn time(&self) -> u64 {
        self.time
    }

    fn reset(&mut self) {
        self.statistic = 0.0;
        self.time = 0;
    }
}
