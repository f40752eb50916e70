//! Probability models and reproducible sample streams.
//!
//! Time is 1-based: a change point `ν` means `X_ν` is the first sample drawn
//! from the post-change density.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A scalar density with a known closed form.
pub trait Density {
    fn log_density(&self, x: f64) -> f64;

    fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

/// Univariate normal distribution `N(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    mean: f64,
    variance: f64,
}

impl GaussianModel {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::domain(format!("mean must be finite, got {mean}")));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::domain(format!(
                "variance must be finite and > 0, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Same variance, mean moved by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            mean: self.mean + shift,
            variance: self.variance,
        }
    }

    /// Maps a standard normal variate onto this distribution.
    #[inline]
    pub fn from_standard(&self, z: f64) -> f64 {
        self.mean + self.std_dev() * z
    }
}

impl Density for GaussianModel {
    #[inline]
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * d * d / self.variance - 0.5 * self.variance.ln() - HALF_LN_2PI
    }

    #[inline]
    fn density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        (-0.5 * d * d / self.variance).exp() / (2.0 * PI * self.variance).sqrt()
    }
}

/// First post-change index, or no change at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangePoint {
    At(u64),
    Never,
}

impl ChangePoint {
    pub fn at(nu: u64) -> Result<Self> {
        if nu == 0 {
            return Err(Error::domain("change point is 1-based; got 0"));
        }
        Ok(ChangePoint::At(nu))
    }

    /// Whether sample `index` (1-based) is drawn after the change.
    #[inline]
    pub fn is_post_change(&self, index: u64) -> bool {
        match *self {
            ChangePoint::At(nu) => index >= nu,
            ChangePoint::Never => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangePointModel {
    pub pre: GaussianModel,
    pub post: GaussianModel,
    pub change_point: ChangePoint,
}

impl ChangePointModel {
    pub fn new(pre: GaussianModel, post: GaussianModel, change_point: ChangePoint) -> Self {
        Self {
            pre,
            post,
            change_point,
        }
    }

    /// The same pre/post pair with a different change point.
    pub fn with_change_point(&self, change_point: ChangePoint) -> Self {
        Self {
            change_point,
            ..*self
        }
    }

    /// Density governing sample `index` (1-based).
    #[inline]
    pub fn density_at(&self, index: u64) -> &GaussianModel {
        if self.change_point.is_post_change(index) {
            &self.post
        } else {
            &self.pre
        }
    }
}

/// `Z = log p₁(x) − log p₀(x)`.
pub fn log_likelihood_ratio(model: &ChangePointModel, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("observation must be finite, got {x}")));
    }
    Ok(model.post.log_density(x) - model.pre.log_density(x))
}

/// Exact `D(p ‖ q)` for two univariate Gaussians.
pub fn kl_divergence(p: &GaussianModel, q: &GaussianModel) -> f64 {
    let ratio = p.variance / q.variance;
    let d = p.mean - q.mean;
    let kl = 0.5 * (ratio - 1.0 - ratio.ln() + d * d / q.variance);
    // ratio - 1 - ln(ratio) can round to a tiny negative value
    kl.max(0.0)
}

/// Random-number lanes keep independent experiments off each other's streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    FalseAlarm,
    Delay,
    Density,
    Lai,
    Custom(u64),
}

impl Lane {
    fn tag(self) -> u64 {
        match self {
            Lane::FalseAlarm => 0x0f_a1,
            Lane::Delay => 0xde_1a,
            Lane::Density => 0xd3_75,
            Lane::Lai => 0x1a_10,
            Lane::Custom(t) => t.wrapping_add(0x1_0000),
        }
    }
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for trial `trial` of an experiment seeded by `master_seed`.
///
/// The stream depends only on `(master_seed, lane, trial)`, never on which
/// thread runs the trial.
pub fn trial_rng(master_seed: u64, lane: Lane, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(master_seed ^ mix64(lane.tag())));
    rng.set_stream(trial);
    rng
}

/// Draws observations from a [`ChangePointModel`] one at a time.
///
/// Each draw consumes exactly one standard normal variate, so two streams with
/// the same seed but different change points share common random numbers.
#[derive(Debug, Clone)]
pub struct SampleStream {
    seed: u64,
    model: ChangePointModel,
    cursor: u64,
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(seed: u64, model: ChangePointModel) -> Self {
        Self::from_rng(seed, model, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Stream for one Monte Carlo trial.
    pub fn for_trial(master_seed: u64, lane: Lane, trial: u64, model: ChangePointModel) -> Self {
        Self::from_rng(master_seed, model, trial_rng(master_seed, lane, trial))
    }

    fn from_rng(seed: u64, model: ChangePointModel, rng: ChaCha8Rng) -> Self {
        Self {
            seed,
            model,
            cursor: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &ChangePointModel {
        &self.model
    }

    /// Number of samples drawn so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn draw(&mut self) -> f64 {
        self.cursor += 1;
        let z: f64 = self.rng.sample(StandardNormal);
        self.model.density_at(self.cursor).from_standard(z)
    }
}

impl Iterator for SampleStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.draw())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shift_model(nu: ChangePoint) -> ChangePointModel {
        ChangePointModel::new(
            GaussianModel::standard(),
            GaussianModel::new(0.5, 1.0).unwrap(),
            nu,
        )
    }

    #[test]
    fn llr_matches_closed_form() {
        let m = shift_model(ChangePoint::Never);
        assert_abs_diff_eq!(log_likelihood_ratio(&m, 1.0).unwrap(), 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(log_likelihood_ratio(&m, 0.25).unwrap(), 0.0, epsilon = 1e-12);
        for x in [-3.0, -0.7, 0.0, 2.2, 9.0] {
            assert_abs_diff_eq!(
                log_likelihood_ratio(&m, x).unwrap(),
                0.5 * x - 0.125,
                epsilon = 1e-12
            );
            // numeric route through the densities
            let numeric = (m.post.density(x) / m.pre.density(x)).ln();
            assert_abs_diff_eq!(log_likelihood_ratio(&m, x).unwrap(), numeric, epsilon = 1e-10);
        }
    }

    #[test]
    fn llr_identical_densities_is_zero() {
        let g = GaussianModel::standard();
        let m = ChangePointModel::new(g, g, ChangePoint::Never);
        for x in [-4.0, 0.0, 1.5] {
            assert_eq!(log_likelihood_ratio(&m, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn llr_rejects_non_finite() {
        let m = shift_model(ChangePoint::Never);
        assert!(matches!(log_likelihood_ratio(&m, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(
            log_likelihood_ratio(&m, f64::INFINITY),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gaussian_rejects_bad_variance() {
        assert!(GaussianModel::new(0.0, 0.0).is_err());
        assert!(GaussianModel::new(0.0, -1.0).is_err());
        assert!(GaussianModel::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let n0 = GaussianModel::standard();
        assert_abs_diff_eq!(
            kl_divergence(&GaussianModel::new(0.5, 1.0).unwrap(), &n0),
            0.125,
            epsilon = 1e-15
        );
        assert_eq!(kl_divergence(&n0, &n0), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&GaussianModel::new(1.0, 1.0).unwrap(), &n0),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kl_matches_quadrature() {
        let p = GaussianModel::new(0.5, 1.0).unwrap();
        let q = GaussianModel::standard();
        // midpoint rule on p log(p/q) over ±12 sd
        let n = 200_000;
        let (lo, hi) = (p.mean() - 12.0, p.mean() + 12.0);
        let dx = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * dx;
                p.density(x) * (p.log_density(x) - q.log_density(x)) * dx
            })
            .sum();
        assert_abs_diff_eq!(integral, kl_divergence(&p, &q), epsilon = 1e-9);
    }

    #[test]
    fn stream_respects_change_point() {
        // pre and post are far apart so the source of each draw is obvious
        let pre = GaussianModel::new(-1000.0, 1.0).unwrap();
        let post = GaussianModel::new(1000.0, 1.0).unwrap();
        let mut s = SampleStream::new(3, ChangePointModel::new(pre, post, ChangePoint::At(5)));
        let xs: Vec<f64> = (0..10).map(|_| s.draw()).collect();
        assert!(xs[..4].iter().all(|&x| x < 0.0));
        assert!(xs[4..].iter().all(|&x| x > 0.0));
        assert_eq!(s.cursor(), 10);

        let mut first = SampleStream::new(3, ChangePointModel::new(pre, post, ChangePoint::At(1)));
        assert!((0..100).all(|_| first.draw() > 0.0));
        let mut never = SampleStream::new(3, ChangePointModel::new(pre, post, ChangePoint::Never));
        assert!((0..100).all(|_| never.draw() < 0.0));
    }

    #[test]
    fn stream_is_deterministic() {
        let m = shift_model(ChangePoint::At(300));
        let a: Vec<f64> = SampleStream::new(42, m).take(1000).collect();
        let b: Vec<f64> = SampleStream::new(42, m).take(1000).collect();
        assert_eq!(a, b);
        let c: Vec<f64> = SampleStream::new(43, m).take(1000).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn trial_streams_are_distinct_per_lane_and_trial() {
        let m = shift_model(ChangePoint::Never);
        let draw = |lane, t| SampleStream::for_trial(7, lane, t, m).draw();
        assert_ne!(draw(Lane::FalseAlarm, 0), draw(Lane::FalseAlarm, 1));
        assert_ne!(draw(Lane::FalseAlarm, 0), draw(Lane::Delay, 0));
        assert_eq!(draw(Lane::Delay, 9), draw(Lane::Delay, 9));
    }

    #[test]
    fn change_point_zero_is_rejected() {
        assert!(ChangePoint::at(0).is_err());
        assert_eq!(ChangePoint::at(1).unwrap(), ChangePoint::At(1));
    }
}
