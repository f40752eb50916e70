//! Slow reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use loocusum::density::ClampBounds;
use loocusum::detect::BandwidthMode;
use loocusum::model::GaussianModel;
use rand::{Rng, SeedableRng};

pub mod props;
use rand_chacha::ChaCha8Rng;

fn gauss_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// `max(0, max_{1≤k≤n} Σ_{i=k}^n Z_i)` for every prefix length `n`.
pub fn brute_cusum(xs: &[f64], pre: &GaussianModel, post: &GaussianModel) -> Vec<f64> {
    let z: Vec<f64> = xs
        .iter()
        .map(|&x| {
            gauss_log_pdf(x, post.mean(), post.variance()) - gauss_log_pdf(x, pre.mean(), pre.variance())
        })
        .collect();
    (1..=z.len())
        .map(|n| {
            let mut best = 0.0f64;
            let mut s = 0.0;
            for k in (0..n).rev() {
                s += z[k];
                best = best.max(s);
            }
            best
        })
        .collect()
}

fn segment_glr(segment: &[f64], theta: f64, pre: &GaussianModel) -> f64 {
    segment
        .iter()
        .map(|&x| gauss_log_pdf(x, theta, pre.variance()) - gauss_log_pdf(x, pre.mean(), pre.variance()))
        .sum()
}

/// Window-limited GLR statistic by numerical search over `θ ≥ μ₀`: a coarse
/// grid followed by ternary refinement of the (concave) log-likelihood ratio.
pub fn grid_glr(window_oldest_first: &[f64], pre: &GaussianModel) -> f64 {
    let n = window_oldest_first.len();
    let mut best = 0.0f64;
    for start in 0..n {
        let seg = &window_oldest_first[start..];
        let top = seg.iter().copied().fold(pre.mean(), f64::max) + 1.0;
        let step = (top - pre.mean()) / 200.0;
        let (mut arg, mut val) = (pre.mean(), 0.0);
        for g in 0..=200 {
            let theta = pre.mean() + g as f64 * step;
            let v = segment_glr(seg, theta, pre);
            if v > val {
                arg = theta;
                val = v;
            }
        }
        let (mut lo, mut hi) = ((arg - step).max(pre.mean()), arg + step);
        for _ in 0..100 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if segment_glr(seg, a, pre) < segment_glr(seg, b, pre) {
                lo = a;
            } else {
                hi = b;
            }
        }
        best = best.max(val).max(segment_glr(seg, 0.5 * (lo + hi), pre));
    }
    best
}

/// Per-candidate LOO scores at time `n = xs.len()`, recomputed from scratch,
/// oldest candidate first as `(k, score)` with 1-based `k`.
pub fn naive_loo_scores(
    xs: &[f64],
    pre: &GaussianModel,
    max_lag: usize,
    mode: BandwidthMode,
    clamp: &ClampBounds,
) -> Vec<(u64, f64)> {
    let n = xs.len();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    let k_min = if n > max_lag { n - max_lag } else { 1 };
    for k in k_min..n {
        let seg = &xs[k - 1..n];
        let len = seg.len();
        let h = match mode {
            BandwidthMode::PerSegment => ((len - 1) as f64).powf(-0.2),
            BandwidthMode::PerTime => ((n.min(max_lag) - 1) as f64).powf(-0.2),
        };
        let mut score = 0.0;
        for i in 0..len {
            let mut sum = 0.0;
            for j in 0..len {
                if j != i {
                    let u = (seg[i] - seg[j]) / h;
                    sum += (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
                }
            }
            let p_hat = sum / ((len - 1) as f64 * h);
            let p0 = gauss_log_pdf(seg[i], pre.mean(), pre.variance()).exp();
            score += clamp.clamp(p_hat).ln() - clamp.clamp(p0).ln();
        }
        out.push((k as u64, score));
    }
    out
}

pub fn naive_loo_stat(
    xs: &[f64],
    pre: &GaussianModel,
    max_lag: usize,
    mode: BandwidthMode,
    clamp: &ClampBounds,
) -> Option<f64> {
    naive_loo_scores(xs, pre, max_lag, mode, clamp)
        .into_iter()
        .map(|(_, s)| s)
        .reduce(f64::max)
}

/// Random stream with a mean shift somewhere inside, for oracle comparisons.
pub fn random_stream(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let change = rng.random_range(0..=len);
    let shift = rng.random_range(0.0..2.0);
    (0..len)
        .map(|i| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            if i >= change { z + shift } else { z }
        })
        .collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
