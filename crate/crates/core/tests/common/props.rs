//! Property checks shared by the proptest suite and the acceptance runner.

use loocusum::density::{kde_at, loo_kde_at, Kernel, Quadrature};
use loocusum::detect::{
    run_on, BandwidthMode, Detector, DetectorKind, DetectorSpec, LooSettings, LooWindowState,
};
use loocusum::model::{
    kl_divergence, log_likelihood_ratio, ChangePoint, ChangePointModel, Density, GaussianModel,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::{close, random_stream};

pub fn modes() -> impl Strategy<Value = BandwidthMode> {
    prop_oneof![Just(BandwidthMode::PerSegment), Just(BandwidthMode::PerTime)]
}

pub fn kinds() -> impl Strategy<Value = DetectorKind> {
    prop_oneof![
        Just(DetectorKind::Cusum),
        Just(DetectorKind::WlGlr),
        Just(DetectorKind::LooCusum)
    ]
}

fn loo(pre: GaussianModel, window: usize, mode: BandwidthMode) -> LooWindowState {
    let settings = LooSettings {
        mode,
        ..LooSettings::default()
    };
    LooWindowState::new(pre, window, settings).unwrap()
}

/// Same path, `b₁ ≤ b₂` ⇒ `τ(b₁) ≤ τ(b₂)`, with censoring as `+∞`.
pub fn threshold_monotone(kind: DetectorKind, seed: u64, b1: f64, b2: f64) -> Result<(), TestCaseError> {
    let (lo, hi) = (b1.min(b2), b1.max(b2));
    let pre = GaussianModel::standard();
    let post = GaussianModel::new(0.5, 1.0).unwrap();
    let xs = random_stream(seed, 300);
    let run = |b: f64| {
        let mut d = DetectorSpec::new(kind, 15).build(pre, Some(post)).unwrap();
        run_on(&mut d, b, xs.iter().copied()).stopping_time.unwrap_or(u64::MAX)
    };
    let (t_lo, t_hi) = (run(lo), run(hi));
    prop_assert!(t_lo <= t_hi, "{kind}: tau({lo})={t_lo} > tau({hi})={t_hi}");
    Ok(())
}

/// Shifting the data and `p₀` together leaves the LOO statistic unchanged.
pub fn loo_translation(seed: u64, shift: f64, mode: BandwidthMode) -> Result<(), TestCaseError> {
    let xs = random_stream(seed, 40);
    let mut a = loo(GaussianModel::standard(), 12, mode);
    let mut b = loo(GaussianModel::new(shift, 1.0).unwrap(), 12, mode);
    for &x in &xs {
        let (sa, sb) = (a.observe(x), b.observe(x + shift));
        match (sa, sb) {
            (Some(u), Some(v)) => prop_assert!(close(u, v, 1e-9), "shift {shift}: {u} vs {v}"),
            (None, None) => {}
            other => return Err(TestCaseError::fail(format!("warm-up mismatch {other:?}"))),
        }
    }
    Ok(())
}

/// Candidate `k` only sees `X_k … X_n`: rewriting everything before `X_k`
/// leaves its score unchanged.
pub fn loo_masking(seed: u64, cut: usize, mode: BandwidthMode) -> Result<(), TestCaseError> {
    let window = 10;
    let xs = random_stream(seed, 35);
    let noise = random_stream(seed ^ 0xdead_beef, 35);
    let cut = cut % xs.len();
    let ys: Vec<f64> = (0..xs.len())
        .map(|i| if i < cut { noise[i] * 3.0 - 1.0 } else { xs[i] })
        .collect();
    let mut a = loo(GaussianModel::standard(), window, mode);
    let mut b = loo(GaussianModel::standard(), window, mode);
    for i in 0..xs.len() {
        a.observe(xs[i]);
        b.observe(ys[i]);
        for (&(k, u), &(k2, v)) in a.candidate_scores().iter().zip(&b.candidate_scores()) {
            prop_assert_eq!(k, k2);
            // 1-based k; the segment starts at index k − 1
            if (k as usize) > cut {
                prop_assert!(close(u, v, 1e-9), "n={} k={k}: {u} vs {v}", i + 1);
            }
        }
    }
    Ok(())
}

/// Gaussian-kernel leave-one-out estimate integrates to one over the
/// evaluation point.
pub fn loo_kde_normalized(samples: &[f64], leave_out: usize, h: f64) -> Result<(), TestCaseError> {
    let leave_out = leave_out % samples.len();
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 12.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * h;
    let quad = Quadrature {
        min_intervals: 1 << 12,
        max_intervals: 1 << 20,
        tolerance: 1e-10,
    };
    let w = std::cell::RefCell::new(samples.to_vec());
    let mass = quad
        .integrate(
            |x| {
                let mut w = w.borrow_mut();
                w[leave_out] = x;
                loo_kde_at(&w, leave_out, Kernel::Gaussian, h).unwrap()
            },
            lo,
            hi,
        )
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    Ok(())
}

/// The left-out sample is only an evaluation point: the estimate equals a plain
/// KDE of the other samples, in any order.
pub fn loo_kde_homogeneous(samples: &[f64], leave_out: usize, h: f64, rotate: usize) -> Result<(), TestCaseError> {
    let i = leave_out % samples.len();
    let x = samples[i];
    let mut others: Vec<f64> = samples
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    let direct = loo_kde_at(samples, i, Kernel::Gaussian, h).unwrap();
    prop_assert!(close(direct, kde_at(&others, x, Kernel::Gaussian, h), 1e-12));
    let r = rotate % others.len();
    others.rotate_left(r);
    others.reverse();
    let mut permuted = others.clone();
    let pos = rotate % (permuted.len() + 1);
    permuted.insert(pos, x);
    let v = loo_kde_at(&permuted, pos, Kernel::Gaussian, h).unwrap();
    prop_assert!(close(direct, v, 1e-12), "{direct} vs {v}");
    Ok(())
}

pub fn llr_matches_log_densities(x: f64, m0: f64, v0: f64, m1: f64, v1: f64) -> Result<(), TestCaseError> {
    let pre = GaussianModel::new(m0, v0).unwrap();
    let post = GaussianModel::new(m1, v1).unwrap();
    let model = ChangePointModel::new(pre, post, ChangePoint::At(1));
    let z = log_likelihood_ratio(&model, x).unwrap();
    let direct = post.log_density(x) - pre.log_density(x);
    prop_assert!((z - direct).abs() <= 1e-12 * (1.0 + direct.abs()), "{z} vs {direct}");
    Ok(())
}

pub fn kl_nonnegative(m0: f64, v0: f64, m1: f64, v1: f64) -> Result<(), TestCaseError> {
    let p = GaussianModel::new(m0, v0).unwrap();
    let q = GaussianModel::new(m1, v1).unwrap();
    let kl = kl_divergence(&p, &q);
    prop_assert!(kl >= 0.0);
    prop_assert_eq!(kl_divergence(&p, &p), 0.0);
    if (m0 - m1).abs() > 1e-3 || (v0 / v1 - 1.0).abs() > 1e-3 {
        prop_assert!(kl > 0.0);
    }
    Ok(())
}
