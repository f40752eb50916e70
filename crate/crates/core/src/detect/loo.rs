//! Window-limited leave-one-out CuSum.
//!
//! At time `n` every candidate change point `k ∈ [max(1, n − m), n − 1]` is
//! scored by `Σ_{i=k}^n ln( clamp(p̂_{−i}(X_i)) / clamp(p₀(X_i)) )`, where the
//! leave-one-out estimate for candidate `k` sees only `X_k … X_n`. The statistic
//! is the maximum score. Both bandwidth readings cost `O(m²)` kernel
//! evaluations per step:
//!
//! * [`BandwidthMode::PerSegment`] keeps, for every segment length `L`, the
//!   leave-one-out kernel sums of the last `L` samples and slides them forward
//!   by one sample per step.
//! * [`BandwidthMode::PerTime`] shares one bandwidth across candidates, caches
//!   the pairwise kernel matrix of the window, and grows the segment backwards
//!   from the newest sample.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::density::{bandwidth, loo_kde_at, BandwidthPolicy, ClampBounds, Kernel};
use crate::error::{Error, Result};
use crate::model::{Density, GaussianModel};

use super::Detector;

/// Which count feeds the bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    /// `h` from the segment length: `bandwidth(policy, L, L)`, i.e. `(n − k)^(−1/5)`.
    #[default]
    PerSegment,
    /// `h` from the current time: `bandwidth(policy, n, m)`, shared by all candidates.
    PerTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LooSettings {
    pub kernel: Kernel,
    pub bandwidth: BandwidthPolicy,
    pub mode: BandwidthMode,
    pub clamp: ClampBounds,
}

/// `ln( clamp(p̂_{−i}(x_i)) / clamp(p₀(x_i)) )` for `x_i = window[leave_out]`.
pub fn loo_llr<P: Density>(
    window: &[f64],
    leave_out: usize,
    pre: &P,
    kernel: Kernel,
    h: f64,
    clamp: &ClampBounds,
) -> Result<f64> {
    let estimate = loo_kde_at(window, leave_out, kernel, h)?;
    let xi = window[leave_out];
    Ok(clamp.clamp(estimate).ln() - clamp.clamp_log(pre.log_density(xi)))
}

/// Sum of `ln clamp(r · scale)`, taking one logarithm per `chunk` factors.
#[inline]
fn sum_ln_clamped<'a>(
    rows: impl Iterator<Item = &'a f64>,
    scale: f64,
    clamp: &ClampBounds,
    chunk: usize,
) -> f64 {
    let mut total = 0.0;
    let mut prod = 1.0;
    let mut count = 0;
    for &r in rows {
        prod *= clamp.clamp(r * scale);
        count += 1;
        if count == chunk {
            total += prod.ln();
            prod = 1.0;
            count = 0;
        }
    }
    total + prod.ln()
}

/// Largest number of clamped factors whose product stays inside f64 range.
fn product_chunk(clamp: &ClampBounds) -> usize {
    let decades = clamp.lower().log10().abs().max(clamp.upper().log10().abs()).max(1.0);
    ((300.0 / decades).floor() as usize).clamp(1, 32)
}

#[derive(Debug, Clone)]
struct SegmentRows {
    inv_h2: f64,
    /// `K(0)`-normalizer over `(L − 1) h`.
    scale: f64,
    /// Unnormalized leave-one-out kernel sums of the last `L` samples, oldest first.
    rows: VecDeque<f64>,
}

#[derive(Debug, Clone)]
struct PairCache {
    cap: usize,
    h: f64,
    /// `profile` of every pair, indexed by absolute time modulo `cap`.
    kernel: Vec<f64>,
    rows: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Engine {
    PerSegment(Vec<SegmentRows>),
    PerTime(PairCache),
}

#[derive(Debug, Clone)]
pub struct LooWindowState<P = GaussianModel> {
    pre: P,
    settings: LooSettings,
    max_lag: usize,
    time: u64,
    samples: VecDeque<f64>,
    log_p0: VecDeque<f64>,
    engine: Engine,
    /// `scores[L − 2]` is the score of the candidate whose segment has length `L`.
    scores: Vec<f64>,
    chunk: usize,
}

impl<P: Density> LooWindowState<P> {
    /// `max_lag` is the window size `m_α`: candidates reach back to `n − m_α`.
    pub fn new(pre: P, max_lag: usize, settings: LooSettings) -> Result<Self> {
        if max_lag == 0 {
            return Err(Error::domain("LOO-CuSum window must be >= 1"));
        }
        let max_len = max_lag + 1;
        let engine = match settings.mode {
            BandwidthMode::PerSegment => {
                let mut segs = Vec::with_capacity(max_len - 1);
                for len in 2..=max_len {
                    let h = bandwidth(settings.bandwidth, len as u64, len as u64)?;
                    segs.push(SegmentRows {
                        inv_h2: 1.0 / (h * h),
                        scale: settings.kernel.normalizer() / ((len - 1) as f64 * h),
                        rows: VecDeque::with_capacity(len),
                    });
                }
                Engine::PerSegment(segs)
            }
            BandwidthMode::PerTime => {
                // the widest time-based count this window ever feeds the rule
                bandwidth(settings.bandwidth, max_len as u64, max_lag as u64)?;
                Engine::PerTime(PairCache {
                    cap: max_len,
                    h: f64::NAN,
                    kernel: vec![0.0; max_len * max_len],
                    rows: vec![0.0; max_len],
                })
            }
        };
        Ok(Self {
            pre,
            settings,
            max_lag,
            time: 0,
            samples: VecDeque::with_capacity(max_len + 1),
            log_p0: VecDeque::with_capacity(max_len + 1),
            engine,
            scores: vec![f64::NEG_INFINITY; max_len - 1],
            chunk: product_chunk(&settings.clamp),
        })
    }

    pub fn window(&self) -> usize {
        self.max_lag
    }

    pub fn settings(&self) -> &LooSettings {
        &self.settings
    }

    /// Number of candidate change points at the current time.
    fn candidates(&self) -> usize {
        (self.time as usize).min(self.max_lag + 1).saturating_sub(1)
    }

    /// Current statistic; `None` until two samples have arrived.
    pub fn statistic(&self) -> Option<f64> {
        let c = self.candidates();
        if c == 0 {
            return None;
        }
        Some(self.scores[..c].iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `(k, score_k)` for every candidate change point, oldest `k` first.
    pub fn candidate_scores(&self) -> Vec<(u64, f64)> {
        let n = self.time;
        (0..self.candidates())
            .rev()
            .map(|j| (n - j as u64 - 1, self.scores[j]))
            .collect()
    }

    pub fn push(&mut self, x: f64) {
        self.time += 1;
        // PerSegment needs x_{n−m−1} to retire the oldest pair
        let keep = self.max_lag + 2;
        if self.samples.len() == keep {
            self.samples.pop_front();
            self.log_p0.pop_front();
        }
        self.samples.push_back(x);
        self.log_p0
            .push_back(self.settings.clamp.clamp_log(self.pre.log_density(x)));
        match self.settings.kernel {
            Kernel::Gaussian => self.update(|u2| (-0.5 * u2).exp()),
            Kernel::Epanechnikov => self.update(|u2| (1.0 - u2).max(0.0)),
        }
    }

    fn update<F: Fn(f64) -> f64>(&mut self, profile: F) {
        let n = self.time as usize;
        if n < 2 {
            return;
        }
        let max_len = n.min(self.max_lag + 1);
        let samples = self.samples.make_contiguous();
        let log_p0 = self.log_p0.make_contiguous();
        let len = samples.len();
        let clamp = self.settings.clamp;
        let chunk = self.chunk;
        match &mut self.engine {
            Engine::PerSegment(segs) => {
                let x_new = samples[len - 1];
                let mut suffix_lp0 = log_p0[len - 1];
                for l in 2..=max_len {
                    suffix_lp0 += log_p0[len - l];
                    let seg = &mut segs[l - 2];
                    let inv_h2 = seg.inv_h2;
                    if l == n {
                        // first time this length fits: the whole history
                        let xs = &samples[len - l..];
                        seg.rows.clear();
                        seg.rows.resize(l, 0.0);
                        for a in 0..l {
                            for b in a + 1..l {
                                let d = xs[a] - xs[b];
                                let kv = profile(d * d * inv_h2);
                                seg.rows[a] += kv;
                                seg.rows[b] += kv;
                            }
                        }
                    } else {
                        let old = samples[len - 1 - l];
                        seg.rows.pop_front();
                        let mut fresh = 0.0;
                        for (r, &xi) in seg.rows.iter_mut().zip(&samples[len - l..len - 1]) {
                            let dn = xi - x_new;
                            let d_old = xi - old;
                            let kn = profile(dn * dn * inv_h2);
                            let ko = profile(d_old * d_old * inv_h2);
                            *r += kn - ko;
                            fresh += kn;
                        }
                        seg.rows.push_back(fresh);
                    }
                    self.scores[l - 2] =
                        sum_ln_clamped(seg.rows.iter(), seg.scale, &clamp, chunk) - suffix_lp0;
                }
            }
            Engine::PerTime(cache) => {
                // bandwidth() only fails for n < 2 or a bad fixed h, both excluded earlier
                let h = bandwidth(self.settings.bandwidth, n as u64, self.max_lag as u64)
                    .expect("bandwidth validated at construction");
                let inv_h2 = 1.0 / (h * h);
                let cap = cache.cap;
                let slot = |t: usize| t % cap;
                let x_at = |t: usize| samples[len - 1 - (n - t)];
                let first = n + 1 - max_len;
                if h.to_bits() != cache.h.to_bits() {
                    for a in first..=n {
                        for b in a + 1..=n {
                            let d = x_at(a) - x_at(b);
                            let kv = profile(d * d * inv_h2);
                            cache.kernel[slot(a) * cap + slot(b)] = kv;
                            cache.kernel[slot(b) * cap + slot(a)] = kv;
                        }
                    }
                    cache.h = h;
                } else {
                    let xn = x_at(n);
                    for t in first..n {
                        let d = x_at(t) - xn;
                        let kv = profile(d * d * inv_h2);
                        cache.kernel[slot(t) * cap + slot(n)] = kv;
                        cache.kernel[slot(n) * cap + slot(t)] = kv;
                    }
                }
                let norm = self.settings.kernel.normalizer() / h;
                let rows = &mut cache.rows;
                rows[0] = 0.0;
                let mut suffix_lp0 = log_p0[len - 1];
                for l in 2..=max_len {
                    let t = n + 1 - l;
                    suffix_lp0 += log_p0[len - l];
                    let krow = &cache.kernel[slot(t) * cap..slot(t) * cap + cap];
                    let mut acc = 0.0;
                    // rows[q] belongs to sample n − q
                    for (q, r) in rows[..l - 1].iter_mut().enumerate() {
                        let kv = krow[slot(n - q)];
                        *r += kv;
                        acc += kv;
                    }
                    rows[l - 1] = acc;
                    let scale = norm / (l - 1) as f64;
                    self.scores[l - 2] =
                        sum_ln_clamped(rows[..l].iter(), scale, &clamp, chunk) - suffix_lp0;
                }
            }
        }
    }
}

impl<P: Density> Detector for LooWindowState<P> {
    fn observe(&mut self, x: f64) -> Option<f64> {
        self.push(x);
        self.statistic()
    }

    fn time(&self) -> u64 {
        self.time
    }

    fn reset(&mut self) {
        self.time = 0;
        self.samples.clear();
        self.log_p0.clear();
        self.scores.fill(f64::NEG_INFINITY);
        match &mut self.engine {
            Engine::PerSegment(segs) => segs.iter_mut().for_each(|s| s.rows.clear()),
            Engine::PerTime(cache) => cache.h = f64::NAN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fixed(h: f64) -> LooSettings {
        LooSettings {
            bandwidth: BandwidthPolicy::Fixed(h),
            ..LooSettings::default()
        }
    }

    #[test]
    fn loo_llr_examples() {
        let p0 = GaussianModel::standard();
        let c = ClampBounds::default();
        let z = loo_llr(&[0.0, 0.0], 0, &p0, Kernel::Gaussian, 1.0, &c).unwrap();
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-14);
        let z = loo_llr(&[0.0, 3.0], 0, &p0, Kernel::Gaussian, 1.0, &c).unwrap();
        assert_abs_diff_eq!(z, -4.5, epsilon = 1e-12);
        // Epanechnikov estimate is exactly zero here, the floor takes over
        let z = loo_llr(&[0.0, 3.0], 0, &p0, Kernel::Epanechnikov, 1.0, &c).unwrap();
        assert_abs_diff_eq!(z, (1e-8f64).ln() - p0.log_density(0.0), epsilon = 1e-12);
        assert!(loo_llr(&[0.0], 0, &p0, Kernel::Gaussian, 1.0, &c).is_err());
    }

    #[test]
    fn warm_up_then_first_statistic() {
        let mut s = LooWindowState::new(GaussianModel::standard(), 10, fixed(1.0)).unwrap();
        assert_eq!(s.observe(0.0), None);
        let v = s.observe(0.0).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
        assert_eq!(s.candidate_scores().len(), 1);
        assert_eq!(s.candidate_scores()[0].0, 1);
    }

    #[test]
    fn constant_zero_stream_scores_zero_with_unit_bandwidth() {
        for mode in [BandwidthMode::PerSegment, BandwidthMode::PerTime] {
            let settings = LooSettings {
                mode,
                ..fixed(1.0)
            };
            let mut s = LooWindowState::new(GaussianModel::standard(), 5, settings).unwrap();
            for _ in 0..12 {
                s.observe(0.0);
            }
            assert_abs_diff_eq!(s.statistic().unwrap(), 0.0, epsilon = 1e-12);
            assert_eq!(s.candidate_scores().len(), 5);
            let ks: Vec<u64> = s.candidate_scores().iter().map(|c| c.0).collect();
            assert_eq!(ks, vec![7, 8, 9, 10, 11]);
        }
    }

    #[test]
    fn reset_restores_fresh_state() {
        let mut a = LooWindowState::new(GaussianModel::standard(), 4, LooSettings::default()).unwrap();
        for x in [0.3, -1.0, 2.0, 0.1, 0.5, 0.9] {
            a.observe(x);
        }
        a.reset();
        let mut b = LooWindowState::new(GaussianModel::standard(), 4, LooSettings::default()).unwrap();
        for x in [1.0, 0.2, -0.4] {
            assert_eq!(a.observe(x), b.observe(x));
        }
    }

    #[test]
    fn per_time_needs_two_lags() {
        let settings = LooSettings {
            mode: BandwidthMode::PerTime,
            ..LooSettings::default()
        };
        assert!(matches!(
            LooWindowState::new(GaussianModel::standard(), 1, settings),
            Err(Error::DegenerateWindow { .. })
        ));
        assert!(LooWindowState::new(GaussianModel::standard(), 1, LooSettings::default()).is_ok());
        let fixed_time = LooSettings { mode: BandwidthMode::PerTime, ..fixed(0.7) };
        assert!(LooWindowState::new(GaussianModel::standard(), 1, fixed_time).is_ok());
    }

    #[test]
    fn chunk_respects_float_range() {
        assert_eq!(product_chunk(&ClampBounds::default()), 32);
        let wide = ClampBounds::new(1e-100, 1e100).unwrap();
        assert_eq!(product_chunk(&wide), 3);
    }
}
