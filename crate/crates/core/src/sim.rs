//! Monte Carlo harness: mean time to false alarm, detection delay, operating
//! characteristics, and the reproduction experiments built on them.
//!
//! Every trial draws from its own random stream, keyed by
//! `(master seed, lane, trial index)`. False-alarm runs and delay runs use
//! different lanes. Per-trial results are reduced in trial order, so outputs
//! are bit-identical for any thread count.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::detect::{
    run_detector, run_records, threshold_from_alpha, Detector, DetectorKind, DetectorSpec,
    LooSettings, RecordPath,
};
use crate::error::{Error, Result};
use crate::exec::{map_trials, Execution};
use crate::model::{
    kl_divergence, log_likelihood_ratio, ChangePoint, ChangePointModel, GaussianModel, Lane,
    SampleStream,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Delay runs error out above this censored fraction.
pub const MAX_DELAY_CENSORING: f64 = 0.05;
const WARN_DELAY_CENSORING: f64 = 0.001;

/// Step cap for false-alarm runs at level `alpha`: `ceil(20 / alpha)`.
pub fn default_max_steps(alpha: f64) -> u64 {
    (20.0 / alpha).ceil() as u64
}

/// Sample mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_half: f64,
    pub count: u64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                ci_half: f64::NAN,
                count: 0,
            };
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            ci_half: Z95 * (var / nf).sqrt(),
            count: n as u64,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half
    }
}

/// One Monte Carlo experiment at a single threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub detector: DetectorSpec,
    pub model: ChangePointModel,
    pub threshold: f64,
    pub trials: u64,
    pub max_steps: u64,
    pub master_seed: u64,
}

impl TrialPlan {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::precondition("trials must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::precondition("max_steps must be >= 1"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::precondition(format!(
                "threshold must be finite, got {}",
                self.threshold
            )));
        }
        // fail early on an unbuildable detector instead of inside every trial
        self.detector.build(self.model.pre, Some(self.model.post))?;
        Ok(())
    }

    fn stream(&self, lane: Lane, trial: u64) -> SampleStream {
        SampleStream::for_trial(self.master_seed, lane, trial, self.model)
    }

    fn fresh_detector(&self) -> crate::detect::AnyDetector {
        self.detector
            .build(self.model.pre, Some(self.model.post))
            .expect("validated detector spec")
    }
}

/// Estimated `E∞[τ]`; censored trials count as `max_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtfaEstimate {
    pub estimate: Estimate,
    pub censored_fraction: f64,
}

/// Estimated `E_ν[(τ − ν + 1)⁺]` over trials that neither stopped before `ν`
/// nor hit the step cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    pub estimate: Estimate,
    pub censored_fraction: f64,
    /// Trials that alarmed before the change (only possible for `ν > 1`).
    pub early_alarms: u64,
}

pub fn estimate_mtfa(plan: &TrialPlan, exec: Execution) -> Result<MtfaEstimate> {
    plan.validate()?;
    if plan.model.change_point != ChangePoint::Never {
        return Err(Error::precondition("false-alarm runs need change_point = never"));
    }
    let times = map_trials(exec, plan.trials, |t| {
        let mut d = plan.fresh_detector();
        let mut s = plan.stream(Lane::FalseAlarm, t);
        run_detector(&mut d, plan.threshold, &mut s, plan.max_steps).stopping_time
    });
    Ok(summarize_mtfa(&times, plan.max_steps))
}

fn summarize_mtfa(times: &[Option<u64>], max_steps: u64) -> MtfaEstimate {
    let censored = times.iter().filter(|t| t.is_none()).count();
    let values: Vec<f64> = times
        .iter()
        .map(|t| t.unwrap_or(max_steps) as f64)
        .collect();
    MtfaEstimate {
        estimate: Estimate::from_values(&values),
        censored_fraction: censored as f64 / times.len() as f64,
    }
}

pub fn estimate_delay(plan: &TrialPlan, exec: Execution) -> Result<DelayEstimate> {
    plan.validate()?;
    let nu = match plan.model.change_point {
        ChangePoint::At(nu) => nu,
        ChangePoint::Never => {
            return Err(Error::precondition("delay runs need a finite change point"))
        }
    };
    let times = map_trials(exec, plan.trials, |t| {
        let mut d = plan.fresh_detector();
        let mut s = plan.stream(Lane::Delay, t);
        run_detector(&mut d, plan.threshold, &mut s, plan.max_steps).stopping_time
    });
    summarize_delay(&times, nu)
}

fn summarize_delay(times: &[Option<u64>], nu: u64) -> Result<DelayEstimate> {
    let censored = times.iter().filter(|t| t.is_none()).count();
    let censored_fraction = censored as f64 / times.len() as f64;
    if censored_fraction > MAX_DELAY_CENSORING {
        return Err(Error::DelayUnreliable { censored_fraction });
    }
    if censored_fraction > WARN_DELAY_CENSORING {
        warn!("{censored} of {} delay trials censored and excluded", times.len());
    }
    let mut early = 0;
    let mut delays = Vec::with_capacity(times.len());
    for &tau in times.iter().flatten() {
        if tau >= nu {
            delays.push((tau - nu + 1) as f64);
        } else {
            early += 1;
        }
    }
    Ok(DelayEstimate {
        estimate: Estimate::from_values(&delays),
        censored_fraction,
        early_alarms: early,
    })
}

/// Delay estimates at several change points; the harness cannot compute the
/// worst case over histories, so the largest value here is the best proxy.
pub fn delay_profile(
    plan: &TrialPlan,
    change_points: &[u64],
    exec: Execution,
) -> Result<Vec<(u64, DelayEstimate)>> {
    change_points
        .iter()
        .map(|&nu| {
            let p = TrialPlan {
                model: plan.model.with_change_point(ChangePoint::at(nu)?),
                ..*plan
            };
            Ok((nu, estimate_delay(&p, exec)?))
        })
        .collect()
}

/// One point of an operating characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub detector: DetectorKind,
    pub window: usize,
    pub threshold: f64,
    pub mtfa: f64,
    pub mtfa_ci: f64,
    pub delay: f64,
    pub delay_ci: f64,
    pub censored_far: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub detector: DetectorSpec,
    pub pre: GaussianModel,
    pub post: GaussianModel,
    /// Nondecreasing.
    pub thresholds: Vec<f64>,
    pub trials: u64,
    pub mtfa_max_steps: u64,
    pub delay_max_steps: u64,
    pub seed: u64,
    /// `ν` for the delay runs; 1 estimates the worst-case delay proxy.
    pub change_point: u64,
}

impl SweepPlan {
    fn delay_plan(&self) -> Result<(TrialPlan, u64)> {
        let nu = self.change_point;
        Ok((self.trial_plan(ChangePoint::at(nu)?, self.delay_max_steps), nu))
    }

    fn trial_plan(&self, change_point: ChangePoint, max_steps: u64) -> TrialPlan {
        TrialPlan {
            detector: self.detector,
            model: ChangePointModel::new(self.pre, self.post, change_point),
            threshold: self.thresholds.last().copied().unwrap_or(0.0),
            trials: self.trials,
            max_steps,
            master_seed: self.seed,
        }
    }
}

fn record_paths(plan: &TrialPlan, lane: Lane, exec: Execution) -> Vec<RecordPath> {
    map_trials(exec, plan.trials, |t| {
        let mut d = plan.fresh_detector();
        let mut s = plan.stream(lane, t);
        run_records(&mut d, plan.threshold, &mut s, plan.max_steps)
    })
}

/// Operating characteristic over a threshold grid.
///
/// Each trial is run once up to the largest threshold and its running-maximum
/// path answers every threshold, so the points are exactly what separate
/// [`estimate_mtfa`] / [`estimate_delay`] runs with the same seed would give,
/// and they share common random numbers across thresholds.
pub fn sweep_operating_characteristic(
    plan: &SweepPlan,
    exec: Execution,
) -> Result<Vec<OperatingPoint>> {
    if plan.thresholds.is_empty() {
        return Err(Error::precondition("sweep needs at least one threshold"));
    }
    if plan.thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::precondition("sweep thresholds must be ascending"));
    }
    let far = plan.trial_plan(ChangePoint::Never, plan.mtfa_max_steps);
    let (delay, nu) = plan.delay_plan()?;
    far.validate()?;
    delay.validate()?;

    let far_paths = record_paths(&far, Lane::FalseAlarm, exec);
    let delay_paths = record_paths(&delay, Lane::Delay, exec);

    plan.thresholds
        .iter()
        .map(|&b| {
            let far_times: Vec<Option<u64>> =
                far_paths.iter().map(|p| p.stopping_time(b)).collect();
            let delay_times: Vec<Option<u64>> =
                delay_paths.iter().map(|p| p.stopping_time(b)).collect();
            let mtfa = summarize_mtfa(&far_times, plan.mtfa_max_steps);
            let d = summarize_delay(&delay_times, nu)?;
            Ok(OperatingPoint {
                detector: plan.detector.kind,
                window: plan.detector.window,
                threshold: b,
                mtfa: mtfa.estimate.mean,
                mtfa_ci: mtfa.estimate.ci_half,
                delay: d.estimate.mean,
                delay_ci: d.estimate.ci_half,
                censored_far: mtfa.censored_fraction,
                trials: plan.trials,
                seed: plan.seed,
            })
        })
        .collect()
}

/// Delay read off an operating characteristic at a given MTFA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedDelay {
    pub mtfa: f64,
    pub delay: f64,
    pub delay_ci: f64,
    /// Censored fraction of the false-alarm runs at the bracketing points.
    pub censored_far: f64,
}

/// Piecewise-linear interpolation of delay against `ln(MTFA)`.
///
/// Returns `None` when `target` lies outside the MTFA range of `points`.
pub fn delay_at_mtfa(points: &[OperatingPoint], target: f64) -> Option<MatchedDelay> {
    let lt = target.ln();
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if !(a.mtfa <= target && target <= b.mtfa) {
            return None;
        }
        let (la, lb) = (a.mtfa.ln(), b.mtfa.ln());
        let s = if lb > la { (lt - la) / (lb - la) } else { 0.0 };
        let lerp = |u: f64, v: f64| u + s * (v - u);
        Some(MatchedDelay {
            mtfa: target,
            delay: lerp(a.delay, b.delay),
            delay_ci: lerp(a.delay_ci, b.delay_ci),
            censored_far: a.censored_far.max(b.censored_far),
        })
    })
}

/// Tail probabilities of the log-likelihood-ratio random walk at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaiPoint {
    pub n: u64,
    /// `P(max_{t≤n} Σ_{i=1}^{1+t} Z_i ≥ (1+δ) n I)`.
    pub upper: Estimate,
    /// `P(Σ_{i=1}^{1+n} Z_i ≤ (1−δ) n I)`.
    pub lower: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaiReport {
    pub kl: f64,
    pub delta: f64,
    pub points: Vec<LaiPoint>,
    pub upper_decays: bool,
    pub lower_decays: bool,
}

fn decays(values: &[Estimate]) -> bool {
    // standard error from the 95% half-width
    let se = |e: &Estimate| e.ci_half / Z95;
    let stepwise = values.windows(2).all(|w| {
        let slack = 2.0 * (se(&w[0]).powi(2) + se(&w[1]).powi(2)).sqrt();
        w[1].mean <= w[0].mean + slack
    });
    let overall = match (values.first(), values.last()) {
        (Some(f), Some(l)) if values.len() > 1 => l.mean < f.mean || f.mean == 0.0,
        _ => true,
    };
    stepwise && overall
}

/// Monte Carlo check that the log-likelihood-ratio walk of `model` concentrates
/// at rate `I = D(p₁ ‖ p₀)`: both tail probabilities should shrink as `n` grows.
pub fn check_lai_conditions(
    model: &ChangePointModel,
    n_grid: &[u64],
    delta: f64,
    trials: u64,
    seed: u64,
    exec: Execution,
) -> Result<LaiReport> {
    let kl = kl_divergence(&model.post, &model.pre);
    if !(kl > 0.0) {
        return Err(Error::precondition("need I = D(p1 || p0) > 0"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::precondition(format!("delta must lie in (0, 1), got {delta}")));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] == 0 {
        return Err(Error::precondition("n_grid must be positive and increasing"));
    }
    if trials == 0 {
        return Err(Error::precondition("trials must be >= 1"));
    }
    let horizon = *n_grid.last().unwrap();
    let post_model = model.with_change_point(ChangePoint::At(1));
    let hits = map_trials(exec, trials, |t| {
        let mut s = SampleStream::for_trial(seed, Lane::Lai, t, post_model);
        let mut out = Vec::with_capacity(n_grid.len());
        let mut grid = n_grid.iter().peekable();
        let mut sum = 0.0;
        let mut running_max = f64::NEG_INFINITY;
        // partial sum S_{t+1} for t = 0..=horizon
        for t in 0..=horizon {
            sum += log_likelihood_ratio(&post_model, s.draw()).expect("finite draw");
            running_max = running_max.max(sum);
            if grid.peek() == Some(&&t) {
                let n = t as f64;
                out.push((
                    running_max >= (1.0 + delta) * n * kl,
                    sum <= (1.0 - delta) * n * kl,
                ));
                grid.next();
            }
        }
        out
    });
    let points: Vec<LaiPoint> = n_grid
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let up: Vec<f64> = hits.iter().map(|h| h[j].0 as u8 as f64).collect();
            let lo: Vec<f64> = hits.iter().map(|h| h[j].1 as u8 as f64).collect();
            LaiPoint {
                n,
                upper: Estimate::from_values(&up),
                lower: Estimate::from_values(&lo),
            }
        })
        .collect();
    let ups: Vec<Estimate> = points.iter().map(|p| p.upper).collect();
    let lows: Vec<Estimate> = points.iter().map(|p| p.lower).collect();
    Ok(LaiReport {
        kl,
        delta,
        upper_decays: decays(&ups),
        lower_decays: decays(&lows),
        points,
    })
}

/// Inputs of the false-alarm guarantee check for the LOO-CuSum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Plan {
    pub alpha: f64,
    pub window: usize,
    pub pre: GaussianModel,
    pub loo: LooSettings,
    pub trials: u64,
    pub seed: u64,
    /// Added to `b_α`; nonzero only to demonstrate that the check can fail.
    pub threshold_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub alpha: f64,
    pub window: usize,
    pub threshold: f64,
    /// `1 / α`.
    pub bound: f64,
    pub mtfa: MtfaEstimate,
    /// `mean − 2 · ci_half`.
    pub lower_confidence: f64,
    pub margin: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub pass: bool,
}

/// Estimates `E∞[τ̂(b_α)]` with `b_α = |ln α| + ln(8 m)` and checks it
/// against `1/α`. Censoring at `ceil(20/α)` biases the estimate down, which
/// only makes the check harder to pass.
pub fn verify_lemma2(plan: &Lemma2Plan, exec: Execution) -> Result<Lemma2Report> {
    let threshold = threshold_from_alpha(plan.alpha, plan.window)? + plan.threshold_offset;
    let max_steps = default_max_steps(plan.alpha);
    let trial = TrialPlan {
        detector: DetectorSpec {
            kind: DetectorKind::LooCusum,
            window: plan.window,
            loo: plan.loo,
        },
        // post is never sampled under ν = ∞
        model: ChangePointModel::new(plan.pre, plan.pre, ChangePoint::Never),
        threshold,
        trials: plan.trials,
        max_steps,
        master_seed: plan.seed,
    };
    let mtfa = estimate_mtfa(&trial, exec)?;
    let bound = 1.0 / plan.alpha;
    let lower_confidence = mtfa.estimate.mean - 2.0 * mtfa.estimate.ci_half;
    Ok(Lemma2Report {
        alpha: plan.alpha,
        window: plan.window,
        threshold,
        bound,
        mtfa,
        lower_confidence,
        margin: lower_confidence / bound,
        max_steps,
        seed: plan.seed,
        pass: lower_confidence >= bound,
    })
}

/// CuSum delay against threshold, compared with the first-order slope `1/I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub kl: f64,
    pub thresholds: Vec<f64>,
    pub delays: Vec<Estimate>,
    /// `delay(b) / b`.
    pub ratios: Vec<f64>,
    /// Largest threshold's mean delay lies in `[b/I, 1.4 b/I]`.
    pub bracket_ok: bool,
    /// Ratios move monotonically toward `1/I`.
    pub converging: bool,
}

pub fn check_delay_slope(
    pre: GaussianModel,
    post: GaussianModel,
    thresholds: &[f64],
    trials: u64,
    seed: u64,
    exec: Execution,
) -> Result<SlopeReport> {
    let kl = kl_divergence(&post, &pre);
    if !(kl > 0.0) {
        return Err(Error::precondition("need I = D(p1 || p0) > 0"));
    }
    let sweep = SweepPlan {
        detector: DetectorSpec::new(DetectorKind::Cusum, 1),
        pre,
        post,
        thresholds: thresholds.to_vec(),
        trials,
        mtfa_max_steps: 1,
        delay_max_steps: delay_cap(thresholds, kl),
        seed,
        change_point: 1,
    };
    let delays = delay_curve(&sweep, exec)?;
    let ratios: Vec<f64> = delays
        .iter()
        .zip(thresholds)
        .map(|(d, b)| d.mean / b)
        .collect();
    let asymptote = 1.0 / kl;
    let b_last = *thresholds.last().unwrap();
    let d_last = delays.last().unwrap().mean;
    let bracket_ok = d_last >= b_last / kl && d_last <= 1.4 * b_last / kl;
    let gaps: Vec<f64> = ratios.iter().map(|r| (r - asymptote).abs()).collect();
    let converging = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok(SlopeReport {
        kl,
        thresholds: thresholds.to_vec(),
        delays,
        ratios,
        bracket_ok,
        converging,
    })
}

/// Generous step cap for delay runs: ten times the first-order delay.
pub fn delay_cap(thresholds: &[f64], kl: f64) -> u64 {
    let b = thresholds.iter().copied().fold(1.0, f64::max);
    (10.0 * b / kl).ceil() as u64 + 1000
}

/// Delay estimates at `plan.change_point` for each threshold, without the
/// false-alarm half of a sweep.
pub fn delay_curve(plan: &SweepPlan, exec: Execution) -> Result<Vec<Estimate>> {
    if plan.thresholds.is_empty() || plan.thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::precondition("thresholds must be nonempty and ascending"));
    }
    let (delay, nu) = plan.delay_plan()?;
    delay.validate()?;
    let paths = record_paths(&delay, Lane::Delay, exec);
    plan.thresholds
        .iter()
        .map(|&b| {
            let times: Vec<Option<u64>> = paths.iter().map(|p| p.stopping_time(b)).collect();
            Ok(summarize_delay(&times, nu)?.estimate)
        })
        .collect()
}

/// Operating characteristic whose delays come from `delay_trials` runs while
/// the MTFA side uses `plan.trials`; false-alarm runs are far costlier, so the
/// two budgets are set separately. `trials` in the result is `plan.trials`.
pub fn sweep_with_delay_trials(
    plan: &SweepPlan,
    delay_trials: u64,
    exec: Execution,
) -> Result<Vec<OperatingPoint>> {
    let mut points = sweep_operating_characteristic(plan, exec)?;
    let delays = delay_curve(
        &SweepPlan {
            trials: delay_trials,
            ..plan.clone()
        },
        exec,
    )?;
    for (p, d) in points.iter_mut().zip(delays) {
        p.delay = d.mean;
        p.delay_ci = d.ci_half;
    }
    Ok(points)
}

/// LOO-CuSum delay may exceed the WL-GLR delay by at most this factor at a
/// common MTFA.
pub const MATCHED_RATIO_LIMIT: f64 = 1.5;

/// The three detectors compared at one interpolated MTFA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPlan {
    pub pre: GaussianModel,
    pub post: GaussianModel,
    pub window: usize,
    pub loo: LooSettings,
    pub target_mtfa: f64,
    pub cusum_thresholds: Vec<f64>,
    pub glr_thresholds: Vec<f64>,
    pub loo_thresholds: Vec<f64>,
    /// False-alarm trials for CuSum and WL-GLR.
    pub far_trials: u64,
    pub loo_far_trials: u64,
    pub delay_trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedReport {
    pub cusum_curve: Vec<OperatingPoint>,
    pub glr_curve: Vec<OperatingPoint>,
    pub loo_curve: Vec<OperatingPoint>,
    pub cusum: Option<MatchedDelay>,
    pub glr: Option<MatchedDelay>,
    pub loo: Option<MatchedDelay>,
    /// LOO-CuSum delay over WL-GLR delay.
    pub ratio: Option<f64>,
    /// Both window-limited delays are at least the CuSum delay, up to the
    /// summed CI half-widths.
    pub above_cusum: bool,
    pub pass: bool,
}

pub fn compare_at_matched_mtfa(plan: &MatchedPlan, exec: Execution) -> Result<MatchedReport> {
    if !(plan.target_mtfa > 1.0) {
        return Err(Error::precondition("target MTFA must exceed 1"));
    }
    let kl = kl_divergence(&plan.post, &plan.pre);
    let curve = |spec: DetectorSpec, thresholds: &[f64], far_trials: u64| {
        let sweep = SweepPlan {
            detector: spec,
            pre: plan.pre,
            post: plan.post,
            thresholds: thresholds.to_vec(),
            trials: far_trials,
            mtfa_max_steps: (20.0 * plan.target_mtfa).ceil() as u64,
            delay_max_steps: delay_cap(thresholds, kl.max(1e-3)),
            seed: plan.seed,
            change_point: 1,
        };
        sweep_with_delay_trials(&sweep, plan.delay_trials, exec)
    };
    let cusum_curve = curve(
        DetectorSpec::new(DetectorKind::Cusum, plan.window),
        &plan.cusum_thresholds,
        plan.far_trials,
    )?;
    let glr_curve = curve(
        DetectorSpec::new(DetectorKind::WlGlr, plan.window),
        &plan.glr_thresholds,
        plan.far_trials,
    )?;
    let loo_curve = curve(
        DetectorSpec {
            kind: DetectorKind::LooCusum,
            window: plan.window,
            loo: plan.loo,
        },
        &plan.loo_thresholds,
        plan.loo_far_trials,
    )?;
    let cusum = delay_at_mtfa(&cusum_curve, plan.target_mtfa);
    let glr = delay_at_mtfa(&glr_curve, plan.target_mtfa);
    let loo = delay_at_mtfa(&loo_curve, plan.target_mtfa);
    let (ratio, above_cusum) = match (cusum, glr, loo) {
        (Some(c), Some(g), Some(l)) => (
            Some(l.delay / g.delay),
            l.delay + l.delay_ci + c.delay_ci >= c.delay
                && g.delay + g.delay_ci + c.delay_ci >= c.delay,
        ),
        _ => (None, false),
    };
    Ok(MatchedReport {
        pass: ratio.is_some_and(|r| r <= MATCHED_RATIO_LIMIT) && above_cusum,
        cusum_curve,
        glr_curve,
        loo_curve,
        cusum,
        glr,
        loo,
        ratio,
        above_cusum,
    })
}

/// LOO-CuSum against CuSum at matched false-alarm level `α = e^{−b}`.
///
/// CuSum runs at `b = |ln α|`; the LOO-CuSum runs at `b_α = |ln α| + ln(8 m)`,
/// the threshold that guarantees the same false-alarm level without `p₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub window: usize,
    pub log_alphas: Vec<f64>,
    pub cusum: Vec<Estimate>,
    pub loo: Vec<Estimate>,
    /// LOO delay over CuSum delay.
    pub ratios: Vec<f64>,
    pub all_finite: bool,
    pub ratios_decrease: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn check_first_order_optimality(
    pre: GaussianModel,
    post: GaussianModel,
    log_alphas: &[f64],
    window: usize,
    loo: LooSettings,
    trials: u64,
    seed: u64,
    exec: Execution,
) -> Result<OptimalityReport> {
    let kl = kl_divergence(&post, &pre);
    let extra = (8.0 * window as f64).ln();
    let loo_thresholds: Vec<f64> = log_alphas.iter().map(|b| b + extra).collect();
    let base = SweepPlan {
        detector: DetectorSpec::new(DetectorKind::Cusum, window),
        pre,
        post,
        thresholds: log_alphas.to_vec(),
        trials,
        mtfa_max_steps: 1,
        delay_max_steps: delay_cap(&loo_thresholds, kl.max(1e-3)),
        seed,
        change_point: 1,
    };
    let cusum = delay_curve(&base, exec)?;
    let loo_plan = SweepPlan {
        detector: DetectorSpec {
            kind: DetectorKind::LooCusum,
            window,
            loo,
        },
        thresholds: loo_thresholds,
        ..base
    };
    let loo_delays = delay_curve(&loo_plan, exec)?;
    let ratios: Vec<f64> = loo_delays
        .iter()
        .zip(&cusum)
        .map(|(l, c)| l.mean / c.mean)
        .collect();
    Ok(OptimalityReport {
        window,
        log_alphas: log_alphas.to_vec(),
        all_finite: loo_delays.iter().all(|e| e.mean.is_finite()),
        ratios_decrease: ratios.windows(2).all(|w| w[1] < w[0]),
        cusum,
        loo: loo_delays,
        ratios,
    })
}

/// Runs `detector` over `observations` and records the statistic at each step
/// (`None` during warm-up).
pub fn trace<D: Detector + ?Sized>(detector: &mut D, observations: &[f64]) -> Vec<Option<f64>> {
    observations.iter().map(|&x| detector.observe(x)).collect()
}
