//! Run configuration: built-in defaults, then the seed environment variable,
//! then the TOML file, then command-line flags.

use anyhow::{bail, Context};
use loocusum::density::{BandwidthPolicy, Kernel};
use loocusum::detect::{
    threshold_from_alpha, window_from_alpha, BandwidthMode, DetectorKind, DetectorSpec,
    LooSettings, WindowPolicy,
};
use loocusum::model::{kl_divergence, GaussianModel};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "LOOCUSUM_SEED";
pub const DEFAULT_SEED: u64 = 20_190_612;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Detect,
    Sweep,
    DiagnoseDensity,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian {
    pub fn model(&self) -> anyhow::Result<GaussianModel> {
        GaussianModel::new(self.mean, self.variance).map_err(Into::into)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unknown {
    Unknown,
}

/// Post-change density: parameters, or the string `"unknown"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Post {
    Known(Gaussian),
    Unknown(Unknown),
}

/// Either `"auto"` or an explicit ascending list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Auto(Auto),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// False-alarm bound at `b_α` for every configured window.
    Lemma2,
    /// CuSum delay slope and the LOO/CuSum delay-ratio trend.
    Slope,
    /// Delays of all three detectors at a common MTFA.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub checks: Vec<Check>,
    /// CuSum thresholds for the slope check; also the `|ln α|` grid of the
    /// LOO/CuSum comparison.
    pub slope_thresholds: Vec<f64>,
    /// Window of the slope and matched comparisons.
    pub compare_window: usize,
    pub target_mtfa: f64,
    pub cusum_thresholds: Vec<f64>,
    pub glr_thresholds: Vec<f64>,
    pub loo_thresholds: Vec<f64>,
    pub loo_far_trials: u64,
    /// Added to `b_α` in the false-alarm check; only for demonstrating failures.
    pub threshold_offset: f64,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: vec![Check::Lemma2, Check::Slope, Check::Matched],
            slope_thresholds: vec![6.0, 9.0, 12.0],
            compare_window: 200,
            target_mtfa: 1e3,
            cusum_thresholds: grid(3.0, 6.0, 0.25),
            glr_thresholds: grid(5.0, 7.5, 0.25),
            loo_thresholds: grid(5.5, 7.5, 0.25),
            loo_far_trials: 500,
            threshold_offset: 0.0,
        }
    }
}

impl VerifyConfig {
    /// Seconds-scale preset: the false-alarm check alone.
    pub fn smoke() -> Self {
        Self {
            checks: vec![Check::Lemma2],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `-` for standard output.
    pub output: String,
    pub alpha: f64,
    pub detectors: Option<Vec<DetectorKind>>,
    /// Explicit window sizes; when absent the window policy picks one.
    pub windows: Option<Vec<usize>>,
    pub window_f: f64,
    /// Defaults to `D(p₁ ‖ p₀)` when the post-change density is known.
    pub kl_lower_bound: Option<f64>,
    pub thresholds: Thresholds,
    pub trials: Option<u64>,
    pub delay_trials: u64,
    /// Defaults to `ceil(20 / alpha)`.
    pub mtfa_max_steps: Option<u64>,
    pub change_point: u64,
    pub kernel: Kernel,
    pub bandwidth: BandwidthPolicy,
    pub bandwidth_mode: BandwidthMode,
    pub sizes: Vec<usize>,
    /// Newline-delimited observations for `detect`; `-` for standard input.
    pub input: String,
    /// Statistic trace destination for `detect`.
    pub trace: Option<String>,
    pub pre: Gaussian,
    pub post: Post,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output: "-".into(),
            alpha: 0.01,
            detectors: None,
            windows: None,
            window_f: 2.0,
            kl_lower_bound: None,
            thresholds: Thresholds::Auto(Auto::Auto),
            trials: None,
            delay_trials: 5000,
            mtfa_max_steps: None,
            change_point: 1,
            kernel: Kernel::Gaussian,
            bandwidth: BandwidthPolicy::FifthRoot,
            bandwidth_mode: BandwidthMode::PerSegment,
            sizes: vec![50, 100, 200, 400, 800],
            input: "-".into(),
            trace: None,
            pre: Gaussian {
                mean: 0.0,
                variance: 1.0,
            },
            post: Post::Known(Gaussian {
                mean: 0.5,
                variance: 1.0,
            }),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("cannot serialize configuration")
    }

    pub fn pre_model(&self) -> anyhow::Result<GaussianModel> {
        self.pre.model().context("[pre]")
    }

    pub fn post_model(&self) -> anyhow::Result<Option<GaussianModel>> {
        match self.post {
            Post::Known(g) => Ok(Some(g.model().context("[post]")?)),
            Post::Unknown(_) => Ok(None),
        }
    }

    /// Post-change density for commands that simulate it.
    pub fn require_post(&self, what: &str) -> anyhow::Result<GaussianModel> {
        self.post_model()?
            .with_context(|| format!("{what} simulates post-change data and needs [post] parameters"))
    }

    pub fn loo_settings(&self) -> LooSettings {
        LooSettings {
            kernel: self.kernel,
            bandwidth: self.bandwidth,
            mode: self.bandwidth_mode,
            ..LooSettings::default()
        }
    }

    pub fn spec(&self, kind: DetectorKind, window: usize) -> DetectorSpec {
        DetectorSpec {
            kind,
            window,
            loo: self.loo_settings(),
        }
    }

    pub fn max_steps(&self) -> u64 {
        self.mtfa_max_steps
            .unwrap_or_else(|| loocusum::sim::default_max_steps(self.alpha))
    }

    /// Fills every command-dependent default so the dumped config is explicit.
    pub fn resolve(&mut self, command: Command) -> anyhow::Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must lie in (0, 1), got {}", self.alpha);
        }
        self.pre_model()?;
        let post = self.post_model()?;
        if self.detectors.is_none() {
            self.detectors = Some(vec![DetectorKind::LooCusum]);
        }
        if self.detectors.as_ref().is_some_and(|d| d.is_empty()) {
            bail!("detectors must not be empty");
        }
        if self.kl_lower_bound.is_none() {
            if let Some(p) = post {
                self.kl_lower_bound = Some(kl_divergence(&p, &self.pre_model()?));
            }
        }
        if self.windows.is_none() {
            let Some(kl) = self.kl_lower_bound else {
                bail!("windows or kl_lower_bound is required when post is unknown");
            };
            let m = window_from_alpha(&WindowPolicy {
                f: self.window_f,
                kl_lower_bound: kl,
                alpha: self.alpha,
            })?;
            self.windows = Some(vec![m]);
        }
        let windows = self.windows.as_ref().unwrap();
        if windows.is_empty() || windows.contains(&0) {
            bail!("windows must be a nonempty list of positive sizes");
        }
        if self.trials.is_none() {
            self.trials = Some(match command {
                Command::DiagnoseDensity => 200,
                _ => 2000,
            });
        }
        if self.mtfa_max_steps.is_none() {
            self.mtfa_max_steps = Some(loocusum::sim::default_max_steps(self.alpha));
        }
        if self.trials == Some(0) || self.delay_trials == 0 {
            bail!("trials must be >= 1");
        }
        if self.change_point == 0 {
            bail!("change_point must be >= 1");
        }
        if let Thresholds::List(list) = &self.thresholds {
            if list.is_empty() || list.iter().any(|b| !b.is_finite()) {
                bail!("thresholds must be a nonempty list of finite values or \"auto\"");
            }
            if list.windows(2).any(|w| w[1] < w[0]) {
                bail!("thresholds must be ascending");
            }
        }
        let kinds = self.detectors.clone().unwrap();
        if kinds.contains(&DetectorKind::Cusum) && post.is_none() {
            bail!("cusum needs a fully specified [post] density");
        }
        match command {
            Command::Detect => {
                if kinds.len() != 1 || self.windows.as_ref().unwrap().len() != 1 {
                    bail!("detect runs exactly one detector with one window");
                }
                if let Thresholds::List(list) = &self.thresholds {
                    if list.len() != 1 {
                        bail!("detect takes a single threshold");
                    }
                }
            }
            Command::Sweep => {
                self.require_post("sweep")?;
            }
            Command::DiagnoseDensity => {
                if self.sizes.len() < 3 {
                    bail!("sizes needs at least 3 entries for the rate fit, got {}", self.sizes.len());
                }
                if self.sizes.windows(2).any(|w| w[1] <= w[0]) || self.sizes[0] < 2 {
                    bail!("sizes must be strictly increasing and >= 2");
                }
            }
            Command::Verify => {
                self.require_post("verify")?;
                if self.verify.checks.is_empty() {
                    bail!("verify.checks must not be empty");
                }
            }
        }
        Ok(())
    }

    /// Threshold that fires the alarm in `detect`, and the top of an automatic
    /// sweep grid: `|ln α|` for CuSum, `b_α = |ln α| + ln(8m)` otherwise.
    pub fn auto_threshold(&self, kind: DetectorKind, window: usize) -> anyhow::Result<f64> {
        Ok(match kind {
            DetectorKind::Cusum => self.alpha.ln().abs(),
            _ => threshold_from_alpha(self.alpha, window)?,
        })
    }

    /// Sweep grid: the explicit list, or 12 evenly spaced values from 1 to the
    /// automatic threshold.
    pub fn sweep_thresholds(&self, kind: DetectorKind, window: usize) -> anyhow::Result<Vec<f64>> {
        match &self.thresholds {
            Thresholds::List(list) => Ok(list.clone()),
            Thresholds::Auto(_) => {
                let top = self.auto_threshold(kind, window)?;
                let lo = 1.0f64.min(top);
                Ok((0..12).map(|i| lo + (top - lo) * i as f64 / 11.0).collect())
            }
        }
    }
}
