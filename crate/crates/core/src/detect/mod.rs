//! Sequential detectors and their stopping rules.

mod cusum;
mod glr;
mod loo;
mod policy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GaussianModel, SampleStream};

pub use cusum::CusumState;
pub use glr::{glr_window_stat, GlrWindowState};
pub use loo::{loo_llr, BandwidthMode, LooSettings, LooWindowState};
pub use policy::{threshold_from_alpha, window_from_alpha, ThresholdPolicy, WindowPolicy};

/// A running change-detection statistic fed one observation at a time.
pub trait Detector {
    /// Consumes the next observation and returns the updated statistic, or
    /// `None` while the detector is still warming up.
    fn observe(&mut self, x: f64) -> Option<f64>;

    /// Number of observations consumed.
    fn time(&self) -> u64;

    fn reset(&mut self);
}

/// Outcome of running a stopping rule on a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    /// First time the statistic reached the threshold; `None` when censored.
    pub stopping_time: Option<u64>,
    pub statistic_at_stop: Option<f64>,
    /// Observations consumed, equal to `max_steps` when censored.
    pub steps: u64,
}

impl Alarm {
    pub fn stopped(&self) -> bool {
        self.stopping_time.is_some()
    }
}

/// Feeds `stream` into `detector` until the statistic reaches `threshold` or
/// `max_steps` observations have been consumed.
pub fn run_detector<D: Detector + ?Sized>(
    detector: &mut D,
    threshold: f64,
    stream: &mut SampleStream,
    max_steps: u64,
) -> Alarm {
    run_on(detector, threshold, (0..max_steps).map(|_| stream.draw()))
}

/// Same stopping rule over any finite sequence of observations.
pub fn run_on<D, I>(detector: &mut D, threshold: f64, observations: I) -> Alarm
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let mut steps = 0;
    for x in observations {
        steps += 1;
        if let Some(stat) = detector.observe(x) {
            if stat >= threshold {
                return Alarm {
                    stopping_time: Some(detector.time()),
                    statistic_at_stop: Some(stat),
                    steps,
                };
            }
        }
    }
    Alarm {
        stopping_time: None,
        statistic_at_stop: None,
        steps,
    }
}

/// Running maximum of a detector's statistic along one sample path.
///
/// Since the statistic does not depend on the threshold, the stopping time for
/// any `b ≤ ceiling` is the first record time whose value reaches `b`; one path
/// therefore answers a whole threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordPath {
    /// `(time, running maximum)` at each strict increase of the maximum.
    pub records: Vec<(u64, f64)>,
    pub steps: u64,
}

impl RecordPath {
    pub fn stopping_time(&self, threshold: f64) -> Option<u64> {
        let idx = self.records.partition_point(|&(_, v)| v < threshold);
        self.records.get(idx).map(|&(t, _)| t)
    }
}

/// Runs until the statistic reaches `ceiling` or `max_steps` is hit, keeping
/// every new running maximum.
pub fn run_records<D: Detector + ?Sized>(
    detector: &mut D,
    ceiling: f64,
    stream: &mut SampleStream,
    max_steps: u64,
) -> RecordPath {
    let mut records = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut steps = 0;
    while steps < max_steps {
        steps += 1;
        if let Some(stat) = detector.observe(stream.draw()) {
            if stat > best {
                best = stat;
                records.push((detector.time(), stat));
                if stat >= ceiling {
                    break;
                }
            }
        }
    }
    RecordPath { records, steps }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Cusum,
    WlGlr,
    LooCusum,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Cusum, DetectorKind::WlGlr, DetectorKind::LooCusum];

    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Cusum => "cusum",
            DetectorKind::WlGlr => "wl-glr",
            DetectorKind::LooCusum => "loo-cusum",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cusum" => Ok(DetectorKind::Cusum),
            "wl-glr" | "glr" => Ok(DetectorKind::WlGlr),
            "loo-cusum" | "loo" => Ok(DetectorKind::LooCusum),
            other => Err(Error::domain(format!("unknown detector '{other}'"))),
        }
    }
}

/// Everything needed to build a fresh detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    /// `m_α`; ignored by CuSum.
    pub window: usize,
    pub loo: LooSettings,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, window: usize) -> Self {
        Self {
            kind,
            window,
            loo: LooSettings::default(),
        }
    }

    /// `post` is only read by CuSum.
    pub fn build(&self, pre: GaussianModel, post: Option<GaussianModel>) -> Result<AnyDetector> {
        Ok(match self.kind {
            DetectorKind::Cusum => {
                let post = post.ok_or_else(|| {
                    Error::precondition("CuSum needs a fully specified post-change density")
                })?;
                AnyDetector::Cusum(CusumState::new(pre, post))
            }
            DetectorKind::WlGlr => AnyDetector::WlGlr(GlrWindowState::new(pre, self.window)?),
            DetectorKind::LooCusum => {
                AnyDetector::LooCusum(Box::new(LooWindowState::new(pre, self.window, self.loo)?))
            }
        })
    }
}

/// Enum dispatch over the three detectors.
#[derive(Debug, Clone)]
pub enum AnyDetector {
    Cusum(CusumState),
    WlGlr(GlrWindowState),
    LooCusum(Box<LooWindowState>),
}

impl Detector for AnyDetector {
    #[inline]
    fn observe(&mut self, x: f64) -> Option<f64> {
        match self {
            AnyDetector::Cusum(d) => d.observe(x),
            AnyDetector::WlGlr(d) => d.observe(x),
            AnyDetector::LooCusum(d) => d.observe(x),
        }
    }

    fn time(&self) -> u64 {
        match self {
            AnyDetector::Cusum(d) => d.time(),
            AnyDetector::WlGlr(d) => d.time(),
            AnyDetector::LooCusum(d) => d.time(),
        }
    }

    fn reset(&mut self) {
        match self {
            AnyDetector::Cusum(d) => d.reset(),
            AnyDetector::WlGlr(d) => d.reset(),
            AnyDetector::LooCusum(d) => d.reset(),
        }
    }
}
