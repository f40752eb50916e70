//! Quickest change detection with a leave-one-out CuSum test.
//!
//! The crate provides three sequential detectors for a stream of scalar
//! observations whose density switches from a known `p₀` to some `p₁`:
//!
//! * [`detect::CusumState`]: Page's CuSum, which needs `p₁`;
//! * [`detect::GlrWindowState`]: window-limited GLR-CuSum for a Gaussian mean shift;
//! * [`detect::LooWindowState`]: window-limited CuSum driven by leave-one-out
//!   kernel density estimates of the unknown `p₁`.
//!
//! [`sim`] is a Monte Carlo harness measuring mean time to false alarm and
//! detection delay; [`density`] holds the estimator and its diagnostics.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod detect;
pub mod error;
pub mod exec;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
pub use exec::Execution;
