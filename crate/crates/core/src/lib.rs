//! Correlation-structure analytics for equity return panels.
//!
//! The crate computes, for rolling windows over a panel of daily returns,
//! the largest eigenvalue of the correlation matrix normalized to `[0, 1]`,
//! the mean pairwise correlation, and their difference (the complexity
//! gap). Around it sit cross-sectional ordinal-pattern entropy, shock-phase
//! segmentation, monthly sector heatmaps, a Monte Carlo minimum-variance
//! portfolio study, and a factor-model panel generator with scripted
//! regimes.
//!
//! Everything here is `no_std` with `alloc`; file formats, the command line
//! and thread pools live in the `gapscope` crate.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod ordinal;
pub mod panel;
pub mod portfolio;
pub mod regimes;
pub mod series;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
