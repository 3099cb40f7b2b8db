//! Optimal bounded abstention for multi-horizon forecasting.
//!
//! A selective forecaster predicts `H` future steps and may decline to
//! forecast some of them. Three selection families are supported:
//!
//! - **full**: forecast the whole horizon or nothing;
//! - **partial**: forecast a prefix `1..=e`;
//! - **interval**: forecast any contiguous block `s..=e`.
//!
//! Each is calibrated on held-out series so that, on average, a fraction `c`
//! of all horizon steps is forecast, while the mean squared error over the
//! accepted steps (the selective risk) is as small as possible. The plug-in
//! per-step risk is a variance estimate from [`forecaster`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod forecaster;
pub mod oracle;
pub mod policy;
pub mod risk;
pub mod rng;

pub use calibration::{
    bracket_gamma, calibrate_full, calibrate_lagrange, expected_coverage, full_scores,
    mixing_probability, select_end_partial, select_interval, CalibrationSet, CoverageSpec,
    FullPolicy, LagrangePolicy, Mode, Policy,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use forecaster::{ForecastBundle, LinearTwoHeadModel, SeriesWindow};
pub use risk::{RiskProfile, SelectionDecision};
pub use rng::SeededRng;
