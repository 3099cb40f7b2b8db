//! Test-time application of calibrated policies, plus the accept-first-`cH`
//! baseline.

use crate::calibration::{CoverageSpec, FullPolicy, LagrangePolicy, Mode, Policy};
use crate::error::{Error, Result};
use crate::forecaster::ForecastBundle;
use crate::risk::SelectionDecision;
use crate::rng::SeededRng;

/// Full-horizon accept/reject by thresholding the summed variance.
pub fn decide_full(
    policy: &FullPolicy,
    score: f64,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<SelectionDecision> {
    if !score.is_finite() {
        return Err(Error::invalid(format!("score {score} is not finite")));
    }
    let accept = if policy.accept_all() || score < policy.tau_hat {
        true
    } else if score == policy.tau_hat {
        rng.bernoulli(policy.kappa_hat)
    } else {
        false
    };
    Ok(if accept {
        SelectionDecision::prefix(horizon)
    } else {
        SelectionDecision::REJECT
    })
}

/// Draws the reward (`gamma_low` w.p. `p`) and selects for one bundle.
pub fn decide_lagrange(
    policy: &LagrangePolicy,
    bundle: &ForecastBundle,
    rng: &mut SeededRng,
) -> SelectionDecision {
    let gamma = if rng.bernoulli(policy.p) {
        policy.gamma_low
    } else {
        policy.gamma_high
    };
    policy.select(&bundle.profile(), gamma)
}

/// Accept the first `floor(cH)` steps, and step `floor(cH) + 1` with
/// probability `cH - floor(cH)`.
pub fn decide_accept_ch(spec: &CoverageSpec, rng: &mut SeededRng) -> SelectionDecision {
    let (base, frac) = accept_ch_split(spec);
    if frac > 0.0 && rng.bernoulli(frac) {
        SelectionDecision::prefix(base + 1)
    } else {
        SelectionDecision::prefix(base)
    }
}

/// `(floor(cH), cH - floor(cH))`, with representation noise snapped away.
pub fn accept_ch_split(spec: &CoverageSpec) -> (usize, f64) {
    let target = spec.target_length();
    let nearest = target.round();
    if (target - nearest).abs() < 1e-9 {
        return ((nearest as usize).min(spec.horizon), 0.0);
    }
    let base = target.floor();
    (base as usize, target - base)
}

/// Decision for one bundle under any calibrated policy.
pub fn decide(
    policy: &Policy,
    bundle: &ForecastBundle,
    rng: &mut SeededRng,
) -> Result<SelectionDecision> {
    match policy {
        Policy::Full(p) => {
            let score: f64 = bundle.variances.iter().sum();
            decide_full(p, score, bundle.horizon(), rng)
        }
        Policy::Lagrange(p) => {
            debug_assert_ne!(p.mode, Mode::Full);
            Ok(decide_lagrange(p, bundle, rng))
        }
    }
}
