//! Calibrating abstention policies for a target coverage `c`.
//!
//! Full abstention thresholds the summed variance of each series at the
//! empirical quantile of the calibration scores, with a randomized
//! tie-break at the threshold. Partial and interval abstention pick, per
//! series, the selection minimizing `risk - gamma * length`; `gamma` is found
//! by bisection on the calibration set, and the two bracketing values are
//! mixed with probability `p` so the expected calibration coverage is
//! exactly `c * H`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forecaster::ForecastBundle;
use crate::risk::{RiskProfile, SelectionDecision, WindowTable};

/// Hard cap on bisection steps.
pub const MAX_BISECTION_STEPS: usize = 200;
/// Default bisection tolerance, relative to the initial upper bound.
pub const RELATIVE_GAMMA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSpec {
    pub c: f64,
    pub horizon: usize,
    /// Absolute bisection tolerance on gamma; `None` uses
    /// [`RELATIVE_GAMMA_TOLERANCE`] times the initial upper bound.
    pub epsilon_gamma: Option<f64>,
}

impl CoverageSpec {
    pub fn new(c: f64, horizon: usize) -> Result<Self> {
        let spec = Self {
            c,
            horizon,
            epsilon_gamma: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_epsilon(mut self, eps: f64) -> Result<Self> {
        self.epsilon_gamma = Some(eps);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::invalid(format!(
                "target coverage {} outside (0, 1]",
                self.c
            )));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if let Some(eps) = self.epsilon_gamma {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::invalid(format!(
                    "epsilon_gamma {eps} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Required mean accepted length, `c * H`.
    pub fn target_length(&self) -> f64 {
        self.c * self.horizon as f64
    }
}

/// Which family of selections a policy may return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Partial,
    Interval,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Partial => "partial",
            Mode::Interval => "interval",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "partial" => Ok(Mode::Partial),
            "interval" => Ok(Mode::Interval),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Full abstention

/// Accept a series iff its score is below `tau_hat`; at exactly `tau_hat`,
/// accept with probability `kappa_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullPolicy {
    /// `+inf` means "accept everything" (c = 1).
    pub tau_hat: f64,
    pub kappa_hat: f64,
    pub c: f64,
}

impl FullPolicy {
    pub fn accept_all(&self) -> bool {
        self.tau_hat == f64::INFINITY
    }

    /// Probability that a series with this score is forecast in full.
    pub fn acceptance_probability(&self, score: f64) -> f64 {
        if self.accept_all() || score < self.tau_hat {
            1.0
        } else if score == self.tau_hat {
            self.kappa_hat
        } else {
            0.0
        }
    }

    /// Expected accepted fraction over a score sample.
    pub fn expected_acceptance(&self, scores: &[f64]) -> f64 {
        let m = scores.len() as f64;
        let (mut below, mut tied) = (0usize, 0usize);
        for &s in scores {
            if self.accept_all() || s < self.tau_hat {
                below += 1;
            } else if s == self.tau_hat {
                tied += 1;
            }
        }
        below as f64 / m + self.kappa_hat * tied as f64 / m
    }
}

/// Summed variance over the horizon for each bundle.
pub fn full_scores(bundles: &[ForecastBundle]) -> Result<Vec<f64>> {
    let h = consistent_horizon(bundles)?;
    let _ = h;
    Ok(bundles.iter().map(|b| b.variances.iter().sum()).collect())
}

/// Empirical threshold and tie probability for the target coverage.
///
/// `tau_hat` is the smallest observed score `v` with
/// `#{score < v'} / m >= c` for every `v' > v`, i.e. the `k`-th smallest score
/// where `k` is the least count with `k / m >= c`.
pub fn calibrate_full(scores: &[f64], spec: &CoverageSpec) -> Result<FullPolicy> {
    spec.validate()?;
    if scores.is_empty() {
        return Err(Error::invalid("no calibration scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("calibration scores must be finite"));
    }
    let c = spec.c;
    if c == 1.0 {
        return Ok(FullPolicy {
            tau_hat: f64::INFINITY,
            kappa_hat: 1.0,
            c,
        });
    }
    let m = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (1..=m)
        .find(|&k| k as f64 / m as f64 >= c)
        .expect("k = m always satisfies c <= 1");
    let tau = sorted[k - 1];
    let below = sorted.partition_point(|&s| s < tau);
    let tied = sorted.partition_point(|&s| s <= tau) - below;
    let kappa = ((c * m as f64 - below as f64) / tied as f64).clamp(0.0, 1.0);
    Ok(FullPolicy {
        tau_hat: tau,
        kappa_hat: kappa,
        c,
    })
}

// ---------------------------------------------------------------------------
// Partial and interval abstention

/// Smallest `e` in `0..=H` minimizing `prefix[e] - gamma * e`.
pub fn select_end_partial(profile: &RiskProfile, gamma: f64) -> usize {
    let prefix = profile.prefix();
    let mut best = (0, 0.0);
    for (e, &r) in prefix.iter().enumerate().skip(1) {
        let obj = r - gamma * e as f64;
        if obj < best.1 {
            best = (e, obj);
        }
    }
    best.0
}

/// Lowest `risk - gamma * length` over all contiguous intervals and the
/// empty selection. Ties go to the shortest length, then the earliest start.
pub fn select_interval(profile: &RiskProfile, gamma: f64) -> SelectionDecision {
    select_interval_in(&profile.windows_by_length(), gamma)
}

/// [`select_interval`] against a precomputed window table.
pub fn select_interval_in(table: &WindowTable, gamma: f64) -> SelectionDecision {
    let h = best_length(table, gamma);
    if h == 0 {
        SelectionDecision::REJECT
    } else {
        let s = table.start(h);
        SelectionDecision {
            start: s,
            end: s + h - 1,
        }
    }
}

fn best_length(table: &WindowTable, gamma: f64) -> usize {
    let mut best = (0, 0.0);
    for h in 1..=table.horizon() {
        let cost = table.risk(h) - gamma * h as f64;
        if cost < best.1 {
            best = (h, cost);
        }
    }
    best.0
}

/// Calibration profiles prepared for repeated selection at many `gamma`.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    mode: Mode,
    profiles: Vec<RiskProfile>,
    tables: Vec<WindowTable>,
    exec: Execution,
}

impl CalibrationSet {
    pub fn new(profiles: Vec<RiskProfile>, mode: Mode) -> Result<Self> {
        Self::with_execution(profiles, mode, Execution::default())
    }

    pub fn with_execution(profiles: Vec<RiskProfile>, mode: Mode, exec: Execution) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::invalid("calibration set is empty"));
        }
        let h = profiles[0].horizon();
        if profiles.iter().any(|p| p.horizon() != h) {
            return Err(Error::invalid("calibration profiles differ in horizon"));
        }
        if mode == Mode::Full {
            return Err(Error::invalid(
                "full abstention is calibrated from scores, not a gamma search",
            ));
        }
        let tables = if mode == Mode::Interval {
            exec.map(&profiles, RiskProfile::windows_by_length)
        } else {
            Vec::new()
        };
        Ok(Self {
            mode,
            profiles,
            tables,
            exec,
        })
    }

    pub fn from_bundles(bundles: &[ForecastBundle], mode: Mode) -> Result<Self> {
        consistent_horizon(bundles)?;
        Self::new(bundles.iter().map(ForecastBundle::profile).collect(), mode)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.profiles[0].horizon()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn profiles(&self) -> &[RiskProfile] {
        &self.profiles
    }

    /// Per-series selection at `gamma`.
    pub fn decision(&self, i: usize, gamma: f64) -> SelectionDecision {
        match self.mode {
            Mode::Interval => select_interval_in(&self.tables[i], gamma),
            _ => SelectionDecision::prefix(select_end_partial(&self.profiles[i], gamma)),
        }
    }

    pub fn decisions(&self, gamma: f64) -> Vec<SelectionDecision> {
        self.exec.map_range(self.len(), |i| self.decision(i, gamma))
    }

    /// Total accepted steps over the set at `gamma`.
    pub fn total_length(&self, gamma: f64) -> usize {
        match self.mode {
            Mode::Interval => self.exec.sum_usize(&self.tables, |t| best_length(t, gamma)),
            _ => self
                .exec
                .sum_usize(&self.profiles, |p| select_end_partial(p, gamma)),
        }
    }

    /// Mean accepted length at `gamma`.
    pub fn coverage(&self, gamma: f64) -> f64 {
        self.total_length(gamma) as f64 / self.len() as f64
    }

    /// Tightest `(gamma_low, gamma_high)` found by bisection with
    /// `coverage(gamma_low) <= c*H <= coverage(gamma_high)`.
    pub fn bracket(&self, spec: &CoverageSpec) -> Result<(f64, f64)> {
        spec.validate()?;
        if spec.horizon != self.horizon() {
            return Err(Error::invalid(format!(
                "coverage spec horizon {} does not match profiles ({})",
                spec.horizon,
                self.horizon()
            )));
        }
        let slots = (self.len() * self.horizon()) as f64;
        let frac = |gamma: f64| self.total_length(gamma) as f64 / slots;

        let mut high = self
            .profiles
            .iter()
            .map(RiskProfile::total)
            .fold(0.0, f64::max);
        if !(high > 0.0) {
            high = 1.0;
        }
        // A reward at the largest total risk can still tie with the last
        // marginal step; widen until the whole horizon is taken.
        let mut doublings = 0;
        while frac(high) < spec.c {
            high *= 2.0;
            doublings += 1;
            if doublings > 1100 || !high.is_finite() {
                return Err(Error::invalid(
                    "no finite gamma reaches the target coverage",
                ));
            }
        }
        let eps = spec
            .epsilon_gamma
            .unwrap_or(RELATIVE_GAMMA_TOLERANCE * high);
        let mut low = 0.0;
        for _ in 0..MAX_BISECTION_STEPS {
            if high - low <= eps {
                break;
            }
            let mid = 0.5 * (low + high);
            let cov = frac(mid);
            if cov == spec.c {
                return Ok((mid, mid));
            } else if cov < spec.c {
                low = mid;
            } else {
                high = mid;
            }
        }
        Ok((low, high))
    }
}

/// Mean accepted length over `profiles` at `gamma`.
pub fn expected_coverage(profiles: &[RiskProfile], gamma: f64, mode: Mode) -> Result<f64> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "gamma {gamma} must be finite and >= 0"
        )));
    }
    let set = CalibrationSet::new(profiles.to_vec(), mode)?;
    Ok(set.coverage(gamma))
}

pub fn bracket_gamma(
    profiles: &[RiskProfile],
    spec: &CoverageSpec,
    mode: Mode,
) -> Result<(f64, f64)> {
    if spec.target_length() > spec.horizon as f64 {
        return Err(Error::invalid("target length exceeds the horizon"));
    }
    CalibrationSet::new(profiles.to_vec(), mode)?.bracket(spec)
}

/// Probability of using the low bracket end so that the mixture's expected
/// coverage equals `target`.
pub fn mixing_probability(phi_low: f64, phi_high: f64, target: f64) -> Result<f64> {
    let tol = 1e-9 * target.abs().max(1.0);
    if phi_low > target + tol || target > phi_high + tol {
        return Err(Error::invalid(format!(
            "target {target} is not bracketed by [{phi_low}, {phi_high}]"
        )));
    }
    let denom = phi_low - phi_high;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(((target - phi_high) / denom).clamp(0.0, 1.0))
}

/// Randomized reward policy: `gamma_low` with probability `p`, otherwise
/// `gamma_high`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangePolicy {
    pub mode: Mode,
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub p: f64,
    pub c: f64,
}

impl LagrangePolicy {
    /// Selection for one profile at a fixed reward.
    pub fn select(&self, profile: &RiskProfile, gamma: f64) -> SelectionDecision {
        match self.mode {
            Mode::Interval => select_interval(profile, gamma),
            _ => SelectionDecision::prefix(select_end_partial(profile, gamma)),
        }
    }

    /// Expected mean accepted length of the mixture over a set.
    pub fn expected_coverage(&self, set: &CalibrationSet) -> f64 {
        self.p * set.coverage(self.gamma_low) + (1.0 - self.p) * set.coverage(self.gamma_high)
    }
}

pub fn calibrate_lagrange(
    bundles: &[ForecastBundle],
    spec: &CoverageSpec,
    mode: Mode,
) -> Result<LagrangePolicy> {
    let set = CalibrationSet::from_bundles(bundles, mode)?;
    calibrate_lagrange_set(&set, spec)
}

/// Bracket, then mix, on an already-prepared calibration set.
pub fn calibrate_lagrange_set(set: &CalibrationSet, spec: &CoverageSpec) -> Result<LagrangePolicy> {
    let (gamma_low, gamma_high) = set.bracket(spec)?;
    let (phi_low, phi_high) = if gamma_low == gamma_high {
        let phi = set.coverage(gamma_low);
        (phi, phi)
    } else {
        (set.coverage(gamma_low), set.coverage(gamma_high))
    };
    let p = mixing_probability(phi_low, phi_high, spec.target_length())?;
    Ok(LagrangePolicy {
        mode: set.mode(),
        gamma_low,
        gamma_high,
        p,
        c: spec.c,
    })
}

fn consistent_horizon(bundles: &[ForecastBundle]) -> Result<usize> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("no forecast bundles"))?;
    let h = first.horizon();
    if let Some(b) = bundles.iter().find(|b| b.horizon() != h) {
        return Err(Error::invalid(format!(
            "bundle `{}` has horizon {}, expected {h}",
            b.id,
            b.horizon()
        )));
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Serialization

/// A calibrated policy of any mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Full(FullPolicy),
    Lagrange(LagrangePolicy),
}

#[derive(Serialize, Deserialize)]
struct FullRecord {
    mode: Mode,
    c: f64,
    #[serde(with = "threshold")]
    tau: f64,
    kappa: f64,
}

#[derive(Serialize, Deserialize)]
struct LagrangeRecord {
    mode: Mode,
    c: f64,
    gamma_low: f64,
    gamma_high: f64,
    p: f64,
}

/// JSON has no infinity; the accept-all threshold is written as `"inf"`.
mod threshold {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *tau == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*tau)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

impl Policy {
    pub fn mode(&self) -> Mode {
        match self {
            Policy::Full(_) => Mode::Full,
            Policy::Lagrange(p) => p.mode,
        }
    }

    pub fn c(&self) -> f64 {
        match self {
            Policy::Full(p) => p.c,
            Policy::Lagrange(p) => p.c,
        }
    }

    /// Single-line JSON record with a fixed field order.
    pub fn to_json(&self) -> Result<String> {
        Ok(match *self {
            Policy::Full(p) => serde_json::to_string(&FullRecord {
                mode: Mode::Full,
                c: p.c,
                tau: p.tau_hat,
                kappa: p.kappa_hat,
            })?,
            Policy::Lagrange(p) => serde_json::to_string(&LagrangeRecord {
                mode: p.mode,
                c: p.c,
                gamma_low: p.gamma_low,
                gamma_high: p.gamma_high,
                p: p.p,
            })?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let mode: Mode = serde_json::from_value(value.get("mode").cloned().unwrap_or_default())?;
        let policy = match mode {
            Mode::Full => {
                let r: FullRecord = serde_json::from_value(value)?;
                Policy::Full(FullPolicy {
                    tau_hat: r.tau,
                    kappa_hat: r.kappa,
                    c: r.c,
                })
            }
            Mode::Partial | Mode::Interval => {
                let r: LagrangeRecord = serde_json::from_value(value)?;
                Policy::Lagrange(LagrangePolicy {
                    mode: r.mode,
                    gamma_low: r.gamma_low,
                    gamma_high: r.gamma_high,
                    p: r.p,
                    c: r.c,
                })
            }
        };
        Ok(policy)
    }
}
