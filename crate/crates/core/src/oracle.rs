//! Exhaustive optimality oracles for tiny instances.
//!
//! Every deterministic assignment of one selection per series is enumerated;
//! the feasible ones accept at least a fraction `c` of all `m * H` horizon
//! steps, and the oracle returns the smallest ratio of accepted risk to
//! accepted length. Used to certify the calibrated policies and to check
//! that the ratio optimum also minimizes the linearized objective
//! `risk - lambda * length` at its own optimal ratio `lambda`.

use crate::calibration::{CalibrationSet, FullPolicy, LagrangePolicy, Mode};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::risk::{RiskProfile, SelectionDecision};

/// Largest subset count for full abstention (`m <= 20`).
pub const FULL_ENUMERATION_LIMIT: u128 = 1 << 20;
/// Largest assignment count for partial and interval abstention.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 1_000_000;

const CHUNK: u128 = 4096;

/// Per-series option: accepted risk and accepted length.
#[derive(Debug, Clone, Copy)]
struct Choice {
    risk: f64,
    length: usize,
    decision: SelectionDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Minimal selective risk over feasible deterministic assignments.
    pub risk: f64,
    pub selections: Vec<SelectionDecision>,
    /// Number of assignments enumerated.
    pub enumerated: u128,
}

impl OracleSolution {
    /// Indices of series that forecast at least one step.
    pub fn accepted(&self) -> Vec<usize> {
        self.selections
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.is_rejection())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Configurable enumeration.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub limit: u128,
    pub exec: Execution,
}

impl Default for Oracle {
    fn default() -> Self {
        Self {
            limit: DEFAULT_ENUMERATION_LIMIT,
            exec: Execution::default(),
        }
    }
}

fn choices_for(profile: &RiskProfile, mode: Mode) -> Vec<Choice> {
    let h = profile.horizon();
    let reject = Choice {
        risk: 0.0,
        length: 0,
        decision: SelectionDecision::REJECT,
    };
    match mode {
        Mode::Full => vec![
            reject,
            Choice {
                risk: profile.total(),
                length: h,
                decision: SelectionDecision::prefix(h),
            },
        ],
        Mode::Partial => (0..=h)
            .map(|e| Choice {
                risk: profile.prefix()[e],
                length: e,
                decision: SelectionDecision::prefix(e),
            })
            .collect(),
        Mode::Interval => {
            let mut out = vec![reject];
            for s in 1..=h {
                for e in s..=h {
                    out.push(Choice {
                        risk: profile.span(s, e),
                        length: e + 1 - s,
                        decision: SelectionDecision { start: s, end: e },
                    });
                }
            }
            out
        }
    }
}

/// Number of assignments, saturating instead of overflowing.
pub fn assignment_count(m: usize, horizon: usize, mode: Mode) -> u128 {
    let per = match mode {
        Mode::Full => 2u128,
        Mode::Partial => horizon as u128 + 1,
        Mode::Interval => 1 + (horizon as u128 * (horizon as u128 + 1)) / 2,
    };
    (0..m).fold(1u128, |acc, _| acc.saturating_mul(per))
}

impl Oracle {
    pub fn with_limit(limit: u128) -> Self {
        Self {
            limit,
            ..Self::default()
        }
    }

    pub fn solve(&self, profiles: &[RiskProfile], c: f64, mode: Mode) -> Result<OracleSolution> {
        let horizon = check_instance(profiles, c)?;
        let needed = assignment_count(profiles.len(), horizon, mode);
        if needed > self.limit {
            return Err(Error::BudgetExceeded {
                needed,
                limit: self.limit,
            });
        }
        let table: Vec<Vec<Choice>> = profiles.iter().map(|p| choices_for(p, mode)).collect();
        let slots = (profiles.len() * horizon) as f64;
        let feasible = |len: usize| len as f64 / slots >= c;

        let n_chunks = needed.div_ceil(CHUNK) as usize;
        let best = self
            .exec
            .map_range(n_chunks, |k| {
                let lo = k as u128 * CHUNK;
                let hi = (lo + CHUNK).min(needed);
                let mut best: Option<(f64, u128)> = None;
                let mut digits = decode(lo, &table);
                for flat in lo..hi {
                    let (risk, len) = totals(&table, &digits);
                    if feasible(len) {
                        let ratio = risk / len as f64;
                        if best.is_none_or(|(b, _)| ratio < b) {
                            best = Some((ratio, flat));
                        }
                    }
                    advance(&mut digits, &table);
                }
                best
            })
            .into_iter()
            .flatten()
            .fold(None::<(f64, u128)>, |acc, cand| match acc {
                Some(a) if a.0 < cand.0 || (a.0 == cand.0 && a.1 < cand.1) => Some(a),
                _ => Some(cand),
            });
        let (risk, flat) = best.ok_or_else(|| Error::invalid("no feasible assignment"))?;
        let digits = decode(flat, &table);
        Ok(OracleSolution {
            risk,
            selections: digits
                .iter()
                .zip(&table)
                .map(|(&d, opts)| opts[d].decision)
                .collect(),
            enumerated: needed,
        })
    }

    /// Whether the ratio optimum also minimizes `risk - lambda* * length`
    /// over the feasible set, with `lambda*` the optimal ratio.
    pub fn check_dinkelbach(&self, profiles: &[RiskProfile], c: f64, mode: Mode) -> Result<bool> {
        let opt = self.solve(profiles, c, mode)?;
        let lambda = opt.risk;
        let horizon = profiles[0].horizon();
        let table: Vec<Vec<Choice>> = profiles.iter().map(|p| choices_for(p, mode)).collect();
        let slots = (profiles.len() * horizon) as f64;
        let needed = opt.enumerated;

        let at_opt = {
            let (risk, len) =
                opt.selections
                    .iter()
                    .zip(profiles)
                    .fold((0.0, 0usize), |(r, l), (d, p)| {
                        let dr = if d.is_rejection() {
                            0.0
                        } else {
                            p.span(d.start, d.end)
                        };
                        (r + dr, l + d.len())
                    });
            risk - lambda * len as f64
        };
        let n_chunks = needed.div_ceil(CHUNK) as usize;
        let min_linear = self
            .exec
            .map_range(n_chunks, |k| {
                let lo = k as u128 * CHUNK;
                let hi = (lo + CHUNK).min(needed);
                let mut digits = decode(lo, &table);
                let mut best = f64::INFINITY;
                for _ in lo..hi {
                    let (risk, len) = totals(&table, &digits);
                    if len as f64 / slots >= c {
                        best = best.min(risk - lambda * len as f64);
                    }
                    advance(&mut digits, &table);
                }
                best
            })
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let scale = profiles
            .iter()
            .map(RiskProfile::total)
            .sum::<f64>()
            .max(1.0);
        let tol = 1e-9 * scale;
        Ok(at_opt.abs() <= tol && min_linear >= at_opt - tol)
    }
}

fn check_instance(profiles: &[RiskProfile], c: f64) -> Result<usize> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid(format!(
            "target coverage {c} outside (0, 1]"
        )));
    }
    let first = profiles
        .first()
        .ok_or_else(|| Error::invalid("oracle needs at least one series"))?;
    let h = first.horizon();
    if profiles.iter().any(|p| p.horizon() != h) {
        return Err(Error::invalid("oracle profiles differ in horizon"));
    }
    Ok(h)
}

/// Mixed-radix digits of `flat`, last series least significant.
fn decode(mut flat: u128, table: &[Vec<Choice>]) -> Vec<usize> {
    let mut digits = vec![0; table.len()];
    for (d, opts) in digits.iter_mut().zip(table).rev() {
        let base = opts.len() as u128;
        *d = (flat % base) as usize;
        flat /= base;
    }
    digits
}

fn advance(digits: &mut [usize], table: &[Vec<Choice>]) {
    for (d, opts) in digits.iter_mut().zip(table).rev() {
        *d += 1;
        if *d < opts.len() {
            return;
        }
        *d = 0;
    }
}

fn totals(table: &[Vec<Choice>], digits: &[usize]) -> (f64, usize) {
    let mut risk = 0.0;
    let mut len = 0;
    for (opts, &d) in table.iter().zip(digits) {
        risk += opts[d].risk;
        len += opts[d].length;
    }
    (risk, len)
}

/// Full-abstention oracle from per-series total risks.
pub fn oracle_full(total_risks: &[f64], c: f64, horizon: usize) -> Result<OracleSolution> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    // only the total matters under full abstention
    let profiles = total_risks
        .iter()
        .map(|&t| {
            let mut steps = vec![0.0; horizon];
            steps[horizon - 1] = t;
            RiskProfile::new(&steps)
        })
        .collect::<Result<Vec<_>>>()?;
    Oracle::with_limit(FULL_ENUMERATION_LIMIT).solve(&profiles, c, Mode::Full)
}

pub fn oracle_partial(profiles: &[RiskProfile], c: f64) -> Result<OracleSolution> {
    Oracle::default().solve(profiles, c, Mode::Partial)
}

pub fn oracle_interval(profiles: &[RiskProfile], c: f64) -> Result<OracleSolution> {
    Oracle::default().solve(profiles, c, Mode::Interval)
}

pub fn check_dinkelbach(profiles: &[RiskProfile], c: f64, mode: Mode) -> Result<bool> {
    let limit = if mode == Mode::Full {
        FULL_ENUMERATION_LIMIT
    } else {
        DEFAULT_ENUMERATION_LIMIT
    };
    Oracle::with_limit(limit).check_dinkelbach(profiles, c, mode)
}

/// Expected selective risk per accepted step of a full-abstention policy,
/// in closed form over the tie randomization. `None` if nothing is accepted.
pub fn full_policy_expected_risk(
    policy: &FullPolicy,
    total_risks: &[f64],
    horizon: usize,
) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for &t in total_risks {
        let a = policy.acceptance_probability(t);
        num += a * t;
        den += a * horizon as f64;
    }
    (den > 0.0).then_some(num / den)
}

/// Expected selective risk of the two-point reward mixture on a set, in
/// closed form. `None` if nothing is accepted.
pub fn lagrange_expected_risk(policy: &LagrangePolicy, set: &CalibrationSet) -> Option<f64> {
    let at = |gamma: f64| -> (f64, f64) {
        set.decisions(gamma)
            .iter()
            .zip(set.profiles())
            .fold((0.0, 0.0), |(n, d), (sel, p)| {
                if sel.is_rejection() {
                    (n, d)
                } else {
                    (n + p.span(sel.start, sel.end), d + sel.len() as f64)
                }
            })
    };
    let (nl, dl) = at(policy.gamma_low);
    let (nr, dr) = if policy.gamma_high == policy.gamma_low {
        (nl, dl)
    } else {
        at(policy.gamma_high)
    };
    let num = policy.p * nl + (1.0 - policy.p) * nr;
    let den = policy.p * dl + (1.0 - policy.p) * dr;
    (den > 0.0).then_some(num / den)
}
