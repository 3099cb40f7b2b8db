//! Cumulative conditional-risk arithmetic shared by every abstention policy.
//!
//! Horizon steps are 1-based throughout: step `t` of a horizon of length `H`
//! satisfies `1 <= t <= H`, and `prefix[e]` is the summed risk of steps
//! `1..=e`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix sums of per-step conditional risks for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    prefix: Vec<f64>,
}

impl RiskProfile {
    /// Builds a profile from `H >= 1` non-negative per-step risks.
    pub fn new(risks: &[f64]) -> Result<Self> {
        if risks.is_empty() {
            return Err(Error::invalid("risk vector is empty"));
        }
        let mut prefix = Vec::with_capacity(risks.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for (i, &r) in risks.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::invalid(format!(
                    "risk at step {} is {r}; risks must be finite and non-negative",
                    i + 1
                )));
            }
            acc += r;
            prefix.push(acc);
        }
        Ok(Self { prefix })
    }

    pub fn horizon(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// Summed risk over the whole horizon.
    pub fn total(&self) -> f64 {
        self.prefix[self.horizon()]
    }

    /// Risk of the single step `t` (1-based), recovered from the prefix.
    pub fn step_risk(&self, t: usize) -> f64 {
        self.prefix[t] - self.prefix[t - 1]
    }

    /// Risk of steps `s..=e`.
    pub fn interval_risk(&self, s: usize, e: usize) -> Result<f64> {
        if s < 1 || s > e || e > self.horizon() {
            return Err(Error::invalid(format!(
                "interval ({s},{e}) outside 1 <= s <= e <= {}",
                self.horizon()
            )));
        }
        Ok(self.span(s, e))
    }

    #[inline]
    pub(crate) fn span(&self, s: usize, e: usize) -> f64 {
        self.prefix[e] - self.prefix[s - 1]
    }

    /// Smallest start `s` minimizing the risk of the window `s..s+h-1`.
    ///
    /// Returns 1 for the empty window `h == 0`.
    pub fn best_start_for_length(&self, h: usize) -> Result<usize> {
        let horizon = self.horizon();
        if h > horizon {
            return Err(Error::invalid(format!(
                "window length {h} exceeds horizon {horizon}"
            )));
        }
        Ok(self.best_window(h).0)
    }

    /// (start, risk) of the lowest-risk window of length `h`, ties to the
    /// smallest start.
    fn best_window(&self, h: usize) -> (usize, f64) {
        if h == 0 {
            return (1, 0.0);
        }
        let mut best = (1, self.span(1, h));
        for s in 2..=self.horizon() - h + 1 {
            let r = self.span(s, s + h - 1);
            if r < best.1 {
                best = (s, r);
            }
        }
        best
    }

    /// Best window for every length `0..=H`.
    pub fn windows_by_length(&self) -> WindowTable {
        let best = (0..=self.horizon()).map(|h| self.best_window(h)).collect();
        WindowTable { best }
    }
}

/// Lowest-risk window for each interval length of one profile. Independent
/// of the length reward, so it is computed once per series and reused across
/// every reward value tried during calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTable {
    /// `best[h] = (start, risk)`.
    best: Vec<(usize, f64)>,
}

impl WindowTable {
    pub fn horizon(&self) -> usize {
        self.best.len() - 1
    }

    pub fn start(&self, h: usize) -> usize {
        self.best[h].0
    }

    pub fn risk(&self, h: usize) -> f64 {
        self.best[h].1
    }
}

/// Accepted horizon steps `start..=end` for one series; `(1, 0)` rejects the
/// whole horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub start: usize,
    pub end: usize,
}

impl SelectionDecision {
    pub const REJECT: SelectionDecision = SelectionDecision { start: 1, end: 0 };

    pub fn new(start: usize, end: usize, horizon: usize) -> Result<Self> {
        let d = SelectionDecision { start, end };
        if d.is_valid(horizon) {
            Ok(d)
        } else {
            Err(Error::invalid(format!(
                "selection ({start},{end}) is not a valid decision for horizon {horizon}"
            )))
        }
    }

    /// Accepts the first `e` steps, or rejects when `e == 0`.
    pub fn prefix(e: usize) -> Self {
        SelectionDecision { start: 1, end: e }
    }

    pub fn is_valid(&self, horizon: usize) -> bool {
        (self.start == 1 && self.end == 0)
            || (1 <= self.start && self.start <= self.end && self.end <= horizon)
    }

    pub fn is_rejection(&self) -> bool {
        self.end == 0
    }

    pub fn len(&self) -> usize {
        if self.end == 0 {
            0
        } else {
            self.end + 1 - self.start
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accepted steps as 1-based indices.
    pub fn steps(&self) -> std::ops::RangeInclusive<usize> {
        if self.end == 0 {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        self.start..=self.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_sum(risks: &[f64], s: usize, e: usize) -> f64 {
        risks[s - 1..e].iter().sum()
    }

    #[test]
    fn running_sums() {
        let p = RiskProfile::new(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.prefix(), &[0.0, 1.0, 3.0, 6.0]);
        assert_eq!(p.horizon(), 3);
        let z = RiskProfile::new(&[0.0, 0.0]).unwrap();
        assert_eq!(z.prefix(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_risks() {
        assert!(matches!(RiskProfile::new(&[]), Err(Error::InvalidInput(_))));
        assert!(RiskProfile::new(&[1.0, -0.5]).is_err());
        assert!(RiskProfile::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn interval_risk_examples() {
        let p = RiskProfile::new(&[5.0, 1.0, 1.0, 5.0]).unwrap();
        assert_eq!(p.interval_risk(2, 3).unwrap(), 2.0);
        let q = RiskProfile::new(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(q.interval_risk(1, 3).unwrap(), 6.0);
        assert!(q.interval_risk(3, 2).is_err());
        assert!(q.interval_risk(0, 2).is_err());
        assert!(q.interval_risk(1, 4).is_err());
    }

    #[test]
    fn best_start_examples() {
        let p = RiskProfile::new(&[5.0, 1.0, 1.0, 5.0]).unwrap();
        // windows of length 2 sum to 6, 2, 6
        assert_eq!(p.best_start_for_length(2).unwrap(), 2);
        assert_eq!(p.best_start_for_length(4).unwrap(), 1);
        assert_eq!(p.best_start_for_length(0).unwrap(), 1);
        assert!(p.best_start_for_length(5).is_err());
        let flat = RiskProfile::new(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(flat.best_start_for_length(1).unwrap(), 1);
    }

    #[test]
    fn decision_invariants() {
        assert!(SelectionDecision::REJECT.is_valid(3));
        assert_eq!(SelectionDecision::REJECT.len(), 0);
        assert_eq!(SelectionDecision::new(2, 3, 4).unwrap().len(), 2);
        assert!(SelectionDecision::new(3, 2, 4).is_err());
        assert!(SelectionDecision::new(2, 0, 4).is_err());
        assert!(SelectionDecision::new(1, 5, 4).is_err());
        assert_eq!(
            SelectionDecision::prefix(3).steps().collect::<Vec<_>>(),
            [1, 2, 3]
        );
        assert_eq!(SelectionDecision::REJECT.steps().count(), 0);
    }

    fn risks_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 1..=max_len)
    }

    proptest! {
        #[test]
        fn prefix_differences_recover_risks(risks in prop::collection::vec(0.0f64..100.0, 100)) {
            let p = RiskProfile::new(&risks).unwrap();
            prop_assert_eq!(p.prefix()[0], 0.0);
            for e in 1..=risks.len() {
                let naive: f64 = risks[..e].iter().sum();
                prop_assert!((p.prefix()[e] - naive).abs() <= 1e-9 * naive.max(1.0));
                prop_assert!((p.step_risk(e) - risks[e - 1]).abs() <= 1e-9 * naive.max(1.0));
                prop_assert!(p.prefix()[e] >= p.prefix()[e - 1]);
            }
        }

        #[test]
        fn interval_matches_naive(risks in risks_strategy(30), a in 0usize..30, b in 0usize..30) {
            let h = risks.len();
            let (s, e) = {
                let (x, y) = (a % h + 1, b % h + 1);
                (x.min(y), x.max(y))
            };
            let p = RiskProfile::new(&risks).unwrap();
            let got = p.interval_risk(s, e).unwrap();
            prop_assert!((got - naive_sum(&risks, s, e)).abs() <= 1e-9);
        }

        #[test]
        fn best_start_is_smallest_exhaustive_minimizer(risks in risks_strategy(16)) {
            let p = RiskProfile::new(&risks).unwrap();
            let horizon = risks.len();
            let mut prev_min = 0.0;
            for h in 1..=horizon {
                let sums: Vec<f64> = (1..=horizon - h + 1).map(|s| naive_sum(&risks, s, s + h - 1)).collect();
                let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
                let got = p.best_start_for_length(h).unwrap();
                prop_assert!(sums[got - 1] <= min + 1e-9);
                for earlier in &sums[..got - 1] {
                    prop_assert!(*earlier >= min - 1e-9);
                }
                // longer windows can only cost more with non-negative risks
                prop_assert!(min >= prev_min - 1e-9);
                prev_min = min;
            }
        }
    }
}
