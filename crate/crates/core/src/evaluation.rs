//! Selective risk, coverage and constraint satisfaction on a test split,
//! and sweeps over strategies, target coverages and seeds.

use std::fmt::Write as _;
use std::path::Path;

use crate::calibration::{
    calibrate_full, calibrate_lagrange_set, full_scores, CalibrationSet, CoverageSpec, Mode, Policy,
};
use crate::data::{split_60_20_20, write_text};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forecaster::{
    fit_beta_nll, fit_two_stage, BetaNllConfig, ForecastBundle, LinearTwoHeadModel, SeriesWindow,
    DEFAULT_VARIANCE_FLOOR,
};
use crate::policy::{decide, decide_accept_ch};
use crate::risk::SelectionDecision;
use crate::rng::SeededRng;

pub const DEFAULT_COVERAGE_GRID: [f64; 6] = [0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const DEFAULT_EPS_GRID: [f64; 4] = [0.01, 0.02, 0.05, 0.10];

/// Mean squared error over accepted steps, pooled across series.
pub fn selective_risk(decisions: &[SelectionDecision], losses: &[Vec<f64>]) -> Result<f64> {
    if decisions.len() != losses.len() {
        return Err(Error::invalid(format!(
            "{} decisions for {} loss vectors",
            decisions.len(),
            losses.len()
        )));
    }
    let mut total = 0.0;
    let mut steps = 0usize;
    for (d, l) in decisions.iter().zip(losses) {
        if d.end > l.len() {
            return Err(Error::invalid(format!(
                "decision ends at step {} but only {} losses are known",
                d.end,
                l.len()
            )));
        }
        for t in d.steps() {
            total += l[t - 1];
        }
        steps += d.len();
    }
    if steps == 0 {
        return Err(Error::UndefinedRisk);
    }
    Ok(total / steps as f64)
}

/// Mean accepted length divided by the horizon.
pub fn empirical_coverage(decisions: &[SelectionDecision], horizon: usize) -> Result<f64> {
    if decisions.is_empty() || horizon == 0 {
        return Err(Error::invalid(
            "coverage needs decisions and a positive horizon",
        ));
    }
    let total: usize = decisions.iter().map(SelectionDecision::len).sum();
    Ok(total as f64 / (decisions.len() * horizon) as f64)
}

/// Whether the coverage is within `eps` below the target.
pub fn consat(coverage: f64, c: f64, eps: f64) -> bool {
    coverage >= c - eps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Full,
    Partial,
    Interval,
    AcceptCh,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Full,
        Strategy::Partial,
        Strategy::Interval,
        Strategy::AcceptCh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Partial => "partial",
            Strategy::Interval => "interval",
            Strategy::AcceptCh => "accept-ch",
        }
    }

    pub fn mode(self) -> Option<Mode> {
        match self {
            Strategy::Full => Some(Mode::Full),
            Strategy::Partial => Some(Mode::Partial),
            Strategy::Interval => Some(Mode::Interval),
            Strategy::AcceptCh => None,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub strategy: String,
    pub c: f64,
    pub seed: u64,
    /// `None` when no step was accepted.
    pub selective_risk: Option<f64>,
    pub empirical_coverage: f64,
    /// `(eps, satisfied)` for each tolerance.
    pub consat: Vec<(f64, bool)>,
    pub n_test: usize,
}

impl EvalReport {
    pub fn consat_at(&self, eps: f64) -> Option<bool> {
        self.consat
            .iter()
            .find(|(e, _)| *e == eps)
            .map(|(_, ok)| *ok)
    }
}

/// Test bundles paired with their per-step squared errors.
#[derive(Debug, Clone)]
pub struct ScoredTest {
    pub bundles: Vec<ForecastBundle>,
    pub losses: Vec<Vec<f64>>,
}

impl ScoredTest {
    pub fn new(bundles: Vec<ForecastBundle>, futures: &[&[f64]]) -> Result<Self> {
        if bundles.len() != futures.len() {
            return Err(Error::invalid("one future per test bundle is required"));
        }
        let losses = bundles
            .iter()
            .zip(futures)
            .map(|(b, f)| b.squared_errors(f))
            .collect::<Result<_>>()?;
        Ok(Self { bundles, losses })
    }

    /// Predicts each window with `model` and scores it against its future.
    pub fn from_model(model: &LinearTwoHeadModel, test: &[SeriesWindow]) -> Result<Self> {
        let bundles = model.predict_all(test)?;
        let futures = test
            .iter()
            .map(SeriesWindow::future)
            .collect::<Result<Vec<_>>>()?;
        Self::new(bundles, &futures)
    }

    pub fn horizon(&self) -> usize {
        self.bundles.first().map_or(0, ForecastBundle::horizon)
    }
}

/// Applies a calibrated policy (or the baseline when `policy` is `None`) to a
/// test split. Each series draws from its own substream of `seed`.
pub fn decide_test(
    policy: Option<&Policy>,
    spec: &CoverageSpec,
    test: &ScoredTest,
    seed: u64,
) -> Result<Vec<SelectionDecision>> {
    test.bundles
        .iter()
        .map(|b| {
            let mut rng = SeededRng::substream(seed, &b.id);
            match policy {
                Some(p) => decide(p, b, &mut rng),
                None => Ok(decide_accept_ch(spec, &mut rng)),
            }
        })
        .collect()
}

pub fn report(
    strategy: &str,
    c: f64,
    seed: u64,
    decisions: &[SelectionDecision],
    test: &ScoredTest,
    eps_grid: &[f64],
) -> Result<EvalReport> {
    let horizon = test.horizon();
    let coverage = empirical_coverage(decisions, horizon)?;
    let risk = match selective_risk(decisions, &test.losses) {
        Ok(r) => Some(r),
        Err(Error::UndefinedRisk) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        strategy: strategy.to_owned(),
        c,
        seed,
        selective_risk: risk,
        empirical_coverage: coverage,
        consat: eps_grid
            .iter()
            .map(|&e| (e, consat(coverage, c, e)))
            .collect(),
        n_test: decisions.len(),
    })
}

/// Calibrates `strategy` at coverage `c` on `calib`, then reports on `test`.
pub fn evaluate_strategy(
    strategy: Strategy,
    c: f64,
    calib: &[ForecastBundle],
    test: &ScoredTest,
    seed: u64,
    eps_grid: &[f64],
) -> Result<EvalReport> {
    let horizon = test.horizon();
    let spec = CoverageSpec::new(c, horizon)?;
    let policy = calibrate_strategy(strategy, &spec, calib)?;
    let decisions = decide_test(policy.as_ref(), &spec, test, seed)?;
    report(strategy.name(), c, seed, &decisions, test, eps_grid)
}

/// `None` for the baseline, which needs no calibration.
pub fn calibrate_strategy(
    strategy: Strategy,
    spec: &CoverageSpec,
    calib: &[ForecastBundle],
) -> Result<Option<Policy>> {
    Ok(match strategy.mode() {
        None => None,
        Some(Mode::Full) => Some(Policy::Full(calibrate_full(&full_scores(calib)?, spec)?)),
        Some(mode) => {
            let set = CalibrationSet::from_bundles(calib, mode)?;
            Some(Policy::Lagrange(calibrate_lagrange_set(&set, spec)?))
        }
    })
}

/// How the sweep fits its forecaster on each training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMethod {
    TwoStage,
    BetaNll {
        beta: f64,
        epochs: usize,
        learning_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub strategies: Vec<Strategy>,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub eps_grid: Vec<f64>,
    pub lag: usize,
    pub fit: FitMethod,
    pub variance_floor: f64,
    pub exec: Execution,
}

impl SweepConfig {
    pub fn new(lag: usize) -> Self {
        Self {
            strategies: vec![Strategy::Full, Strategy::Partial, Strategy::Interval],
            grid: DEFAULT_COVERAGE_GRID.to_vec(),
            seeds: vec![0],
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            lag,
            fit: FitMethod::TwoStage,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            exec: Execution::default(),
        }
    }
}

/// For every seed: split the series 60/20/20, fit on train, predict the
/// calibration and test splits, then run every (strategy, c) cell. Reports
/// come back ordered by seed, then strategy, then c.
pub fn sweep(windows: &[SeriesWindow], config: &SweepConfig) -> Result<Vec<EvalReport>> {
    if config.strategies.is_empty() || config.grid.is_empty() || config.seeds.is_empty() {
        return Err(Error::invalid(
            "sweep needs strategies, a coverage grid and seeds",
        ));
    }
    for &c in &config.grid {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!("coverage {c} outside (0, 1]")));
        }
    }
    let horizon = windows
        .first()
        .ok_or_else(|| Error::invalid("no series to sweep"))?
        .future()?
        .len();

    let per_seed = config
        .exec
        .map(&config.seeds, |&seed| -> Result<Vec<EvalReport>> {
            let split = split_60_20_20(windows, seed)?;
            let model = match config.fit {
                FitMethod::TwoStage => {
                    fit_two_stage(&split.train, config.lag, horizon, config.variance_floor)?
                }
                FitMethod::BetaNll {
                    beta,
                    epochs,
                    learning_rate,
                } => {
                    let cfg = BetaNllConfig {
                        beta,
                        epochs,
                        learning_rate,
                        seed,
                        variance_floor: config.variance_floor,
                        ..BetaNllConfig::new(config.lag, horizon)
                    };
                    fit_beta_nll(&split.train, &cfg)?.model
                }
            };
            let calib = model.predict_all(&split.calib)?;
            let test = ScoredTest::from_model(&model, &split.test)?;
            let cells: Vec<(Strategy, f64)> = config
                .strategies
                .iter()
                .flat_map(|&s| config.grid.iter().map(move |&c| (s, c)))
                .collect();
            config
                .exec
                .map(&cells, |&(s, c)| {
                    evaluate_strategy(s, c, &calib, &test, seed, &config.eps_grid)
                })
                .into_iter()
                .collect()
        });
    let mut out = Vec::new();
    for r in per_seed {
        out.extend(r?);
    }
    Ok(out)
}

fn eps_label(eps: f64) -> String {
    let s = format!("{eps}");
    match s.split_once('.') {
        Some((_, frac)) if frac.len() < 2 => format!("{s}{}", "0".repeat(2 - frac.len())),
        None => format!("{s}.00"),
        _ => s,
    }
}

pub fn report_header(eps_grid: &[f64]) -> String {
    let mut h = String::from("strategy,c,seed,selective_risk,empirical_coverage");
    for &e in eps_grid {
        let _ = write!(h, ",consat_{}", eps_label(e));
    }
    h.push_str(",n_test");
    h
}

/// Wide report CSV, one row per report. Undefined risk is written as the
/// literal `undefined`.
pub fn reports_to_csv(reports: &[EvalReport], eps_grid: &[f64]) -> String {
    let mut out = report_header(eps_grid);
    out.push('\n');
    for r in reports {
        let risk = r
            .selective_risk
            .map_or_else(|| "undefined".to_owned(), |v| v.to_string());
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.strategy, r.c, r.seed, risk, r.empirical_coverage
        );
        for &e in eps_grid {
            let ok = r.consat_at(e).unwrap_or(false);
            let _ = write!(out, ",{}", u8::from(ok));
        }
        let _ = writeln!(out, ",{}", r.n_test);
    }
    out
}

/// Long format for plotting: `strategy,c,seed,metric,value`.
pub fn reports_to_long_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("strategy,c,seed,metric,value\n");
    for r in reports {
        let key = format!("{},{},{}", r.strategy, r.c, r.seed);
        let risk = r
            .selective_risk
            .map_or_else(|| "undefined".to_owned(), |v| v.to_string());
        let _ = writeln!(out, "{key},selective_risk,{risk}");
        let _ = writeln!(out, "{key},empirical_coverage,{}", r.empirical_coverage);
        for (e, ok) in &r.consat {
            let _ = writeln!(out, "{key},consat_{},{}", eps_label(*e), u8::from(*ok));
        }
    }
    out
}

pub fn write_reports(path: &Path, reports: &[EvalReport], eps_grid: &[f64]) -> Result<()> {
    write_text(path, &reports_to_csv(reports, eps_grid))
}

pub fn write_long_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    write_text(path, &reports_to_long_csv(reports))
}
