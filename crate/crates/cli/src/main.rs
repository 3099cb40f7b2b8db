//! `abstain`: generate data, fit forecasters, calibrate abstention policies
//! and evaluate them from the command line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abstain_core::calibration::{
    calibrate_full, calibrate_lagrange_set, full_scores, CalibrationSet, CoverageSpec, Mode, Policy,
};
use abstain_core::data::{
    generate, read_predictions_csv, read_series_csv, series_length, write_decisions_csv,
    write_predictions_csv, write_series_csv, write_truth_csv, SyntheticConfig,
};
use abstain_core::evaluation::{
    decide_test, report, reports_to_csv, sweep, write_long_reports, write_reports, FitMethod,
    ScoredTest, Strategy, SweepConfig, DEFAULT_COVERAGE_GRID, DEFAULT_EPS_GRID,
};
use abstain_core::forecaster::{
    fit_beta_nll, fit_two_stage, BetaNllConfig, ForecastBundle, LinearTwoHeadModel, SeriesWindow,
    DEFAULT_BETA, DEFAULT_VARIANCE_FLOOR,
};
use abstain_core::oracle::{full_policy_expected_risk, lagrange_expected_risk, Oracle};
use abstain_core::{Error, Execution, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

const CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "abstain",
    version,
    about = "Bounded-abstention policies for multi-horizon forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic heteroscedastic AR(1) data set.
    Generate(GenerateArgs),
    /// Fit a linear mean/variance forecaster.
    Fit(FitArgs),
    /// Calibrate an abstention policy on held-out forecasts.
    Calibrate(CalibrateArgs),
    /// Apply a policy to a test set and report risk and coverage.
    Evaluate(EvaluateArgs),
    /// Split, fit, calibrate and evaluate over strategies, coverages and seeds.
    Sweep(SweepArgs),
    /// Compare calibrated policies with brute-force optima on a tiny instance.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Past length.
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    t: u64,
    /// Horizon.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    h: u64,
    #[arg(long, default_value_t = 0.5)]
    ar: f64,
    /// Base noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Noise variance amplification in the high regime.
    #[arg(long, default_value_t = 4.0)]
    amp: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives series.csv and truth.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    TwoStage,
    BetaNll,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long, value_enum, default_value_t = Method::TwoStage)]
    method: Method,
    /// Past values used as features; defaults to the whole past.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    lag: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_VARIANCE_FLOOR)]
    variance_floor: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Series CSV (`id,t,value`).
    #[arg(long)]
    data: PathBuf,
    /// Past length; defaults to series length minus horizon.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    h: u64,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_model: PathBuf,
    /// Also write in-sample predictions.
    #[arg(long)]
    out_predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastSource {
    /// Model JSON from `fit`; predicts the series in --data.
    #[arg(
        long,
        requires = "data",
        conflicts_with = "predictions",
        required_unless_present = "predictions"
    )]
    model: Option<PathBuf>,
    /// Predictions CSV (`id,step,mean,variance`).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Series CSV (`id,t,value`).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    source: ForecastSource,
    #[arg(long, value_parser = parse_coverage)]
    c: f64,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Bisection stopping width for gamma.
    #[arg(long, value_parser = parse_positive)]
    eps_gamma: Option<f64>,
    /// Defaults to stdout.
    #[arg(long)]
    out_policy: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Partial,
    Interval,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Partial => Mode::Partial,
            ModeArg::Interval => Mode::Interval,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Policy JSON from `calibrate`.
    #[arg(long)]
    policy: PathBuf,
    #[command(flatten)]
    source: ForecastSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPS_GRID, value_parser = parse_nonnegative)]
    eps_grid: Vec<f64>,
    /// Defaults to stdout.
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Per-series selections as `id,start,end`.
    #[arg(long)]
    out_decisions: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    h: u64,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, value_delimiter = ',', default_values = ["full", "partial", "interval"], value_parser = parse_strategy)]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_COVERAGE_GRID, value_parser = parse_coverage)]
    grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPS_GRID, value_parser = parse_nonnegative)]
    eps_grid: Vec<f64>,
    /// Run cells one at a time.
    #[arg(long)]
    sequential: bool,
    /// Output directory; receives report.csv and report_long.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Predictions CSV (`id,step,mean,variance`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_coverage)]
    c: f64,
    /// Checks every mode and their nesting when omitted.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 1_000_000)]
    max_enum: u128,
}

fn parse_coverage(s: &str) -> std::result::Result<f64, String> {
    let c: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if c > 0.0 && c <= 1.0 {
        Ok(c)
    } else {
        Err(format!("coverage {c} outside (0, 1]"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn parse_nonnegative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a non-negative number")),
    }
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            eprintln!(
                "error: usage: {}",
                head.join(" ").trim_start_matches("error: ")
            );
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` when a check ran but did not pass.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Generate(a) => cmd_generate(a).map(|()| true),
        Command::Fit(a) => cmd_fit(a).map(|()| true),
        Command::Calibrate(a) => cmd_calibrate(a).map(|()| true),
        Command::Evaluate(a) => cmd_evaluate(a).map(|()| true),
        Command::Sweep(a) => cmd_sweep(a).map(|()| true),
        Command::OracleCheck(a) => cmd_oracle(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let data = generate(&SyntheticConfig {
        n_series: a.n as usize,
        past_len: a.t as usize,
        horizon: a.h as usize,
        ar_coeff: a.ar,
        base_noise_sd: a.noise,
        noise_amplification: a.amp,
        seed: a.seed,
    })?;
    create_dir(&a.out)?;
    write_series_csv(&a.out.join("series.csv"), &data.windows)?;
    write_truth_csv(&a.out.join("truth.csv"), &data.truth)?;
    println!(
        "series={} rows={}",
        data.windows.len(),
        data.windows.len() as u64 * (a.t + a.h)
    );
    Ok(())
}

/// Reads a series file whose past length is either given or implied by the
/// horizon.
fn read_windows(path: &Path, t: Option<u64>, h: usize) -> Result<Vec<SeriesWindow>> {
    let past = match t {
        Some(t) => t as usize,
        None => series_length(path)?
            .checked_sub(h)
            .filter(|&p| p > 0)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "series in {} are not longer than the horizon {h}",
                    path.display()
                ))
            })?,
    };
    read_series_csv(path, past, h)
}

fn fit_model(
    train: &[SeriesWindow],
    horizon: usize,
    training: &TrainingArgs,
    seed: u64,
) -> Result<(LinearTwoHeadModel, Option<f64>)> {
    let past = train.first().map_or(0, |w| w.past.len());
    let lag = training.lag.map_or(past, |l| l as usize);
    match training.method {
        Method::TwoStage => Ok((
            fit_two_stage(train, lag, horizon, training.variance_floor)?,
            None,
        )),
        Method::BetaNll => {
            let cfg = BetaNllConfig {
                beta: training.beta,
                epochs: training.epochs,
                learning_rate: training.lr,
                seed,
                variance_floor: training.variance_floor,
                ..BetaNllConfig::new(lag, horizon)
            };
            let run = fit_beta_nll(train, &cfg)?;
            let last = run.losses.last().copied();
            Ok((run.model, last))
        }
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let h = a.h as usize;
    let windows = read_windows(&a.data, a.t, h)?;
    let (model, loss) = fit_model(&windows, h, &a.training, a.seed)?;
    let json = serde_json::to_string_pretty(&model)?;
    write_file(&a.out_model, &(json + "\n"))?;
    if let Some(p) = &a.out_predictions {
        write_predictions_csv(p, &model.predict_all(&windows)?)?;
    }
    let mut line = format!("train_mse={}", model.mse(&windows)?);
    if let Some(l) = loss {
        line.push_str(&format!(" final_loss={l}"));
    }
    if model.ridge_fallback {
        line.push_str(" ridge_fallback=true");
    }
    println!("{line}");
    Ok(())
}

/// Forecasts plus, when the series file is available, the windows they came
/// from (matched by id).
fn load_forecasts(
    src: &ForecastSource,
) -> Result<(Vec<ForecastBundle>, Option<Vec<SeriesWindow>>)> {
    if let Some(model_path) = &src.model {
        let model: LinearTwoHeadModel = serde_json::from_str(&read_file(model_path)?)?;
        model.validate()?;
        let data = src
            .data
            .as_ref()
            .ok_or_else(|| Error::invalid("--model needs --data"))?;
        let windows = read_windows(data, None, model.horizon())?;
        return Ok((model.predict_all(&windows)?, Some(windows)));
    }
    let path = src
        .predictions
        .as_ref()
        .ok_or_else(|| Error::invalid("either --model or --predictions is required"))?;
    let bundles = read_predictions_csv(path)?;
    let windows = match &src.data {
        Some(d) => {
            let h = bundles[0].horizon();
            let mut by_id: HashMap<String, SeriesWindow> = read_windows(d, None, h)?
                .into_iter()
                .map(|w| (w.id.clone(), w))
                .collect();
            let matched = bundles
                .iter()
                .map(|b| {
                    by_id.remove(&b.id).ok_or_else(|| {
                        Error::invalid(format!("series `{}` missing from {}", b.id, d.display()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(matched)
        }
        None => None,
    };
    Ok((bundles, windows))
}

fn calibrate(bundles: &[ForecastBundle], spec: &CoverageSpec, mode: Mode) -> Result<Policy> {
    if mode == Mode::Full {
        return Ok(Policy::Full(calibrate_full(&full_scores(bundles)?, spec)?));
    }
    let profiles = bundles.iter().map(ForecastBundle::profile).collect();
    let set = CalibrationSet::with_execution(profiles, mode, Execution::Sequential)?;
    Ok(Policy::Lagrange(calibrate_lagrange_set(&set, spec)?))
}

fn coverage_spec(c: f64, horizon: usize, eps: Option<f64>) -> Result<CoverageSpec> {
    let spec = CoverageSpec::new(c, horizon)?;
    match eps {
        Some(e) => spec.with_epsilon(e),
        None => Ok(spec),
    }
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let (bundles, _) = load_forecasts(&a.source)?;
    let spec = coverage_spec(a.c, bundles[0].horizon(), a.eps_gamma)?;
    let policy = calibrate(&bundles, &spec, a.mode.into())?;
    let json = policy.to_json()? + "\n";
    match &a.out_policy {
        Some(p) => write_file(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let policy = Policy::from_json(&read_file(&a.policy)?)?;
    let (bundles, windows) = load_forecasts(&a.source)?;
    let windows =
        windows.ok_or_else(|| Error::invalid("evaluation needs --data with realized futures"))?;
    let futures = windows
        .iter()
        .map(SeriesWindow::future)
        .collect::<Result<Vec<_>>>()?;
    let test = ScoredTest::new(bundles, &futures)?;
    let spec = CoverageSpec::new(policy.c(), test.horizon())?;
    let decisions = decide_test(Some(&policy), &spec, &test, a.seed)?;
    let rep = report(
        policy.mode().as_str(),
        policy.c(),
        a.seed,
        &decisions,
        &test,
        &a.eps_grid,
    )?;
    let csv = reports_to_csv(&[rep], &a.eps_grid);
    if let Some(p) = &a.out_decisions {
        let rows: Vec<_> = test
            .bundles
            .iter()
            .map(|b| b.id.clone())
            .zip(decisions)
            .collect();
        write_decisions_csv(p, &rows)?;
    }
    match &a.out_report {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let h = a.h as usize;
    let windows = read_windows(&a.data, a.t, h)?;
    let past = windows.first().map_or(0, |w| w.past.len());
    let t = &a.training;
    let config = SweepConfig {
        strategies: a.strategies,
        grid: a.grid,
        seeds: a.seeds,
        eps_grid: a.eps_grid,
        lag: t.lag.map_or(past, |l| l as usize),
        fit: match t.method {
            Method::TwoStage => FitMethod::TwoStage,
            Method::BetaNll => FitMethod::BetaNll {
                beta: t.beta,
                epochs: t.epochs,
                learning_rate: t.lr,
            },
        },
        variance_floor: t.variance_floor,
        exec: if a.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    let reports = sweep(&windows, &config)?;
    create_dir(&a.out)?;
    write_reports(&a.out.join("report.csv"), &reports, &config.eps_grid)?;
    write_long_reports(&a.out.join("report_long.csv"), &reports)?;
    println!("rows={}", reports.len());
    Ok(())
}

fn fmt_risk(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_owned(), |v| v.to_string())
}

fn cmd_oracle(a: OracleArgs) -> Result<bool> {
    let bundles = read_predictions_csv(&a.data)?;
    let horizon = bundles[0].horizon();
    let profiles: Vec<_> = bundles.iter().map(ForecastBundle::profile).collect();
    let oracle = Oracle {
        limit: a.max_enum,
        exec: Execution::Sequential,
    };
    let modes: Vec<Mode> = match a.mode {
        Some(m) => vec![m.into()],
        None => vec![Mode::Full, Mode::Partial, Mode::Interval],
    };
    let spec = CoverageSpec::new(a.c, horizon)?;
    let mut all_pass = true;
    let mut optima = Vec::new();
    for mode in modes {
        let opt = oracle.solve(&profiles, a.c, mode)?;
        let dinkelbach = oracle.check_dinkelbach(&profiles, a.c, mode)?;
        let policy_risk = match calibrate(&bundles, &spec, mode)? {
            Policy::Full(p) => {
                let totals: Vec<f64> = profiles.iter().map(|p| p.total()).collect();
                full_policy_expected_risk(&p, &totals, horizon)
            }
            Policy::Lagrange(p) => {
                let set =
                    CalibrationSet::with_execution(profiles.clone(), mode, Execution::Sequential)?;
                lagrange_expected_risk(&p, &set)
            }
        };
        let pass = dinkelbach && policy_risk.is_some_and(|r| r <= opt.risk + CHECK_TOLERANCE);
        all_pass &= pass;
        println!(
            "mode={mode} oracle_risk={} policy_risk={} enumerated={} dinkelbach={} {}",
            opt.risk,
            fmt_risk(policy_risk),
            opt.enumerated,
            if dinkelbach { "ok" } else { "violated" },
            if pass { "PASS" } else { "FAIL" }
        );
        optima.push(opt.risk);
    }
    if let [full, partial, interval] = optima[..] {
        let nested = interval <= partial + CHECK_TOLERANCE && partial <= full + CHECK_TOLERANCE;
        all_pass &= nested;
        println!(
            "nesting interval={interval} partial={partial} full={full} {}",
            if nested { "PASS" } else { "FAIL" }
        );
    }
    if !all_pass {
        eprintln!("error: check_failed: calibrated policy or nesting outside {CHECK_TOLERANCE}");
    }
    Ok(all_pass)
}
