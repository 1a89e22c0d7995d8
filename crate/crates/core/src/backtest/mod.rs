//! Rolling-window, monthly-rebalanced backtest: per-window retraining with
//! time-series validation, fee-charged trades and buy-and-hold NAV
//! accounting for every strategy in a roster.

mod io;
mod ledger;

pub use io::{read_hparams_csv, read_nav_csv, read_weights_csv, write_hparams_csv, write_nav_csv, write_trace_csv, write_weights_csv, HparamsRow, NavRow, WeightsRow};
pub use ledger::{accrue, BacktestLedger, Holdings, Hyperparameters, RebalanceRecord};

use chrono::{Datelike, Months, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTensor, Standardizer};
use crate::market_data::{compute_returns, MarketFrame, ReturnPanel};
use crate::softmax_dfl::{dfl_search, DflKind, HIDDEN_UNITS};
use crate::solvers::{estimate_covariance, solve_max_return, solve_max_sharpe, DecisionProblem, Portfolio};
use crate::spo::RobustConfig;
use crate::training::{hyperparameter_search, Dataset, LossKind, SearchSpace, TrainConfig, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub train_months: u32,
    pub validation_months: u32,
    pub fee_rate: f64,
    /// First candidate rebalance date (inclusive).
    pub start: Option<NaiveDate>,
    /// Last date of the backtest (inclusive).
    pub end: Option<NaiveDate>,
    /// Set from the run configuration's top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub fit_intercept: bool,
    /// Diagonal loading for the MaxSharpe baseline; data-scaled default when absent.
    pub covariance_ridge: Option<f64>,
    /// Set from the run configuration's top-level search section.
    #[serde(skip)]
    pub search: SearchSpace,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            train_months: 9,
            validation_months: 3,
            fee_rate: 0.005,
            start: None,
            end: None,
            seed: 0,
            batch_size: 63,
            hidden_units: HIDDEN_UNITS,
            fit_intercept: true,
            covariance_ridge: None,
            search: SearchSpace::default(),
        }
    }
}

impl BacktestConfig {
    pub fn lookback_months(&self) -> u32 {
        self.train_months + self.validation_months
    }

    /// Problems prefixed with `prefix` (e.g. `"backtest."`); empty when valid.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.train_months == 0 {
            out.push(format!("{prefix}train_months must be >= 1"));
        }
        if self.validation_months == 0 {
            out.push(format!("{prefix}validation_months must be >= 1"));
        }
        if !(self.fee_rate >= 0.0 && self.fee_rate < 0.5) {
            out.push(format!("{prefix}fee_rate must lie in [0, 0.5), got {}", self.fee_rate));
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s >= e {
                out.push(format!("{prefix}start ({s}) must precede end ({e})"));
            }
        }
        if self.batch_size == 0 {
            out.push(format!("{prefix}batch_size must be >= 1"));
        }
        if self.hidden_units == 0 {
            out.push(format!("{prefix}hidden_units must be >= 1"));
        }
        if let Some(r) = self.covariance_ridge {
            if !(r >= 0.0 && r.is_finite()) {
                out.push(format!("{prefix}covariance_ridge must be finite and >= 0"));
            }
        }
        if let Err(Error::Config(p)) = self.search.validate() {
            out.extend(p.into_iter().map(|m| format!("{prefix}{m}")));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

fn default_samples() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    SoftmaxMaxReturn,
    SoftmaxMaxSharpe,
    /// SPO+ against the max-return oracle under multiplicative box noise.
    RobustSpo {
        rho: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    SpoPlus,
    SpoPlusFee {
        gamma: f64,
    },
    SpoPlusFeeL2 {
        gamma: f64,
        lambda: f64,
    },
    /// MSE-trained predictor, then argmax of the prediction.
    PtoMarkowitz,
    /// Mean-variance tangency portfolio on the trailing window.
    MaxSharpe,
}

impl Strategy {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let nonneg = |out: &mut Vec<String>, key: &str, v: f64| {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{prefix}{key} must be finite and >= 0, got {v}"));
            }
        };
        match *self {
            Strategy::RobustSpo { rho, samples } => {
                if !(rho > 0.0 && rho < 1.0) {
                    out.push(format!("{prefix}rho must lie in (0, 1), got {rho}"));
                }
                if samples == 0 {
                    out.push(format!("{prefix}samples must be >= 1"));
                }
            }
            Strategy::SpoPlusFee { gamma } => nonneg(&mut out, "gamma", gamma),
            Strategy::SpoPlusFeeL2 { gamma, lambda } => {
                nonneg(&mut out, "gamma", gamma);
                nonneg(&mut out, "lambda", lambda);
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub id: String,
    #[serde(flatten)]
    pub strategy: Strategy,
}

impl StrategyEntry {
    pub fn new(id: impl Into<String>, strategy: Strategy) -> Self {
        StrategyEntry { id: id.into(), strategy }
    }
}

/// The nine compared strategies with their published parameters.
pub fn default_roster() -> Vec<StrategyEntry> {
    vec![
        StrategyEntry::new("softmax-maxreturn", Strategy::SoftmaxMaxReturn),
        StrategyEntry::new("softmax-maxsharpe", Strategy::SoftmaxMaxSharpe),
        StrategyEntry::new("robust-spo-0.01", Strategy::RobustSpo { rho: 0.01, samples: 8 }),
        StrategyEntry::new("robust-spo-0.1", Strategy::RobustSpo { rho: 0.1, samples: 8 }),
        StrategyEntry::new("spo-plus", Strategy::SpoPlus),
        StrategyEntry::new("spo-plus-fee", Strategy::SpoPlusFee { gamma: 0.005 }),
        StrategyEntry::new("spo-plus-fee-l2", Strategy::SpoPlusFeeL2 { gamma: 0.005, lambda: 0.42 }),
        StrategyEntry::new("pto-markowitz", Strategy::PtoMarkowitz),
        StrategyEntry::new("max-sharpe", Strategy::MaxSharpe),
    ]
}

/// First trading day of each month in `[start, end]` that leaves a full
/// lookback after the first date in `dates`, and at least one later day to hold.
pub fn rebalance_dates(dates: &[NaiveDate], config: &BacktestConfig) -> Result<Vec<NaiveDate>> {
    let (Some(&first), Some(&last)) = (dates.first(), dates.last()) else {
        return Err(Error::Span("empty calendar".into()));
    };
    let last = config.end.map_or(last, |e| e.min(last));
    let mut out = Vec::new();
    let mut prev: Option<NaiveDate> = None;
    for &d in dates {
        let new_month = prev.is_none_or(|p| (p.year(), p.month()) != (d.year(), d.month()));
        prev = Some(d);
        if !new_month || d >= last || config.start.is_some_and(|s| d < s) {
            continue;
        }
        if d.checked_sub_months(Months::new(config.lookback_months())).is_some_and(|l| l >= first) {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(Error::Span(format!(
            "no rebalance date between {first} and {last} has {} months of lookback",
            config.lookback_months()
        )));
    }
    Ok(out)
}

/// Everything a strategy may see at one rebalance: only data dated before it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowData {
    pub date: NaiveDate,
    /// Standardized samples with targets in `[t - lookback, t - validation)`.
    pub train: Dataset,
    /// Standardized samples with targets in `[t - validation, t)`.
    pub validation: Dataset,
    /// Standardized features of the last trading day before `t`.
    pub decision_features: Vec<f64>,
    /// Daily simple returns dated in `[t - lookback, t)`.
    pub trailing_returns: Vec<Vec<f64>>,
}

pub fn prepare_window(
    samples: &Dataset,
    features: &FeatureTensor,
    returns: &ReturnPanel,
    date: NaiveDate,
    config: &BacktestConfig,
) -> Result<WindowData> {
    let months = |m: u32| {
        date.checked_sub_months(Months::new(m))
            .ok_or_else(|| Error::Span(format!("cannot step {m} months back from {date}")))
    };
    let start = months(config.lookback_months())?;
    let split = months(config.validation_months)?;
    let train_raw = samples.span(start, split);
    let val_raw = samples.span(split, date);
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(Error::Span(format!("window at {date} has an empty training or validation span")));
    }
    let standardizer = Standardizer::fit_slices((0..train_raw.len()).map(|k| train_raw.features(k)))?;
    let last = features.dates.partition_point(|d| *d < date);
    if last == 0 {
        return Err(Error::Span(format!("no feature row before {date}")));
    }
    Ok(WindowData {
        date,
        train: train_raw.map_features(|x| standardizer.apply_slice(x))?,
        validation: val_raw.map_features(|x| standardizer.apply_slice(x))?,
        decision_features: standardizer.apply_slice(features.slice(last - 1)),
        trailing_returns: returns.window(start, date).to_vec(),
    })
}

/// The decision for one window plus what the search chose.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDecision {
    pub portfolio: Portfolio,
    pub hyperparameters: Option<Hyperparameters>,
    pub traces: Vec<Vec<f64>>,
}

fn searched(portfolio: Portfolio, trials: &[TrialRecord], best: usize) -> WindowDecision {
    let b = &trials[best];
    WindowDecision {
        portfolio,
        hyperparameters: Some(Hyperparameters {
            learning_rate: b.learning_rate,
            epochs: b.epochs,
            score: b.score,
        }),
        traces: trials.iter().map(|t| t.trace.clone()).collect(),
    }
}

/// Train (if needed) and decide for one window; `w_prev` is the drifted live book.
pub fn run_window(
    strategy: &Strategy,
    window: &WindowData,
    w_prev: &Portfolio,
    config: &BacktestConfig,
    window_seed: u64,
) -> Result<WindowDecision> {
    let n = w_prev.len();
    let space = SearchSpace {
        seed: window_seed,
        ..config.search
    };
    let base = |loss: LossKind, problem: DecisionProblem| TrainConfig {
        batch_size: config.batch_size,
        seed: window_seed,
        fit_intercept: config.fit_intercept,
        ..TrainConfig::new(loss, problem)
    };
    let x = &window.decision_features;
    let spo = |cfg: TrainConfig, argmax: bool| -> Result<WindowDecision> {
        let (_, out) = hyperparameter_search(&window.train, &window.validation, &space, &cfg, config.fee_rate)?;
        let r_hat = out.model.predict(x)?;
        let w = if argmax { solve_max_return(&r_hat) } else { cfg.problem.solve(&r_hat)? };
        Ok(searched(w, &out.trials, out.best))
    };
    match *strategy {
        Strategy::MaxSharpe => {
            let est = estimate_covariance(&window.trailing_returns, config.covariance_ridge)?;
            Ok(WindowDecision {
                portfolio: solve_max_sharpe(&est)?,
                hyperparameters: None,
                traces: Vec::new(),
            })
        }
        Strategy::PtoMarkowitz => spo(base(LossKind::Mse, DecisionProblem::max_return(n)), true),
        Strategy::SpoPlus => spo(base(LossKind::SpoPlus, DecisionProblem::max_return(n)), false),
        Strategy::SpoPlusFee { gamma } => spo(base(LossKind::SpoPlus, DecisionProblem::fee(gamma, w_prev.clone())), false),
        Strategy::SpoPlusFeeL2 { gamma, lambda } => spo(
            base(LossKind::SpoPlus, DecisionProblem::fee_l2(gamma, lambda, w_prev.clone())),
            false,
        ),
        Strategy::RobustSpo { rho, samples } => {
            let mut cfg = base(LossKind::RobustSpo, DecisionProblem::max_return(n));
            cfg.robust = Some(RobustConfig {
                n_samples: samples,
                seed: config.seed,
                ..RobustConfig::new(rho)
            });
            spo(cfg, false)
        }
        Strategy::SoftmaxMaxReturn | Strategy::SoftmaxMaxSharpe => {
            let kind = if matches!(strategy, Strategy::SoftmaxMaxReturn) { DflKind::MaxReturn } else { DflKind::MaxSharpe };
            let cfg = base(LossKind::Mse, DecisionProblem::max_return(n));
            let (_, out) = dfl_search(&window.train, &window.validation, &space, &cfg, kind, config.hidden_units)?;
            Ok(searched(out.model.allocate(x)?, &out.trials, out.best))
        }
    }
}

#[derive(Debug)]
pub struct StrategyRun {
    pub id: String,
    pub outcome: Result<BacktestLedger>,
}

#[derive(Debug)]
pub struct BacktestReport {
    pub tickers: Vec<String>,
    pub rebalance_dates: Vec<NaiveDate>,
    pub runs: Vec<StrategyRun>,
}

impl BacktestReport {
    pub fn ledgers(&self) -> impl Iterator<Item = &BacktestLedger> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &Error)> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| (r.id.as_str(), e)))
    }
}

/// Run every strategy over the same rebalance calendar. `features` holds raw
/// (unstandardized) per-day features aligned with `frame`'s tickers.
pub fn run_backtest(
    frame: &MarketFrame,
    features: &FeatureTensor,
    roster: &[StrategyEntry],
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    config.validate()?;
    frame.check_usable()?;
    let mut problems = Vec::new();
    for (k, entry) in roster.iter().enumerate() {
        problems.extend(entry.strategy.problems(&format!("strategies[{k}].")));
        if roster[..k].iter().any(|e| e.id == entry.id) {
            problems.push(format!("strategies[{k}].id '{}' is duplicated", entry.id));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let returns = compute_returns(frame)?;
    let samples = Dataset::from_frame(features, frame)?;
    let dates = rebalance_dates(&frame.dates, config)?;
    let end = config.end.map_or(*frame.dates.last().expect("non-empty"), |e| e.min(*frame.dates.last().expect("non-empty")));
    let windows: Vec<Result<WindowData>> = dates
        .par_iter()
        .map(|&t| prepare_window(&samples, features, &returns, t, config))
        .collect();
    let runs = roster
        .par_iter()
        .map(|entry| StrategyRun {
            id: entry.id.clone(),
            outcome: run_strategy(entry, frame, &returns, &dates, &windows, end, config),
        })
        .collect();
    Ok(BacktestReport {
        tickers: frame.tickers.clone(),
        rebalance_dates: dates,
        runs,
    })
}

fn run_strategy(
    entry: &StrategyEntry,
    frame: &MarketFrame,
    returns: &ReturnPanel,
    dates: &[NaiveDate],
    windows: &[Result<WindowData>],
    end: NaiveDate,
    config: &BacktestConfig,
) -> Result<BacktestLedger> {
    let n = frame.n_assets();
    let first = frame.index_of(dates[0]).expect("rebalance dates come from the frame");
    let mut ledger = BacktestLedger::new(entry.id.clone(), frame.tickers.clone(), frame.dates[first - 1]);
    let mut holdings = Holdings::uniform(n);
    let horizon = end.succ_opt().expect("date in range");
    for (i, (&t, window)) in dates.iter().zip(windows).enumerate() {
        let wrap = |e: Error| Error::Window { date: t, source: Box::new(e) };
        let window = window.as_ref().map_err(|e| Error::Window {
            date: t,
            source: Box::new(Error::Span(e.to_string())),
        })?;
        let w_prev = Portfolio::from_raw(holdings.weights.clone()).map_err(wrap)?;
        let seed = config.seed.wrapping_add(i as u64);
        let decision = run_window(&entry.strategy, window, &w_prev, config, seed).map_err(wrap)?;
        let until = dates.get(i + 1).copied().unwrap_or(horizon);
        let lo = returns.dates.partition_point(|d| *d < t);
        let hi = returns.dates.partition_point(|d| *d < until);
        let period: Vec<(NaiveDate, &[f64])> = (lo..hi)
            .map(|k| (returns.dates[k], returns.simple_returns[k].as_slice()))
            .collect();
        let mut record = accrue(&mut ledger, &mut holdings, t, &decision.portfolio, &period, config.fee_rate)?;
        record.hyperparameters = decision.hyperparameters;
        record.traces = decision.traces;
        ledger.rebalances.push(record);
    }
    Ok(ledger)
}
