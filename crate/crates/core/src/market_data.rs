//! Daily price panels: CSV ingestion, calendar alignment, return panels and
//! seeded synthetic markets with a planted linear signal.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;

/// Exact header expected on every per-ticker CSV file.
pub const CSV_HEADER: [&str; 7] = ["date", "open", "high", "low", "close", "adj_close", "volume"];

/// Minimum panel size for a backtestable universe.
pub const MIN_ASSETS: usize = 2;
pub const MIN_DATES: usize = 252;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

impl AssetBar {
    fn validate(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close, self.adj_close];
        if prices.iter().any(|p| !p.is_finite()) || !self.volume.is_finite() {
            return Err("non-finite value".into());
        }
        if self.adj_close <= 0.0 {
            return Err(format!("adj_close must be > 0, got {}", self.adj_close));
        }
        if prices.iter().any(|&p| p <= 0.0) {
            return Err("prices must be > 0".into());
        }
        if self.volume < 0.0 {
            return Err(format!("volume must be >= 0, got {}", self.volume));
        }
        let lo = self.open.min(self.close);
        let hi = self.open.max(self.close);
        if self.low > lo || hi > self.high {
            return Err(format!(
                "inconsistent bar: low {} open {} close {} high {}",
                self.low, self.open, self.close, self.high
            ));
        }
        Ok(())
    }
}

/// Aligned date x asset panel of adjusted closes and volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketFrame {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `adj_close[t][i]`
    pub adj_close: Vec<Vec<f64>>,
    /// `volume[t][i]`
    pub volume: Vec<Vec<f64>>,
}

impl MarketFrame {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Index of `date` in the calendar, if it is a trading day.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Whether the frame meets the minimum size for a usable universe.
    pub fn check_usable(&self) -> Result<()> {
        if self.n_assets() < MIN_ASSETS || self.n_dates() < MIN_DATES {
            return Err(Error::Universe(format!(
                "need at least {MIN_ASSETS} assets and {MIN_DATES} dates, got {} x {}",
                self.n_assets(),
                self.n_dates()
            )));
        }
        Ok(())
    }

    /// Restrict to the given tickers, keeping the frame's ticker order.
    pub fn select(&self, tickers: &[String]) -> Result<MarketFrame> {
        let keep: Vec<usize> = self
            .tickers
            .iter()
            .enumerate()
            .filter(|(_, t)| tickers.contains(t))
            .map(|(i, _)| i)
            .collect();
        if let Some(missing) = tickers.iter().find(|t| !self.tickers.contains(t)) {
            return Err(Error::Universe(format!("ticker {missing} not in data")));
        }
        let pick = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.iter().map(|row| keep.iter().map(|&i| row[i]).collect()).collect()
        };
        Ok(MarketFrame {
            dates: self.dates.clone(),
            tickers: keep.iter().map(|&i| self.tickers[i].clone()).collect(),
            adj_close: pick(&self.adj_close),
            volume: pick(&self.volume),
        })
    }
}

/// Simple and log returns; row `t` is the move from frame date `t` to `t + 1`
/// and is labelled with the later date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub simple_returns: Vec<Vec<f64>>,
    pub log_returns: Vec<Vec<f64>>,
}

impl ReturnPanel {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Rows whose date lies in `[start, end)`.
    pub fn window(&self, start: NaiveDate, end: NaiveDate) -> &[Vec<f64>] {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d < end);
        &self.simple_returns[lo..hi.max(lo)]
    }
}

pub fn compute_returns(frame: &MarketFrame) -> Result<ReturnPanel> {
    if frame.n_dates() < 2 {
        return Err(Error::Universe("need at least 2 dates to compute returns".into()));
    }
    let mut simple_returns = Vec::with_capacity(frame.n_dates() - 1);
    let mut log_returns = Vec::with_capacity(frame.n_dates() - 1);
    for w in frame.adj_close.windows(2) {
        let simple: Vec<f64> = w[0].iter().zip(&w[1]).map(|(p0, p1)| p1 / p0 - 1.0).collect();
        log_returns.push(simple.iter().map(|r| r.ln_1p()).collect());
        simple_returns.push(simple);
    }
    Ok(ReturnPanel {
        dates: frame.dates[1..].to_vec(),
        simple_returns,
        log_returns,
    })
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    adj_close: f64,
    volume: f64,
}

/// Parse and validate one per-ticker file.
pub fn read_ticker_csv(path: &Path) -> Result<Vec<AssetBar>> {
    let ingest_err = |line: u64, message: String| Error::Ingest {
        file: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| ingest_err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| ingest_err(1, e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(ingest_err(
            1,
            format!("expected header `{}`", CSV_HEADER.join(",")),
        ));
    }
    let mut bars: Vec<AssetBar> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow = record
            .deserialize(None)
            .map_err(|e| ingest_err(line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| ingest_err(line, format!("bad date `{}`: {e}", row.date)))?;
        let bar = AssetBar {
            date,
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            adj_close: row.adj_close,
            volume: row.volume,
        };
        bar.validate().map_err(|m| ingest_err(line, m))?;
        if let Some(prev) = bars.last() {
            if prev.date >= bar.date {
                return Err(ingest_err(line, format!("date {} not after {}", bar.date, prev.date)));
            }
        }
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(ingest_err(1, "no rows".into()));
    }
    Ok(bars)
}

/// Load every `*.csv` in `dir` (ticker = file stem) and align on the
/// intersection of trading dates.
pub fn ingest_csv_dir(dir: &Path) -> Result<MarketFrame> {
    Ok(ingest_csv_dir_counted(dir)?.0)
}

/// [`ingest_csv_dir`] plus the number of dates dropped by alignment.
pub fn ingest_csv_dir_counted(dir: &Path) -> Result<(MarketFrame, usize)> {
    let mut files: Vec<(String, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    if files.is_empty() {
        return Err(Error::Universe(format!("no input files in {}", dir.display())));
    }
    files.sort();
    let series: Vec<(String, Vec<AssetBar>)> = files
        .par_iter()
        .map(|(ticker, path)| read_ticker_csv(path).map(|bars| (ticker.clone(), bars)))
        .collect::<Result<_>>()?;
    align(series)
}

/// Intersect calendars. Also returns the number of dates dropped from the union.
pub fn align(series: Vec<(String, Vec<AssetBar>)>) -> Result<(MarketFrame, usize)> {
    let mut common: Option<BTreeSet<NaiveDate>> = None;
    let mut union = BTreeSet::new();
    for (_, bars) in &series {
        let dates: BTreeSet<NaiveDate> = bars.iter().map(|b| b.date).collect();
        union.extend(dates.iter().copied());
        common = Some(match common {
            None => dates,
            Some(c) => c.intersection(&dates).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    if common.is_empty() {
        return Err(Error::Universe("empty date intersection across tickers".into()));
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    for (ticker, bars) in series {
        by_ticker.insert(
            ticker,
            bars.into_iter().map(|b| (b.date, (b.adj_close, b.volume))).collect(),
        );
    }
    let tickers: Vec<String> = by_ticker.keys().cloned().collect();
    let mut adj_close = Vec::with_capacity(dates.len());
    let mut volume = Vec::with_capacity(dates.len());
    for d in &dates {
        let row: Vec<(f64, f64)> = by_ticker.values().map(|m| m[d]).collect();
        adj_close.push(row.iter().map(|x| x.0).collect());
        volume.push(row.iter().map(|x| x.1).collect());
    }
    let dropped = union.len() - dates.len();
    Ok((
        MarketFrame {
            dates,
            tickers,
            adj_close,
            volume,
        },
        dropped,
    ))
}

/// Write a frame back out as one CSV per ticker. Open/high/low are
/// synthesized around the adjusted close so the bars validate.
pub fn write_csv_dir(frame: &MarketFrame, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, ticker) in frame.tickers.iter().enumerate() {
        let mut w = csv::Writer::from_path(dir.join(format!("{ticker}.csv")))?;
        w.write_record(CSV_HEADER)?;
        for t in 0..frame.n_dates() {
            let close = frame.adj_close[t][i];
            let open = if t == 0 { close } else { frame.adj_close[t - 1][i] };
            let high = open.max(close);
            let low = open.min(close);
            w.write_record([
                frame.dates[t].format("%Y-%m-%d").to_string(),
                open.to_string(),
                high.to_string(),
                low.to_string(),
                close.to_string(),
                close.to_string(),
                frame.volume[t][i].to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeBreak {
    /// First day index at which the multiplier applies.
    pub day: usize,
    pub vol_multiplier: f64,
}

/// Planted-signal market: `r[t+1,i] = beta . x[t,i] + m[t+1] + eps[t+1,i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_days: usize,
    pub seed: u64,
    pub signal_coefficients: Vec<f64>,
    pub noise_scale: f64,
    #[serde(default)]
    pub regime_breaks: Vec<RegimeBreak>,
    /// Idiosyncratic noise scale grows as `1 + h * |x[t,i,0]|`, and the
    /// common shock's as `1 + h * |mean_i x[t,i,0]|`.
    #[serde(default)]
    pub heteroscedasticity: f64,
    /// Student-t degrees of freedom for the idiosyncratic noise (rescaled to
    /// unit variance); Gaussian when absent.
    #[serde(default)]
    pub tail_df: Option<f64>,
    /// Volatility of a common daily shock shared by every asset.
    #[serde(default)]
    pub market_factor_scale: f64,
    /// AR(1) coefficient of each feature path.
    #[serde(default)]
    pub feature_persistence: f64,
    /// Share of each feature's variance that is common to all assets on a date.
    #[serde(default)]
    pub feature_correlation: f64,
    #[serde(default)]
    pub start_date: Option<NaiveDate>,
}

impl SyntheticSpec {
    pub fn new(n_assets: usize, n_days: usize, seed: u64, signal_coefficients: Vec<f64>, noise_scale: f64) -> Self {
        SyntheticSpec {
            n_assets,
            n_days,
            seed,
            signal_coefficients,
            noise_scale,
            regime_breaks: Vec::new(),
            heteroscedasticity: 0.0,
            tail_df: None,
            market_factor_scale: 0.0,
            feature_persistence: 0.0,
            feature_correlation: 0.0,
            start_date: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_assets == 0 {
            problems.push("n_assets must be > 0".to_string());
        }
        if self.n_days < 2 {
            problems.push("n_days must be >= 2".to_string());
        }
        if self.signal_coefficients.is_empty() {
            problems.push("signal_coefficients must be non-empty".to_string());
        }
        if !(self.noise_scale > 0.0) {
            problems.push("noise_scale must be > 0".to_string());
        }
        for b in &self.regime_breaks {
            if b.day >= self.n_days {
                problems.push(format!("regime break day {} outside [0, {})", b.day, self.n_days));
            }
            if !(b.vol_multiplier > 0.0) {
                problems.push("regime vol_multiplier must be > 0".to_string());
            }
        }
        if self.heteroscedasticity < 0.0 || self.market_factor_scale < 0.0 {
            problems.push("heteroscedasticity and market_factor_scale must be >= 0".to_string());
        }
        if let Some(df) = self.tail_df {
            if !(df > 2.0) {
                problems.push("tail_df must be > 2".to_string());
            }
        }
        if !(0.0..1.0).contains(&self.feature_persistence) {
            problems.push("feature_persistence must lie in [0, 1)".to_string());
        }
        if !(0.0..=1.0).contains(&self.feature_correlation) {
            problems.push("feature_correlation must lie in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn regime_multiplier(&self, day: usize) -> f64 {
        self.regime_breaks
            .iter()
            .filter(|b| b.day <= day)
            .max_by_key(|b| b.day)
            .map_or(1.0, |b| b.vol_multiplier)
    }
}

/// Weekday calendar of `n` days starting at the first weekday on or after `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Returns the price frame, the planted feature tensor (dated like the
/// frame; features at `t` drive the return from `t` to `t + 1`) and the true
/// coefficients.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(MarketFrame, FeatureTensor, Vec<f64>)> {
    spec.validate()?;
    let n = spec.n_assets;
    let k = spec.signal_coefficients.len();
    let days = spec.n_days;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = spec
        .start_date
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"));
    let dates = weekday_calendar(start, days);

    let phi = spec.feature_persistence;
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = vec![0.0; days * n * k];
    for t in 0..days {
        for j in 0..n * k {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[t * n * k + j] = if t == 0 { z } else { phi * x[(t - 1) * n * k + j] + innov * z };
        }
    }
    if spec.feature_correlation > 0.0 {
        let (a, b) = ((1.0 - spec.feature_correlation).sqrt(), spec.feature_correlation.sqrt());
        let mut common = vec![0.0; k];
        for t in 0..days {
            for (j, c) in common.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c = if t == 0 { z } else { phi * *c + innov * z };
                for i in 0..n {
                    let at = (t * n + i) * k + j;
                    x[at] = a * x[at] + b * *c;
                }
            }
        }
    }

    let student = match spec.tail_df {
        Some(df) => Some((StudentT::new(df).map_err(|e| Error::Invalid(e.to_string()))?, ((df - 2.0) / df).sqrt())),
        None => None,
    };
    let draw_noise = |rng: &mut ChaCha8Rng| -> f64 {
        match &student {
            Some((dist, scale)) => dist.sample(rng) * scale,
            None => StandardNormal.sample(rng),
        }
    };

    let mut adj_close = Vec::with_capacity(days);
    let mut volume = Vec::with_capacity(days);
    adj_close.push(vec![100.0; n]);
    for t in 1..days {
        let regime = spec.regime_multiplier(t);
        let common: f64 = if spec.market_factor_scale > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let level = (0..n).map(|i| x[((t - 1) * n + i) * k]).sum::<f64>() / n as f64;
            spec.market_factor_scale * regime * (1.0 + spec.heteroscedasticity * level.abs()) * z
        } else {
            0.0
        };
        let prev = &adj_close[t - 1];
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let feats = &x[((t - 1) * n + i) * k..((t - 1) * n + i + 1) * k];
            let signal: f64 = feats.iter().zip(&spec.signal_coefficients).map(|(a, b)| a * b).sum();
            let scale = spec.noise_scale * regime * (1.0 + spec.heteroscedasticity * feats[0].abs());
            let r = (signal + common + scale * draw_noise(&mut rng)).max(-0.95);
            let p = prev[i] * (1.0 + r);
            if !(p.is_finite() && p > f64::MIN_POSITIVE) {
                return Err(Error::Invalid(format!(
                    "synthetic price path degenerates on day {t}; reduce the noise scales or n_days"
                )));
            }
            row.push(p);
        }
        adj_close.push(row);
    }
    for _ in 0..days {
        let row: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (1e6 * (0.2 * z).exp()).round()
            })
            .collect();
        volume.push(row);
    }

    let tickers: Vec<String> = (0..n).map(|i| format!("SYN{i:02}")).collect();
    let names = (0..k).map(|j| format!("signal_{j}")).collect();
    let frame = MarketFrame {
        dates: dates.clone(),
        tickers: tickers.clone(),
        adj_close,
        volume,
    };
    let tensor = FeatureTensor::new(dates, tickers, names, x)?;
    Ok((frame, tensor, spec.signal_coefficients.clone()))
}
