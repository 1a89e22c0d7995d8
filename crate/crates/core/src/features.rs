//! Technical-indicator features and per-window standardization.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::MarketFrame;

/// Date x asset x feature array, stored flat in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub feature_names: Vec<String>,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, feature_names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let expected = dates.len() * tickers.len() * feature_names.len();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "feature data has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(FeatureTensor {
            dates,
            tickers,
            feature_names,
            data,
        })
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn get(&self, t: usize, asset: usize, feature: usize) -> f64 {
        self.data[(t * self.n_assets() + asset) * self.n_features() + feature]
    }

    /// Asset x feature block for date index `t`, row-major by asset.
    pub fn slice(&self, t: usize) -> &[f64] {
        let block = self.n_assets() * self.n_features();
        &self.data[t * block..(t + 1) * block]
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Same dates and features for a subset of tickers, in the given order.
    pub fn select(&self, tickers: &[String]) -> Result<FeatureTensor> {
        let idx: Vec<usize> = tickers
            .iter()
            .map(|t| {
                self.tickers
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| Error::Universe(format!("unknown ticker {t}")))
            })
            .collect::<Result<_>>()?;
        let f = self.n_features();
        let mut data = Vec::with_capacity(self.n_dates() * idx.len() * f);
        for t in 0..self.n_dates() {
            let block = self.slice(t);
            for &i in &idx {
                data.extend_from_slice(&block[i * f..(i + 1) * f]);
            }
        }
        FeatureTensor::new(self.dates.clone(), tickers.to_vec(), self.feature_names.clone(), data)
    }

    /// Sub-tensor restricted to dates in `[start, end)`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> FeatureTensor {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d < end).max(lo);
        let block = self.n_assets() * self.n_features();
        FeatureTensor {
            dates: self.dates[lo..hi].to_vec(),
            tickers: self.tickers.clone(),
            feature_names: self.feature_names.clone(),
            data: self.data[lo * block..hi * block].to_vec(),
        }
    }
}

/// Indicator window lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorConfig {
    pub sma_short: usize,
    pub sma_long: usize,
    pub rsi: usize,
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub macd_signal: usize,
    pub bollinger: usize,
    pub bollinger_k: f64,
    pub volume_sma: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        IndicatorConfig {
            sma_short: 5,
            sma_long: 20,
            rsi: 14,
            macd_fast: 12,
            macd_slow: 26,
            macd_signal: 9,
            bollinger: 20,
            bollinger_k: 2.0,
            volume_sma: 20,
        }
    }
}

impl IndicatorConfig {
    /// Number of leading rows dropped before every indicator is defined.
    pub fn warmup(&self) -> usize {
        [
            self.sma_short,
            self.sma_long,
            self.rsi + 1,
            self.macd_slow + self.macd_signal - 1,
            self.bollinger,
            self.volume_sma,
            2,
        ]
        .into_iter()
        .max()
        .unwrap_or(1)
            - 1
    }

    pub fn validate(&self) -> Result<()> {
        let windows = [
            self.sma_short,
            self.sma_long,
            self.rsi,
            self.macd_fast,
            self.macd_slow,
            self.macd_signal,
            self.bollinger,
            self.volume_sma,
        ];
        if windows.contains(&0) || !(self.bollinger_k > 0.0) {
            return Err(Error::Invalid("indicator windows must be positive".into()));
        }
        Ok(())
    }
}

pub const FEATURE_NAMES: [&str; 8] = [
    "log_return",
    "sma_short_ratio",
    "sma_long_ratio",
    "bias",
    "rsi",
    "macd_hist",
    "bollinger_width",
    "volume_ratio",
];

fn sma(series: &[f64], window: usize, t: usize) -> f64 {
    series[t + 1 - window..=t].iter().sum::<f64>() / window as f64
}

fn ema(series: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = series[0];
    for &x in series {
        acc = alpha * x + (1.0 - alpha) * acc;
        out.push(acc);
    }
    out
}

/// Wilder RSI in [0, 100]; `None` until `period` changes are available.
/// Flat windows (no gains, no losses) read as 50.
pub fn rsi_series(prices: &[f64], period: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; prices.len()];
    if prices.len() <= period {
        return out;
    }
    let change = |t: usize| prices[t] - prices[t - 1];
    let mut gain = 0.0;
    let mut loss = 0.0;
    for t in 1..=period {
        gain += change(t).max(0.0);
        loss += (-change(t)).max(0.0);
    }
    gain /= period as f64;
    loss /= period as f64;
    let value = |gain: f64, loss: f64| {
        if loss == 0.0 {
            if gain == 0.0 {
                50.0
            } else {
                100.0
            }
        } else {
            100.0 - 100.0 / (1.0 + gain / loss)
        }
    };
    out[period] = Some(value(gain, loss));
    let p = period as f64;
    for t in period + 1..prices.len() {
        gain = (gain * (p - 1.0) + change(t).max(0.0)) / p;
        loss = (loss * (p - 1.0) + (-change(t)).max(0.0)) / p;
        out[t] = Some(value(gain, loss));
    }
    out
}

/// Per-asset indicator block for one price/volume series, warm-up rows included.
fn asset_indicators(prices: &[f64], volumes: &[f64], cfg: &IndicatorConfig) -> Vec<[f64; 8]> {
    let len = prices.len();
    let rsi = rsi_series(prices, cfg.rsi);
    let fast = ema(prices, cfg.macd_fast);
    let slow = ema(prices, cfg.macd_slow);
    let macd: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    let signal = ema(&macd, cfg.macd_signal);
    let warmup = cfg.warmup();
    let mut out = Vec::with_capacity(len.saturating_sub(warmup));
    for t in warmup..len {
        let price = prices[t];
        let sma_short = sma(prices, cfg.sma_short, t);
        let sma_long = sma(prices, cfg.sma_long, t);
        let bias = (price - sma_long) / sma_long;
        let rsi = (rsi[t].unwrap_or(50.0) - 50.0) / 50.0;
        let macd_hist = (macd[t] - signal[t]) / price;
        let mid = sma(prices, cfg.bollinger, t);
        let var = prices[t + 1 - cfg.bollinger..=t]
            .iter()
            .map(|p| (p - mid).powi(2))
            .sum::<f64>()
            / cfg.bollinger as f64;
        let width = 2.0 * cfg.bollinger_k * var.sqrt() / mid;
        let vol_avg = sma(volumes, cfg.volume_sma, t);
        let vol_ratio = if vol_avg > 0.0 { volumes[t] / vol_avg - 1.0 } else { 0.0 };
        out.push([
            (price / prices[t - 1]).ln(),
            sma_short / price,
            sma_long / price,
            bias,
            rsi,
            macd_hist,
            width,
            vol_ratio,
        ]);
    }
    out
}

/// Technical indicators per asset per day. Every feature at date `t` depends
/// only on prices and volumes at or before `t`; the leading warm-up rows are
/// dropped for all assets.
pub fn compute_indicators(frame: &MarketFrame, cfg: &IndicatorConfig) -> Result<FeatureTensor> {
    cfg.validate()?;
    let warmup = cfg.warmup();
    if frame.n_dates() <= warmup {
        return Err(Error::Warmup {
            required: warmup + 1,
            available: frame.n_dates(),
        });
    }
    let n = frame.n_assets();
    let per_asset: Vec<Vec<[f64; 8]>> = (0..n)
        .map(|i| {
            let prices: Vec<f64> = frame.adj_close.iter().map(|r| r[i]).collect();
            let volumes: Vec<f64> = frame.volume.iter().map(|r| r[i]).collect();
            asset_indicators(&prices, &volumes, cfg)
        })
        .collect();
    let rows = frame.n_dates() - warmup;
    let mut data = Vec::with_capacity(rows * n * FEATURE_NAMES.len());
    for t in 0..rows {
        for asset in &per_asset {
            data.extend_from_slice(&asset[t]);
        }
    }
    FeatureTensor::new(
        frame.dates[warmup..].to_vec(),
        frame.tickers.clone(),
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        data,
    )
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-(asset, feature) z-score parameters fitted on a date span.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    /// `None` marks a degenerate (constant) column, mapped to zero.
    scale: Vec<Option<f64>>,
}

impl Standardizer {
    /// Fit on date indices `range` of `tensor`.
    pub fn fit(tensor: &FeatureTensor, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > tensor.n_dates() {
            return Err(Error::Span(format!(
                "fit range {range:?} invalid for {} dates",
                tensor.n_dates()
            )));
        }
        Standardizer::fit_slices(range.map(|t| tensor.slice(t)))
    }

    /// Fit on equally sized asset x feature blocks.
    pub fn fit_slices<'a, I>(slices: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
        I::IntoIter: Clone,
    {
        let iter = slices.into_iter();
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for s in iter.clone() {
            if count == 0 {
                mean = vec![0.0; s.len()];
            } else if s.len() != mean.len() {
                return Err(Error::Dimension("feature blocks differ in size".into()));
            }
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Span("no rows to fit a standardizer on".into()));
        }
        let n = count as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; mean.len()];
        for s in iter {
            for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                (sd > STD_FLOOR).then_some(sd)
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    /// Standardize one asset x feature block.
    pub fn apply_slice(&self, slice: &[f64]) -> Vec<f64> {
        slice
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), sd)| match sd {
                Some(sd) => (x - m) / sd,
                None => 0.0,
            })
            .collect()
    }

    pub fn apply(&self, tensor: &FeatureTensor) -> FeatureTensor {
        let cols = self.mean.len();
        let data = tensor
            .data
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let c = j % cols;
                match self.scale[c] {
                    Some(sd) => (x - self.mean[c]) / sd,
                    None => 0.0,
                }
            })
            .collect();
        FeatureTensor {
            data,
            ..tensor.clone()
        }
    }
}

/// Z-score every (asset, feature) column with statistics from `fit_range`
/// only, applied to the whole tensor.
pub fn standardize(tensor: &FeatureTensor, fit_range: std::ops::Range<usize>) -> Result<FeatureTensor> {
    Ok(Standardizer::fit(tensor, fit_range)?.apply(tensor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::weekday_calendar;

    fn frame(prices: Vec<f64>, volumes: Vec<f64>) -> MarketFrame {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        MarketFrame {
            dates: weekday_calendar(start, prices.len()),
            tickers: vec!["A".into()],
            adj_close: prices.into_iter().map(|p| vec![p]).collect(),
            volume: volumes.into_iter().map(|v| vec![v]).collect(),
        }
    }

    fn feature(t: &FeatureTensor, name: &str, row: usize) -> f64 {
        let k = t.feature_names.iter().position(|n| n == name).unwrap();
        t.get(row, 0, k)
    }

    #[test]
    fn rising_prices_saturate_rsi() {
        let prices: Vec<f64> = (1..=60).map(|p| 100.0 + p as f64).collect();
        let t = compute_indicators(&frame(prices, vec![1.0; 60]), &IndicatorConfig::default()).unwrap();
        for row in 0..t.n_dates() {
            assert_eq!(feature(&t, "rsi", row), 1.0);
        }
    }

    #[test]
    fn constant_series_give_zero_oscillators() {
        let t = compute_indicators(&frame(vec![50.0; 60], vec![1000.0; 60]), &IndicatorConfig::default()).unwrap();
        for row in 0..t.n_dates() {
            for name in ["bias", "macd_hist", "bollinger_width", "volume_ratio", "log_return", "rsi"] {
                assert_eq!(feature(&t, name, row), 0.0, "{name}");
            }
            assert_eq!(feature(&t, "sma_short_ratio", row), 1.0);
        }
    }

    #[test]
    fn linear_ramp_sma() {
        // prices 1..=40; warm-up is 33 rows so "day 30" is not kept; use 40.
        let prices: Vec<f64> = (1..=40).map(|p| p as f64).collect();
        let t = compute_indicators(&frame(prices, vec![1.0; 40]), &IndicatorConfig::default()).unwrap();
        assert_eq!(t.dates.len(), 40 - 33);
        // last row is price 40: SMA(5) = mean(36..=40) = 38
        let last = t.n_dates() - 1;
        assert!((feature(&t, "sma_short_ratio", last) - 38.0 / 40.0).abs() < 1e-15);
        // SMA(20) = mean(21..=40) = 30.5
        assert!((feature(&t, "bias", last) - (40.0 - 30.5) / 30.5).abs() < 1e-15);
    }

    #[test]
    fn ramp_sma_hand_value_with_short_windows() {
        let cfg = IndicatorConfig {
            macd_fast: 3,
            macd_slow: 5,
            macd_signal: 3,
            ..IndicatorConfig::default()
        };
        let prices: Vec<f64> = (1..=30).map(|p| p as f64).collect();
        let t = compute_indicators(&frame(prices, vec![1.0; 30]), &cfg).unwrap();
        let last = t.n_dates() - 1;
        assert!((feature(&t, "sma_short_ratio", last) - 28.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn warmup_error_states_requirement() {
        let err = compute_indicators(&frame(vec![1.0; 20], vec![1.0; 20]), &IndicatorConfig::default()).unwrap_err();
        match err {
            Error::Warmup { required, available } => {
                assert_eq!(required, 34);
                assert_eq!(available, 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rsi_in_range_and_bollinger_nonnegative() {
        let mut p = 100.0;
        let prices: Vec<f64> = (0..200)
            .map(|i| {
                p *= 1.0 + 0.02 * ((i as f64 * 1.7).sin());
                p
            })
            .collect();
        for v in rsi_series(&prices, 14).into_iter().flatten() {
            assert!((0.0..=100.0).contains(&v));
        }
        let t = compute_indicators(&frame(prices, vec![5.0; 200]), &IndicatorConfig::default()).unwrap();
        for row in 0..t.n_dates() {
            assert!(feature(&t, "bollinger_width", row) >= 0.0);
            assert!(t.slice(row).iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn features_do_not_look_ahead() {
        let prices: Vec<f64> = (0..120).map(|i| 100.0 + (i as f64 * 0.37).sin() * 5.0).collect();
        let volumes: Vec<f64> = (0..120).map(|i| 1000.0 + (i as f64 * 0.11).cos() * 100.0).collect();
        let base = compute_indicators(&frame(prices.clone(), volumes.clone()), &IndicatorConfig::default()).unwrap();
        let cut = 80;
        let mut p2 = prices;
        let mut v2 = volumes;
        for i in cut + 1..120 {
            p2[i] *= 3.0;
            v2[i] *= 0.1;
        }
        let poisoned = compute_indicators(&frame(p2, v2), &IndicatorConfig::default()).unwrap();
        let rows = cut + 1 - IndicatorConfig::default().warmup();
        assert_eq!(&base.values()[..rows * 8], &poisoned.values()[..rows * 8]);
        assert_ne!(base.values(), poisoned.values());
    }

    fn gaussian_tensor(n_dates: usize, seed: u64) -> FeatureTensor {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n_dates * 2 * 3)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                3.0 + 2.0 * z
            })
            .collect();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        FeatureTensor::new(
            weekday_calendar(start, n_dates),
            vec!["A".into(), "B".into()],
            vec!["f0".into(), "f1".into(), "f2".into()],
            data,
        )
        .unwrap()
    }

    #[test]
    fn standardize_full_range_centers_and_scales() {
        let n = 5000;
        let t = standardize(&gaussian_tensor(n, 3), 0..n).unwrap();
        for c in 0..6 {
            let col: Vec<f64> = (0..n).map(|d| t.slice(d)[c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(mean.abs() <= 3.0 * sd / (n as f64).sqrt());
            assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_twice_is_idempotent() {
        let t = gaussian_tensor(300, 4);
        let once = standardize(&t, 0..200).unwrap();
        let twice = standardize(&once, 0..200).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let t = FeatureTensor::new(
            weekday_calendar(start, 10),
            vec!["A".into()],
            vec!["f".into()],
            (0..10).map(|i| if i < 6 { 0.3 } else { i as f64 }).collect(),
        )
        .unwrap();
        let s = standardize(&t, 0..6).unwrap();
        assert!(s.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn standardize_uses_only_fit_range() {
        let t = gaussian_tensor(300, 5);
        let a = standardize(&t, 0..100).unwrap();
        let mut poisoned = t.clone();
        for x in poisoned.data[100 * 6..].iter_mut() {
            *x = 1e6;
        }
        let b = standardize(&poisoned, 0..100).unwrap();
        assert_eq!(&a.values()[..600], &b.values()[..600]);
    }
}
