//! Performance metrics over full or sub-period NAV spans.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::BacktestLedger;
use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;

/// Volatility (per day) at or below this counts as zero.
const ZERO_DISPERSION: f64 = 1e-12;

/// Return, volatility and drawdown in percent; ratios undefined (`None`)
/// when their denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedSpan {
    pub name: String,
    pub start: NaiveDate,
    /// Inclusive.
    pub end: NaiveDate,
}

/// Metrics of a NAV path, optionally restricted to the points dated in
/// `[start, end]` and renormalized to 1 at the first of them.
pub fn compute_metrics(nav: &[(NaiveDate, f64)], span: Option<(NaiveDate, NaiveDate)>) -> Result<MetricsRow> {
    let points: Vec<f64> = match span {
        None => nav.iter().map(|p| p.1).collect(),
        Some((start, end)) => {
            let (Some(first), Some(last)) = (nav.first(), nav.last()) else {
                return Err(Error::Span("empty NAV series".into()));
            };
            if start > end || start < first.0 || end > last.0 {
                return Err(Error::Span(format!(
                    "span {start}..={end} is outside the data {}..={}",
                    first.0, last.0
                )));
            }
            nav.iter().filter(|(d, _)| *d >= start && *d <= end).map(|p| p.1).collect()
        }
    };
    if points.len() < 2 {
        return Err(Error::Span(format!("need at least 2 NAV points, got {}", points.len())));
    }
    if points.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Invalid("NAV values must be positive and finite".into()));
    }
    let base = points[0];
    let path: Vec<f64> = points.iter().map(|v| v / base).collect();
    let daily: Vec<f64> = path.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let t = daily.len() as f64;

    let annualized_return = (path[path.len() - 1].powf(TRADING_DAYS / t) - 1.0) * 100.0;
    let mean = daily.iter().sum::<f64>() / t;
    let sd = if daily.len() > 1 {
        (daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1.0)).sqrt()
    } else {
        0.0
    };
    let downside = (daily.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / t).sqrt();
    let ratio = |d: f64| (d > ZERO_DISPERSION).then(|| mean / d * TRADING_DAYS.sqrt());

    let mut peak = f64::NEG_INFINITY;
    let mut max_drawdown: f64 = 0.0;
    for v in &path {
        peak = peak.max(*v);
        max_drawdown = max_drawdown.min(v / peak - 1.0);
    }
    Ok(MetricsRow {
        annualized_return,
        annualized_volatility: sd * TRADING_DAYS.sqrt() * 100.0,
        sharpe: ratio(sd),
        sortino: ratio(downside),
        max_drawdown: max_drawdown * 100.0,
    })
}

/// strategy -> span name -> metrics.
pub type MetricsTable = BTreeMap<String, BTreeMap<String, MetricsRow>>;

pub const FULL_SPAN: &str = "full";

/// Full-period row (under [`FULL_SPAN`]) plus one row per named span for
/// every ledger.
pub fn subperiod_report<'a>(
    ledgers: impl IntoIterator<Item = &'a BacktestLedger>,
    spans: &[NamedSpan],
) -> Result<MetricsTable> {
    let mut table = MetricsTable::new();
    for ledger in ledgers {
        let mut rows = BTreeMap::new();
        rows.insert(FULL_SPAN.to_string(), compute_metrics(&ledger.nav, None)?);
        for s in spans {
            let row = compute_metrics(&ledger.nav, Some((s.start, s.end)))
                .map_err(|e| Error::Span(format!("'{}' for {}: {e}", s.name, ledger.strategy)))?;
            rows.insert(s.name.clone(), row);
        }
        table.insert(ledger.strategy.clone(), rows);
    }
    Ok(table)
}

pub fn write_metrics_json(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut text = serde_json::to_string_pretty(table)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics_json(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCsvRow {
    pub strategy: String,
    pub span: String,
    #[serde(rename = "return_pct")]
    pub annualized_return: f64,
    #[serde(rename = "volatility_pct")]
    pub annualized_volatility: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    #[serde(rename = "max_drawdown_pct")]
    pub max_drawdown: f64,
}

pub fn write_metrics_csv(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (strategy, spans) in table {
        for (span, m) in spans {
            w.serialize(MetricsCsvRow {
                strategy: strategy.clone(),
                span: span.clone(),
                annualized_return: m.annualized_return,
                annualized_volatility: m.annualized_volatility,
                sharpe: m.sharpe,
                sortino: m.sortino,
                max_drawdown: m.max_drawdown,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsCsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::weekday_calendar;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> Vec<(NaiveDate, f64)> {
        weekday_calendar(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), values.len())
            .into_iter()
            .zip(values.iter().copied())
            .collect()
    }

    #[test]
    fn doubling_in_a_year_is_one_hundred_percent() {
        let values: Vec<f64> = (0..=252).map(|k| 2f64.powf(k as f64 / 252.0)).collect();
        let m = compute_metrics(&series(&values), None).unwrap();
        assert!((m.annualized_return - 100.0).abs() <= 1e-9);
    }

    #[test]
    fn peak_to_trough() {
        let m = compute_metrics(&series(&[1.0, 1.2, 0.9, 1.1]), None).unwrap();
        assert_eq!(m.max_drawdown, -25.0);
    }

    #[test]
    fn monotone_path_has_no_drawdown_or_sortino() {
        let m = compute_metrics(&series(&[1.0, 1.01, 1.03, 1.04, 1.1]), None).unwrap();
        assert_eq!(m.max_drawdown, 0.0);
        assert_eq!(m.sortino, None);
        assert!(m.sharpe.unwrap() > 0.0);
    }

    #[test]
    fn constant_nav() {
        let m = compute_metrics(&series(&[1.5; 10]), None).unwrap();
        assert_eq!((m.annualized_return, m.max_drawdown, m.annualized_volatility), (0.0, 0.0, 0.0));
        assert_eq!((m.sharpe, m.sortino), (None, None));
    }

    #[test]
    fn hand_computed_ratios() {
        let nav = series(&[1.0, 1.1, 0.99, 1.089]);
        let m = compute_metrics(&nav, None).unwrap();
        let r = [0.1, -0.1, 0.1];
        let mean = 0.1 / 3.0;
        let sd = (r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 2.0).sqrt();
        let down = (0.01f64 / 3.0).sqrt();
        assert!((m.sharpe.unwrap() - mean / sd * 252f64.sqrt()).abs() < 1e-10);
        assert!((m.sortino.unwrap() - mean / down * 252f64.sqrt()).abs() < 1e-10);
        assert!((m.annualized_volatility - sd * 252f64.sqrt() * 100.0).abs() < 1e-9);
    }

    #[test]
    fn spans_select_and_renormalize() {
        let nav = series(&[1.0, 2.0, 2.2, 1.1, 1.21]);
        let d = |k: usize| nav[k].0;
        let full = compute_metrics(&nav, None).unwrap();
        assert_eq!(compute_metrics(&nav, Some((d(0), d(4)))).unwrap(), full);
        let tail = compute_metrics(&nav, Some((d(3), d(4)))).unwrap();
        assert!((tail.annualized_return - (1.1f64.powf(252.0) - 1.0) * 100.0).abs() / tail.annualized_return < 1e-12);
        let head = compute_metrics(&nav, Some((d(1), d(2)))).unwrap();
        assert_eq!(head.max_drawdown, 0.0);
        assert!(compute_metrics(&nav, Some((d(0) - chrono::Days::new(5), d(2)))).is_err());
        assert!(compute_metrics(&nav, Some((d(2), d(2)))).is_err());
    }

    #[test]
    fn report_and_files_round_trip() {
        let mut ledger = BacktestLedger::new("s", vec!["A".into()], NaiveDate::from_ymd_opt(2019, 12, 31).unwrap());
        ledger.nav = series(&[1.0, 1.02, 0.99, 1.05, 1.04, 1.08]);
        let spans = [NamedSpan {
            name: "late".into(),
            start: ledger.nav[2].0,
            end: ledger.nav[5].0,
        }];
        let table = subperiod_report([&ledger], &spans).unwrap();
        assert_eq!(table["s"][FULL_SPAN], compute_metrics(&ledger.nav, None).unwrap());
        assert_eq!(table["s"]["late"], compute_metrics(&ledger.nav, Some((spans[0].start, spans[0].end))).unwrap());

        let dir = tempfile::tempdir().unwrap();
        write_metrics_json(&dir.path().join("m.json"), &table).unwrap();
        assert_eq!(read_metrics_json(&dir.path().join("m.json")).unwrap(), table);
        write_metrics_csv(&dir.path().join("m.csv"), &table).unwrap();
        let rows = read_metrics_csv(&dir.path().join("m.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].sharpe, table["s"][FULL_SPAN].sharpe);
    }

    proptest! {
        #[test]
        fn scale_invariant(rets in prop::collection::vec(-0.05f64..0.05, 2..60), c in 0.01f64..100.0) {
            let mut v = vec![1.0];
            for r in &rets { let last = *v.last().unwrap(); v.push(last * (1.0 + r)); }
            let a = compute_metrics(&series(&v), None).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let b = compute_metrics(&series(&scaled), None).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
            prop_assert!(close(a.annualized_return, b.annualized_return));
            prop_assert!(close(a.annualized_volatility, b.annualized_volatility));
            prop_assert!(close(a.max_drawdown, b.max_drawdown));
            prop_assert_eq!(a.sharpe.is_some(), b.sharpe.is_some());
            if let (Some(x), Some(y)) = (a.sharpe, b.sharpe) { prop_assert!(close(x, y)); }
        }

        #[test]
        fn drawdown_only_worsens_when_extended(rets in prop::collection::vec(-0.05f64..0.05, 3..60), cut in 2usize..50) {
            let mut v = vec![1.0];
            for r in &rets { let last = *v.last().unwrap(); v.push(last * (1.0 + r)); }
            let cut = cut.min(v.len());
            let short = compute_metrics(&series(&v[..cut]), None).unwrap();
            let long = compute_metrics(&series(&v), None).unwrap();
            prop_assert!(long.max_drawdown <= short.max_drawdown);
            prop_assert!(long.max_drawdown >= -100.0);
        }

        #[test]
        fn sharpe_sign_follows_mean(rets in prop::collection::vec(-0.05f64..0.05, 3..60)) {
            let mut v = vec![1.0];
            for r in &rets { let last = *v.last().unwrap(); v.push(last * (1.0 + r)); }
            let m = compute_metrics(&series(&v), None).unwrap();
            let daily: Vec<f64> = v.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            let mean = daily.iter().sum::<f64>() / daily.len() as f64;
            if let Some(s) = m.sharpe {
                prop_assert!(s == 0.0 || s.signum() == mean.signum());
            }
        }
    }
}
