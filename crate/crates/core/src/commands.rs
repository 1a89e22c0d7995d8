//! Implementations of the `ingest`, `backtest`, `compare` and `synth`
//! commands, plus the readers that let every emitted CSV round-trip.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{
    run_backtest, write_hparams_csv, write_nav_csv, write_trace_csv, write_weights_csv, BacktestLedger, BacktestReport,
};
use crate::config::{FeatureSource, RunConfig};
use crate::error::{Error, Result};
use crate::features::{compute_indicators, FeatureTensor, IndicatorConfig};
use crate::market_data::{generate_synthetic, ingest_csv_dir_counted, write_csv_dir, MarketFrame, SyntheticSpec};
use crate::metrics::{read_metrics_json, subperiod_report, write_metrics_csv, write_metrics_json, MetricsRow, MetricsTable};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub tickers: Vec<String>,
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub n_dates: usize,
    pub dropped_dates: usize,
    pub feature_rows: usize,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "assets: {} ({})", self.tickers.len(), self.tickers.join(", "))?;
        writeln!(f, "dates: {} to {} ({} aligned days)", self.first, self.last, self.n_dates)?;
        writeln!(f, "dropped dates: {}", self.dropped_dates)?;
        write!(f, "feature rows: {}", self.feature_rows)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    date: NaiveDate,
    ticker: String,
    adj_close: f64,
    volume: f64,
}

pub fn write_panel_csv(path: &Path, frame: &MarketFrame) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (t, date) in frame.dates.iter().enumerate() {
        for (i, ticker) in frame.tickers.iter().enumerate() {
            w.serialize(PanelRow {
                date: *date,
                ticker: ticker.clone(),
                adj_close: frame.adj_close[t][i],
                volume: frame.volume[t][i],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_panel_csv`]; rows must be date-major with a fixed ticker order.
pub fn read_panel_csv(path: &Path) -> Result<MarketFrame> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<PanelRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut tickers: Vec<String> = Vec::new();
    for row in &rows {
        if tickers.contains(&row.ticker) {
            break;
        }
        tickers.push(row.ticker.clone());
    }
    let n = tickers.len();
    if n == 0 || rows.len() % n != 0 {
        return Err(Error::Schema(format!("{}: ragged panel", path.display())));
    }
    let mut frame = MarketFrame {
        dates: Vec::new(),
        tickers,
        adj_close: Vec::new(),
        volume: Vec::new(),
    };
    for chunk in rows.chunks(n) {
        if chunk.iter().zip(&frame.tickers).any(|(r, t)| &r.ticker != t || r.date != chunk[0].date) {
            return Err(Error::Schema(format!("{}: rows out of order near {}", path.display(), chunk[0].date)));
        }
        frame.dates.push(chunk[0].date);
        frame.adj_close.push(chunk.iter().map(|r| r.adj_close).collect());
        frame.volume.push(chunk.iter().map(|r| r.volume).collect());
    }
    Ok(frame)
}

/// `date,ticker,<feature names...>`, one row per date and asset.
pub fn write_features_csv(path: &Path, tensor: &FeatureTensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string(), "ticker".to_string()];
    header.extend(tensor.feature_names.iter().cloned());
    w.write_record(&header)?;
    let f = tensor.n_features();
    for (t, date) in tensor.dates.iter().enumerate() {
        let block = tensor.slice(t);
        for (i, ticker) in tensor.tickers.iter().enumerate() {
            let mut rec = vec![date.to_string(), ticker.clone()];
            rec.extend(block[i * f..(i + 1) * f].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<FeatureTensor> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "date" || &header[1] != "ticker" {
        return Err(Error::Schema(format!("{}: expected date,ticker,<features...>", path.display())));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut tickers: Vec<String> = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: &str| Error::Schema(format!("{}: {m}", path.display()));
        let date: NaiveDate = rec[0].parse().map_err(|_| bad("bad date"))?;
        if dates.last() != Some(&date) {
            dates.push(date);
        }
        if dates.len() == 1 {
            tickers.push(rec[1].to_string());
        }
        for v in rec.iter().skip(2) {
            data.push(v.parse::<f64>().map_err(|_| bad("bad number"))?);
        }
    }
    FeatureTensor::new(dates, tickers, names, data)
}

pub fn cmd_ingest(data_dir: &Path, output_dir: &Path, indicators: &IndicatorConfig) -> Result<IngestSummary> {
    let (frame, dropped) = ingest_csv_dir_counted(data_dir)?;
    frame.check_usable()?;
    let tensor = compute_indicators(&frame, indicators)?;
    fs::create_dir_all(output_dir)?;
    write_panel_csv(&output_dir.join("panel.csv"), &frame)?;
    write_features_csv(&output_dir.join("features.csv"), &tensor)?;
    Ok(IngestSummary {
        tickers: frame.tickers.clone(),
        first: frame.dates[0],
        last: *frame.dates.last().expect("usable frame"),
        n_dates: frame.n_dates(),
        dropped_dates: dropped,
        feature_rows: tensor.n_dates(),
    })
}

/// Prices and raw features for a run configuration.
pub fn load_data(cfg: &RunConfig) -> Result<(MarketFrame, FeatureTensor)> {
    let (frame, planted) = match (&cfg.data_dir, &cfg.synthetic) {
        (Some(dir), None) => (ingest_csv_dir_counted(dir)?.0, None),
        (None, Some(spec)) => {
            let (frame, tensor, _) = generate_synthetic(spec)?;
            (frame, Some(tensor))
        }
        _ => return Err(Error::Config(vec!["exactly one of data_dir or synthetic is required".into()])),
    };
    let frame = match &cfg.universe {
        Some(u) => frame.select(u)?,
        None => frame,
    };
    let features = match (cfg.features, planted) {
        (FeatureSource::Planted, Some(t)) => t.select(&frame.tickers)?,
        (FeatureSource::Planted, None) => return Err(Error::Config(vec!["features = planted requires synthetic data".into()])),
        (FeatureSource::Indicators, _) => compute_indicators(&frame, &cfg.indicators)?,
    };
    Ok((frame, features))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyStatus {
    pub id: String,
    /// `None` on success, else the failure message.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestSummary {
    pub output_dir: PathBuf,
    pub rebalances: usize,
    pub statuses: Vec<StrategyStatus>,
    pub files: Vec<PathBuf>,
}

impl BacktestSummary {
    pub fn all_ok(&self) -> bool {
        self.statuses.iter().all(|s| s.error.is_none())
    }
}

impl fmt::Display for BacktestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} rebalances, outputs in {}", self.rebalances, self.output_dir.display())?;
        let width = self.statuses.iter().map(|s| s.id.len()).max().unwrap_or(8).max(8);
        writeln!(f, "{:<width$}  status", "strategy")?;
        for s in &self.statuses {
            match &s.error {
                None => writeln!(f, "{:<width$}  ok", s.id)?,
                Some(e) => writeln!(f, "{:<width$}  FAILED: {e}", s.id)?,
            }
        }
        Ok(())
    }
}

fn write_wide_nav(path: &Path, ledgers: &[&BacktestLedger], span: Option<(NaiveDate, NaiveDate)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(ledgers.iter().map(|l| l.strategy.clone()));
    w.write_record(&header)?;
    let Some(first) = ledgers.first() else {
        w.flush()?;
        return Ok(());
    };
    let keep = |d: &NaiveDate| span.is_none_or(|(s, e)| *d >= s && *d <= e);
    let base: Vec<f64> = ledgers
        .iter()
        .map(|l| l.nav.iter().find(|(d, _)| keep(d)).map_or(1.0, |p| p.1))
        .collect();
    for (k, (date, _)) in first.nav.iter().enumerate() {
        if !keep(date) {
            continue;
        }
        let mut rec = vec![date.to_string()];
        for (l, b) in ledgers.iter().zip(&base) {
            rec.push((l.nav[k].1 / b).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write every output of a finished backtest into `dir`.
pub fn write_outputs(dir: &Path, report: &BacktestReport, metrics: &MetricsTable, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("plotdata"))?;
    let ledgers: Vec<&BacktestLedger> = report.ledgers().collect();
    let mut files = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };
    write_nav_csv(&out("nav.csv"), ledgers.iter().copied())?;
    write_weights_csv(&out("weights.csv"), ledgers.iter().copied())?;
    write_hparams_csv(&out("hparams.csv"), ledgers.iter().copied())?;
    write_metrics_json(&out("metrics.json"), metrics)?;
    write_metrics_csv(&out("metrics.csv"), metrics)?;
    write_trace_csv(&out("train_trace.csv"), ledgers.iter().copied())?;
    write_wide_nav(&out("plotdata/cumulative_nav.csv"), &ledgers, None)?;
    for s in &cfg.spans {
        write_wide_nav(&out(&format!("plotdata/span_{}.csv", s.name)), &ledgers, Some((s.start, s.end)))?;
    }
    Ok(files)
}

/// Validate, run and write a configured backtest. Per-strategy failures are
/// reported in the summary rather than as an error.
pub fn cmd_backtest(cfg: &RunConfig) -> Result<BacktestSummary> {
    cfg.validate()?;
    let (frame, features) = load_data(cfg)?;
    let report = run_backtest(&frame, &features, &cfg.strategies, &cfg.effective_backtest())?;
    let metrics = subperiod_report(report.ledgers(), &cfg.spans)?;
    let files = write_outputs(&cfg.output_dir, &report, &metrics, cfg)?;
    Ok(BacktestSummary {
        output_dir: cfg.output_dir.clone(),
        rebalances: report.rebalance_dates.len(),
        statuses: report
            .runs
            .iter()
            .map(|r| StrategyStatus {
                id: r.id.clone(),
                error: r.outcome.as_ref().err().map(|e| e.to_string()),
            })
            .collect(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricDelta {
    pub strategy: String,
    pub span: String,
    pub metric: &'static str,
    pub left: Option<f64>,
    pub right: Option<f64>,
    /// `right - left` when both are defined.
    pub delta: Option<f64>,
    pub sign_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub rows: Vec<MetricDelta>,
    /// Strategies (or `strategy/span` pairs) present in only one file.
    pub unmatched: Vec<String>,
}

fn metric_values(m: &MetricsRow) -> [(&'static str, Option<f64>); 5] {
    [
        ("return_pct", Some(m.annualized_return)),
        ("volatility_pct", Some(m.annualized_volatility)),
        ("sharpe", m.sharpe),
        ("sortino", m.sortino),
        ("max_drawdown_pct", Some(m.max_drawdown)),
    ]
}

pub fn compare_tables(left: &MetricsTable, right: &MetricsTable) -> Comparison {
    let mut out = Comparison::default();
    let only = |a: &MetricsTable, b: &MetricsTable, side: &str, out: &mut Vec<String>| {
        for k in a.keys().filter(|k| !b.contains_key(*k)) {
            out.push(format!("{k} (only in {side})"));
        }
    };
    only(left, right, "first", &mut out.unmatched);
    only(right, left, "second", &mut out.unmatched);
    for (strategy, spans) in left {
        let Some(other) = right.get(strategy) else { continue };
        for (span, a) in spans {
            let Some(b) = other.get(span) else {
                out.unmatched.push(format!("{strategy}/{span} (only in first)"));
                continue;
            };
            for ((metric, x), (_, y)) in metric_values(a).into_iter().zip(metric_values(b)) {
                let delta = x.zip(y).map(|(x, y)| y - x);
                let sign_flip = x.zip(y).is_some_and(|(x, y)| x * y < 0.0);
                out.rows.push(MetricDelta {
                    strategy: strategy.clone(),
                    span: span.clone(),
                    metric,
                    left: x,
                    right: y,
                    delta,
                    sign_flip,
                });
            }
        }
        for span in other.keys().filter(|s| !spans.contains_key(*s)) {
            out.unmatched.push(format!("{strategy}/{span} (only in second)"));
        }
    }
    out
}

pub fn cmd_compare(left: &Path, right: &Path) -> Result<Comparison> {
    Ok(compare_tables(&read_metrics_json(left)?, &read_metrics_json(right)?))
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = |v: Option<f64>| v.map_or("undef".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "{:<22} {:<10} {:<17} {:>12} {:>12} {:>12}", "strategy", "span", "metric", "first", "second", "delta")?;
        for r in &self.rows {
            let delta = r.delta.map_or("undef".to_string(), |d| format!("{d:+.4}"));
            let flag = if r.sign_flip { "  << sign flip" } else { "" };
            writeln!(
                f,
                "{:<22} {:<10} {:<17} {:>12} {:>12} {:>12}{flag}",
                r.strategy,
                r.span,
                r.metric,
                num(r.left),
                num(r.right),
                delta
            )?;
        }
        if !self.unmatched.is_empty() {
            writeln!(f, "unmatched:")?;
            for u in &self.unmatched {
                writeln!(f, "  {u}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SyntheticSpec,
    pub coefficients: Vec<f64>,
}

/// Write a synthetic market as per-ticker CSVs plus its planted features
/// (`planted_features.csv`) and `truth.json`, both beside the ticker files
/// under `truth/`.
pub fn cmd_synth(spec: &SyntheticSpec, dir: &Path) -> Result<BTreeMap<&'static str, PathBuf>> {
    let (frame, tensor, coefficients) = generate_synthetic(spec)?;
    write_csv_dir(&frame, dir)?;
    let meta = dir.join("truth");
    fs::create_dir_all(&meta)?;
    let mut files = BTreeMap::new();
    let features = meta.join("planted_features.csv");
    write_features_csv(&features, &tensor)?;
    files.insert("features", features);
    let truth = meta.join("truth.json");
    let mut text = serde_json::to_string_pretty(&SynthTruth {
        spec: spec.clone(),
        coefficients,
    })?;
    text.push('\n');
    fs::write(&truth, text)?;
    files.insert("truth", truth);
    files.insert("data", dir.to_path_buf());
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FULL_SPAN;

    fn row(sharpe: f64) -> MetricsRow {
        MetricsRow {
            annualized_return: 5.0,
            annualized_volatility: 10.0,
            sharpe: Some(sharpe),
            sortino: None,
            max_drawdown: -3.0,
        }
    }

    fn table(entries: &[(&str, f64)]) -> MetricsTable {
        entries
            .iter()
            .map(|(s, sh)| (s.to_string(), BTreeMap::from([(FULL_SPAN.to_string(), row(*sh))])))
            .collect()
    }

    #[test]
    fn self_comparison_is_all_zero() {
        let t = table(&[("a", 0.5), ("b", -0.2)]);
        let c = compare_tables(&t, &t);
        assert!(c.unmatched.is_empty());
        assert!(c.rows.iter().all(|r| r.delta.is_none_or(|d| d == 0.0) && !r.sign_flip));
    }

    #[test]
    fn deltas_flips_and_unmatched() {
        let c = compare_tables(&table(&[("a", 0.5), ("b", 0.3)]), &table(&[("a", 0.7), ("b", -0.1), ("c", 1.0)]));
        let sharpe = |s: &str| c.rows.iter().find(|r| r.strategy == s && r.metric == "sharpe").unwrap().clone();
        assert!((sharpe("a").delta.unwrap() - 0.2).abs() < 1e-12);
        assert!(!sharpe("a").sign_flip);
        assert!(sharpe("b").sign_flip);
        assert_eq!(c.unmatched, vec!["c (only in second)"]);
        let text = c.to_string();
        assert!(text.contains("sign flip") && text.contains("unmatched"));
    }

    #[test]
    fn panel_and_features_round_trip() {
        let spec = SyntheticSpec::new(3, 60, 4, vec![0.01, 0.02], 0.01);
        let (frame, tensor, _) = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_panel_csv(&dir.path().join("p.csv"), &frame).unwrap();
        assert_eq!(read_panel_csv(&dir.path().join("p.csv")).unwrap(), frame);
        write_features_csv(&dir.path().join("f.csv"), &tensor).unwrap();
        assert_eq!(read_features_csv(&dir.path().join("f.csv")).unwrap(), tensor);
    }

    #[test]
    fn synth_then_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::new(2, 300, 9, vec![0.01], 0.01);
        cmd_synth(&spec, &dir.path().join("data")).unwrap();
        let out = dir.path().join("cache");
        let summary = cmd_ingest(&dir.path().join("data"), &out, &IndicatorConfig::default()).unwrap();
        assert_eq!(summary.tickers.len(), 2);
        assert_eq!(summary.n_dates, 300);
        assert_eq!(summary.dropped_dates, 0);
        assert!(out.join("panel.csv").is_file() && out.join("features.csv").is_file());
        let back = read_features_csv(&out.join("features.csv")).unwrap();
        assert_eq!(back.n_dates(), summary.feature_rows);
    }
}
