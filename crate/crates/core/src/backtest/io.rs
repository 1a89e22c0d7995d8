use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::BacktestLedger;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavRow {
    pub date: NaiveDate,
    pub strategy: String,
    pub nav: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRow {
    pub rebalance_date: NaiveDate,
    pub strategy: String,
    pub ticker: String,
    pub weight: f64,
    pub turnover: f64,
    pub fee: f64,
}

/// Hyperparameter fields are empty for strategies without a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HparamsRow {
    pub rebalance_date: NaiveDate,
    pub strategy: String,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub score: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    rebalance_date: NaiveDate,
    strategy: &'a str,
    trial: usize,
    epoch: usize,
    loss: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_nav_csv<'a>(path: &Path, ledgers: impl IntoIterator<Item = &'a BacktestLedger>) -> Result<()> {
    write_rows(
        path,
        ledgers.into_iter().flat_map(|l| {
            l.nav.iter().map(|(date, nav)| NavRow {
                date: *date,
                strategy: l.strategy.clone(),
                nav: *nav,
            })
        }),
    )
}

pub fn read_nav_csv(path: &Path) -> Result<Vec<NavRow>> {
    read_rows(path)
}

pub fn write_weights_csv<'a>(path: &Path, ledgers: impl IntoIterator<Item = &'a BacktestLedger>) -> Result<()> {
    write_rows(
        path,
        ledgers.into_iter().flat_map(|l| {
            l.rebalances.iter().flat_map(move |r| {
                l.tickers.iter().zip(&r.target).map(move |(ticker, weight)| WeightsRow {
                    rebalance_date: r.date,
                    strategy: l.strategy.clone(),
                    ticker: ticker.clone(),
                    weight: *weight,
                    turnover: r.turnover,
                    fee: r.fee,
                })
            })
        }),
    )
}

pub fn read_weights_csv(path: &Path) -> Result<Vec<WeightsRow>> {
    read_rows(path)
}

pub fn write_hparams_csv<'a>(path: &Path, ledgers: impl IntoIterator<Item = &'a BacktestLedger>) -> Result<()> {
    write_rows(
        path,
        ledgers.into_iter().flat_map(|l| {
            l.rebalances.iter().map(|r| HparamsRow {
                rebalance_date: r.date,
                strategy: l.strategy.clone(),
                lr: r.hyperparameters.as_ref().map(|h| h.learning_rate),
                epochs: r.hyperparameters.as_ref().map(|h| h.epochs),
                score: r.hyperparameters.as_ref().map(|h| h.score),
            })
        }),
    )
}

pub fn read_hparams_csv(path: &Path) -> Result<Vec<HparamsRow>> {
    read_rows(path)
}

/// Per-epoch losses of every search trial, `rebalance_date,strategy,trial,epoch,loss`.
pub fn write_trace_csv<'a>(path: &Path, ledgers: impl IntoIterator<Item = &'a BacktestLedger>) -> Result<()> {
    write_rows(
        path,
        ledgers.into_iter().flat_map(|l| {
            l.rebalances.iter().flat_map(move |r| {
                r.traces.iter().enumerate().flat_map(move |(trial, trace)| {
                    trace.iter().enumerate().map(move |(epoch, loss)| TraceRow {
                        rebalance_date: r.date,
                        strategy: &l.strategy,
                        trial,
                        epoch,
                        loss: *loss,
                    })
                })
            })
        }),
    )
}
