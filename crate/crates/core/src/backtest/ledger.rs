use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::Portfolio;

/// Live position: net asset value and the current (drifted) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdings {
    pub nav: f64,
    pub weights: Vec<f64>,
}

impl Holdings {
    pub fn uniform(n: usize) -> Self {
        Holdings {
            nav: 1.0,
            weights: Portfolio::uniform(n).into_inner(),
        }
    }

    /// Trade to `target`, paying `fee_rate` on the L1 turnover. Returns
    /// `(turnover, fee)` with the fee in NAV units.
    pub fn rebalance(&mut self, target: &Portfolio, fee_rate: f64) -> (f64, f64) {
        let turnover = target.l1_distance(&self.weights);
        let before = self.nav;
        self.nav = before * (1.0 - fee_rate * turnover);
        self.weights = target.weights().to_vec();
        (turnover, fee_rate * turnover * before)
    }

    /// One day of buy-and-hold: NAV compounds by `w.r` and weights drift.
    pub fn drift(&mut self, returns: &[f64]) {
        let growth: f64 = 1.0 + self.weights.iter().zip(returns).map(|(w, r)| w * r).sum::<f64>();
        self.nav *= growth;
        for (w, r) in self.weights.iter_mut().zip(returns) {
            *w = *w * (1.0 + r) / growth;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub epochs: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceRecord {
    pub date: NaiveDate,
    pub target: Vec<f64>,
    /// Holdings just before the trade.
    pub drifted: Vec<f64>,
    pub turnover: f64,
    pub fee: f64,
    pub nav_before: f64,
    pub hyperparameters: Option<Hyperparameters>,
    /// Per-trial training traces of the winning search, by trial index.
    pub traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub strategy: String,
    pub tickers: Vec<String>,
    /// End-of-day NAV, starting with a 1.0 row the day before the first trade.
    pub nav: Vec<(NaiveDate, f64)>,
    pub rebalances: Vec<RebalanceRecord>,
}

impl BacktestLedger {
    pub fn new(strategy: impl Into<String>, tickers: Vec<String>, base_date: NaiveDate) -> Self {
        BacktestLedger {
            strategy: strategy.into(),
            tickers,
            nav: vec![(base_date, 1.0)],
            rebalances: Vec::new(),
        }
    }
}

/// Trade into `target` at the start of a holding period, then let it drift
/// through `period` (dated daily returns), appending to `ledger`.
pub fn accrue(
    ledger: &mut BacktestLedger,
    holdings: &mut Holdings,
    date: NaiveDate,
    target: &Portfolio,
    period: &[(NaiveDate, &[f64])],
    fee_rate: f64,
) -> Result<RebalanceRecord> {
    if target.len() != holdings.weights.len() {
        return Err(Error::Dimension("target weights do not match holdings".into()));
    }
    let drifted = holdings.weights.clone();
    let nav_before = holdings.nav;
    let (turnover, fee) = holdings.rebalance(target, fee_rate);
    check_nav(holdings.nav, date)?;
    for (day, r) in period {
        holdings.drift(r);
        check_nav(holdings.nav, *day)?;
        ledger.nav.push((*day, holdings.nav));
    }
    Ok(RebalanceRecord {
        date,
        target: target.weights().to_vec(),
        drifted,
        turnover,
        fee,
        nav_before,
        hyperparameters: None,
        traces: Vec::new(),
    })
}

fn check_nav(nav: f64, date: NaiveDate) -> Result<()> {
    if nav > 0.0 && nav.is_finite() {
        Ok(())
    } else {
        Err(Error::Accounting {
            date,
            message: format!("net asset value became {nav}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, day).unwrap()
    }

    #[test]
    fn full_switch_costs_one_percent() {
        let mut h = Holdings {
            nav: 1.0,
            weights: vec![1.0, 0.0],
        };
        let (turnover, fee) = h.rebalance(&Portfolio::vertex(2, 1), 0.005);
        assert_eq!(turnover, 2.0);
        assert_eq!(h.nav, 0.99);
        assert_eq!(fee, 0.01);
    }

    #[test]
    fn trading_to_the_drifted_book_is_free() {
        let mut h = Holdings {
            nav: 1.3,
            weights: vec![0.2, 0.8],
        };
        let (turnover, fee) = h.rebalance(&Portfolio::new(vec![0.2, 0.8]).unwrap(), 0.005);
        assert_eq!((turnover, fee, h.nav), (0.0, 0.0, 1.3));
    }

    #[test]
    fn drift_is_buy_and_hold() {
        let mut h = Holdings {
            nav: 2.0,
            weights: vec![0.5, 0.5],
        };
        h.drift(&[0.1, -0.1]);
        assert!((h.nav - 2.0).abs() < 1e-15);
        assert!((h.weights[0] - 0.55).abs() < 1e-15);
        h.drift(&[0.0, 0.2]);
        assert!((h.nav - 2.0 * (0.55 + 0.45 * 1.2)).abs() < 1e-15);
        assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_month_only_pays_the_fee() {
        let mut h = Holdings::uniform(3);
        let mut ledger = BacktestLedger::new("x", vec!["A".into(), "B".into(), "C".into()], d(1));
        let zeros = [0.0; 3];
        let period: Vec<(NaiveDate, &[f64])> = (2..6).map(|k| (d(k), &zeros[..])).collect();
        let rec = accrue(&mut ledger, &mut h, d(2), &Portfolio::vertex(3, 0), &period, 0.005).unwrap();
        let expected = 1.0 - 0.005 * (4.0 / 3.0);
        assert!((rec.turnover - 4.0 / 3.0).abs() < 1e-15);
        assert!(ledger.nav[1..].iter().all(|(_, v)| *v == h.nav));
        assert!((h.nav - expected).abs() < 1e-15);
        assert_eq!(ledger.nav.len(), 5);
    }

    #[test]
    fn wipeout_is_an_accounting_error() {
        let mut h = Holdings::uniform(1);
        let mut ledger = BacktestLedger::new("x", vec!["A".into()], d(1));
        let r = [-1.0];
        let period = [(d(2), &r[..])];
        assert!(matches!(
            accrue(&mut ledger, &mut h, d(2), &Portfolio::uniform(1), &period, 0.0),
            Err(Error::Accounting { .. })
        ));
    }
}
