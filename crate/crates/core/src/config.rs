//! JSON run configuration for the batch CLI.
//!
//! ```json
//! {
//!   "data_dir": "data/etfs",
//!   "output_dir": "out",
//!   "universe": ["SPY", "TLT"],
//!   "seed": 7,
//!   "backtest": { "fee_rate": 0.005, "start": "2017-01-01" },
//!   "search": { "n_trials": 20 },
//!   "strategies": [{ "id": "spo-plus-fee", "type": "spo_plus_fee", "gamma": 0.005 }],
//!   "spans": [{ "name": "covid", "start": "2020-01-01", "end": "2020-12-31" }]
//! }
//! ```
//!
//! Exactly one of `data_dir` and `synthetic` must be present. Omitted
//! sections take the published defaults; an omitted roster means all nine
//! strategies.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{default_roster, BacktestConfig, StrategyEntry};
use crate::error::{Error, Result};
use crate::features::IndicatorConfig;
use crate::market_data::SyntheticSpec;
use crate::metrics::NamedSpan;
use crate::training::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Technical indicators computed from prices.
    #[default]
    Indicators,
    /// The generator's own signal features (synthetic data only).
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub universe: Option<Vec<String>>,
    #[serde(default)]
    pub features: FeatureSource,
    #[serde(default)]
    pub indicators: IndicatorConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default = "default_roster")]
    pub strategies: Vec<StrategyEntry>,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default)]
    pub spans: Vec<NamedSpan>,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        RunConfig {
            data_dir: None,
            synthetic: Some(spec),
            output_dir: default_output(),
            universe: None,
            features: FeatureSource::Indicators,
            indicators: IndicatorConfig::default(),
            backtest: BacktestConfig::default(),
            strategies: default_roster(),
            search: SearchSpace::default(),
            spans: Vec::new(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("config does not parse: {e}")]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    /// The backtest settings with the top-level seed and search folded in.
    pub fn effective_backtest(&self) -> BacktestConfig {
        BacktestConfig {
            seed: self.seed,
            search: SearchSpace {
                seed: self.seed,
                ..self.search
            },
            ..self.backtest.clone()
        }
    }

    /// Keep only the listed strategy ids, in roster order.
    pub fn restrict_strategies(&mut self, ids: &[String]) -> Result<()> {
        let unknown: Vec<String> = ids
            .iter()
            .filter(|id| !self.strategies.iter().any(|s| &s.id == *id))
            .map(|id| format!("--strategies: unknown strategy id '{id}'"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(unknown));
        }
        self.strategies.retain(|s| ids.contains(&s.id));
        Ok(())
    }

    /// Every problem found, each naming its key.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match (&self.data_dir, &self.synthetic) {
            (None, None) => out.push("one of data_dir or synthetic is required".into()),
            (Some(_), Some(_)) => out.push("data_dir and synthetic are mutually exclusive".into()),
            (Some(dir), None) if !dir.is_dir() => {
                out.push(format!("data_dir {} is not a directory", dir.display()))
            }
            (_, Some(spec)) => {
                if let Err(Error::Config(p)) = spec.validate() {
                    out.extend(p.into_iter().map(|m| format!("synthetic.{m}")));
                }
            }
            _ => {}
        }
        if self.features == FeatureSource::Planted && self.synthetic.is_none() {
            out.push("features = planted requires synthetic data".into());
        }
        if self.features == FeatureSource::Indicators {
            if let Err(e) = self.indicators.validate() {
                out.push(format!("indicators: {e}"));
            }
        }
        if let Some(u) = &self.universe {
            if u.len() < 2 {
                out.push("universe must list at least 2 tickers".into());
            }
        }
        let mut bt = self.backtest.problems("backtest.");
        bt.retain(|m| !m.starts_with("backtest.search."));
        out.extend(bt);
        if let Err(Error::Config(p)) = self.search.validate() {
            out.extend(p);
        }
        if self.strategies.is_empty() {
            out.push("strategies must not be empty".into());
        }
        for (k, entry) in self.strategies.iter().enumerate() {
            out.extend(entry.strategy.problems(&format!("strategies[{k}].")));
            if entry.id.is_empty() || entry.id.contains(',') {
                out.push(format!("strategies[{k}].id must be non-empty and contain no commas"));
            }
            if self.strategies[..k].iter().any(|e| e.id == entry.id) {
                out.push(format!("strategies[{k}].id '{}' is duplicated", entry.id));
            }
        }
        for (k, s) in self.spans.iter().enumerate() {
            if s.start >= s.end {
                out.push(format!("spans[{k}] ('{}'): start must precede end", s.name));
            }
            if s.name == crate::metrics::FULL_SPAN || self.spans[..k].iter().any(|o| o.name == s.name) {
                out.push(format!("spans[{k}].name '{}' is reserved or duplicated", s.name));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_json(extra: &str) -> String {
        format!(
            r#"{{"synthetic": {{"n_assets": 3, "n_days": 300, "seed": 1, "signal_coefficients": [0.01], "noise_scale": 0.01}}{extra}}}"#
        )
    }

    #[test]
    fn defaults_follow_the_published_settings() {
        let cfg = RunConfig::from_json(&synthetic_json("")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.strategies.len(), 9);
        assert_eq!(cfg.backtest.fee_rate, 0.005);
        assert_eq!(cfg.backtest.batch_size, 63);
        assert_eq!(cfg.backtest.hidden_units, 32);
        assert_eq!(cfg.search.lr_range, (1e-4, 5e-2));
        assert_eq!(cfg.search.epoch_range, (20, 40));
    }

    #[test]
    fn negative_gamma_is_named() {
        let cfg = RunConfig::from_json(&synthetic_json(
            r#", "strategies": [{"id": "f", "type": "spo_plus_fee", "gamma": -0.1}]"#,
        ))
        .unwrap();
        let p = cfg.problems();
        assert_eq!(p.len(), 1);
        assert!(p[0].contains("strategies[0].gamma"), "{p:?}");
    }

    #[test]
    fn problems_are_listed_exhaustively() {
        let cfg = RunConfig::from_json(
            r#"{"data_dir": "/definitely/not/here", "features": "planted",
                "backtest": {"fee_rate": -1, "batch_size": 0},
                "search": {"n_trials": 0, "lr_range": [0.1, 0.01], "epoch_range": [20, 40], "seed": 0},
                "strategies": [{"id": "r", "type": "robust_spo", "rho": 2.0}]}"#,
        )
        .unwrap();
        let p = cfg.problems();
        for key in ["data_dir", "planted", "backtest.fee_rate", "backtest.batch_size", "search.n_trials", "search.lr_range", "strategies[0].rho"] {
            assert!(p.iter().any(|m| m.contains(key)), "missing {key} in {p:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(&synthetic_json(r#", "fee": 0.1"#)).is_err());
        assert!(RunConfig::from_json(&synthetic_json(r#", "backtest": {"fees": 0.1}"#)).is_err());
    }

    #[test]
    fn strategy_filter() {
        let mut cfg = RunConfig::from_json(&synthetic_json("")).unwrap();
        cfg.restrict_strategies(&["max-sharpe".into(), "spo-plus".into()]).unwrap();
        let ids: Vec<_> = cfg.strategies.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["spo-plus", "max-sharpe"]);
        assert!(cfg.restrict_strategies(&["nope".into()]).is_err());
    }

    #[test]
    fn seed_propagates() {
        let mut cfg = RunConfig::from_json(&synthetic_json("")).unwrap();
        cfg.seed = 42;
        let b = cfg.effective_backtest();
        assert_eq!((b.seed, b.search.seed), (42, 42));
    }
}
