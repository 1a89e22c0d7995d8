//! Linear return predictors trained by MSE, SPO+ or RobustSPO, and the
//! seeded random hyperparameter search around them.

mod adam;
mod predictor;
mod search;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use predictor::LinearPredictor;
pub use search::{draw_trials, hyperparameter_search, random_search, SearchOutcome, SearchSpace, TrialRecord};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::market_data::MarketFrame;
use crate::solvers::{dot, DecisionProblem};
use crate::spo::{evaluate, perturbations, robust_over, Oracle, RobustConfig};
pub(crate) use predictor::accumulate_gradient;
pub(crate) use search::check_ordering;

/// Feature slices paired with the next trading day's simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_assets: usize,
    n_features: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    /// Date of each target return (the day after the feature date).
    pub target_dates: Vec<NaiveDate>,
    pub feature_dates: Vec<NaiveDate>,
}

impl Dataset {
    pub fn new(
        n_assets: usize,
        n_features: usize,
        features: Vec<f64>,
        targets: Vec<f64>,
        feature_dates: Vec<NaiveDate>,
        target_dates: Vec<NaiveDate>,
    ) -> Result<Self> {
        let s = target_dates.len();
        if features.len() != s * n_assets * n_features || targets.len() != s * n_assets || feature_dates.len() != s {
            return Err(Error::Dimension("dataset arrays disagree on sample count".into()));
        }
        if let Some(k) = (0..s).find(|&k| {
            let x = &features[k * n_assets * n_features..(k + 1) * n_assets * n_features];
            let r = &targets[k * n_assets..(k + 1) * n_assets];
            x.iter().chain(r).any(|v| !v.is_finite())
        }) {
            return Err(Error::Invalid(format!("non-finite feature or target in sample for {}", target_dates[k])));
        }
        Ok(Dataset {
            n_assets,
            n_features,
            features,
            targets,
            target_dates,
            feature_dates,
        })
    }

    /// One sample per tensor date that has a following trading day in `frame`.
    pub fn from_frame(tensor: &FeatureTensor, frame: &MarketFrame) -> Result<Self> {
        if tensor.tickers != frame.tickers {
            return Err(Error::Dimension("feature and price tickers differ".into()));
        }
        let (n, f) = (tensor.n_assets(), tensor.n_features());
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut feature_dates = Vec::new();
        let mut target_dates = Vec::new();
        for (t, date) in tensor.dates.iter().enumerate() {
            let j = frame
                .index_of(*date)
                .ok_or_else(|| Error::Dimension(format!("feature date {date} missing from price frame")))?;
            if j + 1 >= frame.n_dates() {
                continue;
            }
            features.extend_from_slice(tensor.slice(t));
            let (p0, p1) = (&frame.adj_close[j], &frame.adj_close[j + 1]);
            targets.extend(p0.iter().zip(p1).map(|(a, b)| b / a - 1.0));
            feature_dates.push(*date);
            target_dates.push(frame.dates[j + 1]);
        }
        Dataset::new(n, f, features, targets, feature_dates, target_dates)
    }

    pub fn len(&self) -> usize {
        self.target_dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self, k: usize) -> &[f64] {
        let b = self.n_assets * self.n_features;
        &self.features[k * b..(k + 1) * b]
    }

    pub fn target(&self, k: usize) -> &[f64] {
        &self.targets[k * self.n_assets..(k + 1) * self.n_assets]
    }

    /// Same samples with every feature block passed through `f`.
    pub fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Dataset> {
        let mut features = Vec::with_capacity(self.features.len());
        for k in 0..self.len() {
            features.extend(f(self.features(k)));
        }
        Dataset::new(
            self.n_assets,
            self.n_features,
            features,
            self.targets.clone(),
            self.feature_dates.clone(),
            self.target_dates.clone(),
        )
    }

    /// Samples whose target date lies in `[start, end)`.
    pub fn span(&self, start: NaiveDate, end: NaiveDate) -> Dataset {
        let lo = self.target_dates.partition_point(|d| *d < start);
        let hi = self.target_dates.partition_point(|d| *d < end).max(lo);
        let b = self.n_assets * self.n_features;
        Dataset {
            n_assets: self.n_assets,
            n_features: self.n_features,
            features: self.features[lo * b..hi * b].to_vec(),
            targets: self.targets[lo * self.n_assets..hi * self.n_assets].to_vec(),
            target_dates: self.target_dates[lo..hi].to_vec(),
            feature_dates: self.feature_dates[lo..hi].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Mse,
    SpoPlus,
    RobustSpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub robust: Option<RobustConfig>,
    pub problem: DecisionProblem,
    pub fit_intercept: bool,
}

impl TrainConfig {
    pub fn new(loss: LossKind, problem: DecisionProblem) -> Self {
        TrainConfig {
            loss,
            epochs: 30,
            learning_rate: 1e-2,
            batch_size: 63,
            adam: AdamConfig::default(),
            seed: 0,
            robust: None,
            problem,
            fit_intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(1..=1000).contains(&self.epochs) {
            problems.push(format!("epochs must lie in [1, 1000], got {}", self.epochs));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if let Err(e) = self.problem.validate() {
            problems.push(e.to_string());
        }
        match (&self.loss, &self.robust) {
            (LossKind::RobustSpo, None) => problems.push("RobustSpo loss needs a robust config".into()),
            (LossKind::RobustSpo, Some(r)) => {
                if let Err(e) = r.validate() {
                    problems.push(e.to_string());
                }
            }
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearPredictor,
    /// Mean per-sample loss of each epoch, measured before each batch update.
    pub trace: Vec<f64>,
}

/// Everything about the loss that does not depend on the parameters.
pub(crate) struct LossContext<'a> {
    config: &'a TrainConfig,
    oracles: Vec<Oracle>,
    set: Vec<Vec<f64>>,
}

impl<'a> LossContext<'a> {
    pub(crate) fn new(data: &Dataset, config: &'a TrainConfig) -> Result<Self> {
        let oracles = match config.loss {
            LossKind::Mse => Vec::new(),
            _ => (0..data.len())
                .map(|k| Oracle::new(data.target(k), &config.problem))
                .collect::<Result<_>>()?,
        };
        let set = match (config.loss, &config.robust) {
            (LossKind::RobustSpo, Some(r)) => {
                let seeded = RobustConfig {
                    seed: r.seed ^ config.seed,
                    ..*r
                };
                perturbations(data.n_assets(), &seeded)
            }
            _ => Vec::new(),
        };
        Ok(LossContext { config, oracles, set })
    }

    /// Loss of sample `k` and its gradient with respect to the prediction.
    pub(crate) fn sample(&self, data: &Dataset, k: usize, r_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = data.target(k);
        match self.config.loss {
            LossKind::Mse => {
                let diff: Vec<f64> = r_hat.iter().zip(r).map(|(a, b)| a - b).collect();
                Ok((dot(&diff, &diff), diff.iter().map(|d| 2.0 * d).collect()))
            }
            LossKind::SpoPlus => {
                let e = evaluate(r_hat, r, &self.config.problem, &self.oracles[k], false)?;
                Ok((e.loss, e.subgradient))
            }
            LossKind::RobustSpo => {
                let e = robust_over(r_hat, r, &self.config.problem, &self.oracles[k], &self.set, false)?;
                let g = e.gradient_wrt_prediction();
                Ok((e.evaluation.loss, g))
            }
        }
    }

    /// Mean loss over `range` and its gradient in packed parameter order.
    pub(crate) fn batch(
        &self,
        data: &Dataset,
        model: &LinearPredictor,
        range: std::ops::Range<usize>,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; model.n_features() + 1];
        let mut loss = 0.0;
        let count = range.len() as f64;
        for k in range {
            let x = data.features(k);
            let r_hat = model.predict(x)?;
            let (l, g) = self.sample(data, k, &r_hat)?;
            loss += l;
            accumulate_gradient(x, &g, &mut grad);
        }
        grad.iter_mut().for_each(|g| *g /= count);
        if !self.config.fit_intercept {
            *grad.last_mut().expect("intercept slot") = 0.0;
        }
        Ok((loss / count, grad))
    }
}

/// Chronological mini-batch Adam from a zero predictor.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(Error::WindowTooShort {
            required: config.batch_size,
            available: data.len(),
        });
    }
    if config.problem.n_assets() != data.n_assets() {
        return Err(Error::Dimension(format!(
            "decision problem has {} assets, data has {}",
            config.problem.n_assets(),
            data.n_assets()
        )));
    }
    let ctx = LossContext::new(data, config)?;
    let mut model = LinearPredictor::zeros(data.n_features());
    let mut params = model.params();
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for (batch, start) in (0..data.len()).step_by(config.batch_size).enumerate() {
            let end = (start + config.batch_size).min(data.len());
            let (loss, grad) = ctx.batch(data, &model, start..end)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += loss * (end - start) as f64;
            adam_step(&mut state, &mut params, &grad, config.learning_rate, &config.adam);
            model.set_params(&params);
        }
        trace.push(total / data.len() as f64);
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs,
            batch: 0,
        });
    }
    Ok(TrainOutcome { model, trace })
}

/// Mean over the samples of `r.w - fee_rate * ||w - w_prev||_1`, with `w`
/// the problem's decision for the model's prediction.
pub fn decision_score(data: &Dataset, model: &LinearPredictor, problem: &DecisionProblem, fee_rate: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Span("empty validation span".into()));
    }
    let mut total = 0.0;
    for k in 0..data.len() {
        let w = problem.solve(&model.predict(data.features(k))?)?;
        total += w.dot(data.target(k)) - fee_rate * problem.w_prev.l1_distance(w.weights());
    }
    Ok(total / data.len() as f64)
}

pub fn mean_squared_error(data: &Dataset, model: &LinearPredictor) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Span("empty validation span".into()));
    }
    let mut total = 0.0;
    for k in 0..data.len() {
        let r_hat = model.predict(data.features(k))?;
        total += r_hat.iter().zip(data.target(k)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{generate_synthetic, weekday_calendar, SyntheticSpec};
    use crate::solvers::Portfolio;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planted(n: usize, days: usize, seed: u64, beta: Vec<f64>, noise: f64) -> Dataset {
        let spec = SyntheticSpec::new(n, days, seed, beta, noise);
        let (frame, tensor, _) = generate_synthetic(&spec).unwrap();
        Dataset::from_frame(&tensor, &frame).unwrap()
    }

    /// Random features with returns `beta.x + noise`, built directly.
    fn linear_data(rng: &mut ChaCha8Rng, s: usize, n: usize, beta: &[f64], noise: f64) -> Dataset {
        let f = beta.len();
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..s * n {
            let x: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            targets.push(dot(&x, beta) + noise * rng.random_range(-1.0..1.0));
            features.extend(x);
        }
        let dates = weekday_calendar(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), s + 1);
        Dataset::new(n, f, features, targets, dates[..s].to_vec(), dates[1..].to_vec()).unwrap()
    }

    #[test]
    fn dataset_targets_are_next_day_returns() {
        let spec = SyntheticSpec::new(3, 40, 1, vec![0.01], 0.01);
        let (frame, tensor, _) = generate_synthetic(&spec).unwrap();
        let data = Dataset::from_frame(&tensor, &frame).unwrap();
        assert_eq!(data.len(), 39);
        for k in 0..data.len() {
            assert_eq!(frame.dates[k + 1], data.target_dates[k]);
            for i in 0..3 {
                let want = frame.adj_close[k + 1][i] / frame.adj_close[k][i] - 1.0;
                assert_eq!(data.target(k)[i], want);
            }
        }
        let part = data.span(data.target_dates[5], data.target_dates[9]);
        assert_eq!(part.len(), 4);
        assert_eq!(part.target(0), data.target(5));
    }

    #[test]
    fn mse_recovers_planted_coefficients() {
        let beta = vec![0.01, -0.005, 0.002];
        let data = planted(5, 600, 11, beta.clone(), 1e-12);
        let mut cfg = TrainConfig::new(LossKind::Mse, DecisionProblem::max_return(5));
        cfg.epochs = 40;
        cfg.learning_rate = 1e-3;
        let out = train(&data, &cfg).unwrap();
        for (got, want) in out.model.theta.iter().zip(&beta) {
            assert!((got - want).abs() <= 1e-3, "{:?} vs {beta:?}", out.model.theta);
        }
        assert!(out.model.intercept.abs() <= 1e-3);
    }

    #[test]
    fn spo_learns_a_dominant_asset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (s, n, f) = (252, 4, 3);
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..s {
            for i in 0..n {
                let x: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
                let base = if i == 2 { 0.02 } else { 0.0 };
                targets.push(base + 0.01 * x[0] + 0.002 * rng.random_range(-1.0..1.0));
                let mut x = x;
                x[1] = if i == 2 { 1.0 } else { -1.0 / 3.0 };
                features.extend(x);
            }
        }
        let dates = weekday_calendar(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), s + 1);
        let data = Dataset::new(n, f, features, targets, dates[..s].to_vec(), dates[1..].to_vec()).unwrap();
        let mut cfg = TrainConfig::new(LossKind::SpoPlus, DecisionProblem::max_return(n));
        cfg.epochs = 30;
        let model = train(&data, &cfg).unwrap().model;
        let first = (0..s)
            .filter(|&k| {
                let r_hat = model.predict(data.features(k)).unwrap();
                crate::solvers::solve_max_return(&r_hat).weights()[2] == 1.0
            })
            .count();
        assert!(first as f64 >= 0.95 * s as f64, "{first}/{s}");
    }

    #[test]
    fn zero_learning_rate_keeps_zero_parameters() {
        let data = planted(3, 200, 2, vec![0.01, 0.02], 0.01);
        for loss in [LossKind::Mse, LossKind::SpoPlus, LossKind::RobustSpo] {
            let mut cfg = TrainConfig::new(loss, DecisionProblem::max_return(3));
            cfg.learning_rate = 0.0;
            cfg.epochs = 3;
            cfg.robust = Some(RobustConfig::new(0.1));
            let out = train(&data, &cfg).unwrap();
            assert_eq!(out.model, LinearPredictor::zeros(2));
        }
    }

    #[test]
    fn full_batch_mse_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = linear_data(&mut rng, 120, 4, &[0.3, -0.2, 0.1], 0.05);
        let mut cfg = TrainConfig::new(LossKind::Mse, DecisionProblem::max_return(4));
        cfg.learning_rate = 1e-4;
        cfg.epochs = 50;
        cfg.batch_size = data.len();
        let trace = train(&data, &cfg).unwrap().trace;
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "{trace:?}");
        }
    }

    fn finite_difference_check(loss: LossKind, problem: DecisionProblem, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = problem.n_assets();
        let data = linear_data(&mut rng, 8, n, &[0.05, -0.03, 0.02], 0.05);
        let mut cfg = TrainConfig::new(loss, problem);
        cfg.robust = Some(RobustConfig::new(0.05));
        let ctx = LossContext::new(&data, &cfg).unwrap();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 20 {
            attempts += 1;
            assert!(attempts < 2000, "too few smooth points");
            let model = LinearPredictor {
                theta: (0..3).map(|_| rng.random_range(-0.5..0.5)).collect(),
                intercept: rng.random_range(-0.05..0.05),
            };
            let k = rng.random_range(0..data.len());
            let (_, grad) = ctx.batch(&data, &model, k..k + 1).unwrap();
            let p = model.params();
            let h = 1e-7;
            let mut smooth = true;
            let mut fd = vec![0.0; p.len()];
            for j in 0..p.len() {
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    q[j] += delta;
                    let mut m = model.clone();
                    m.set_params(&q);
                    ctx.batch(&data, &m, k..k + 1).unwrap().0
                };
                let (lp, l0, lm) = (eval(h), eval(0.0), eval(-h));
                if ((lp - l0) - (l0 - lm)).abs() > 1e-12 * (1.0 + l0.abs()) {
                    smooth = false;
                    break;
                }
                fd[j] = (lp - lm) / (2.0 * h);
            }
            if !smooth {
                continue;
            }
            let scale = grad.iter().map(|g| g.abs()).fold(1e-8, f64::max);
            for (a, b) in grad.iter().zip(&fd) {
                assert!((a - b).abs() / scale <= 1e-5, "{grad:?} vs {fd:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(LossKind::Mse, DecisionProblem::max_return(4), 1);
        finite_difference_check(LossKind::SpoPlus, DecisionProblem::max_return(4), 2);
        finite_difference_check(LossKind::SpoPlus, DecisionProblem::fee(0.01, Portfolio::uniform(4)), 3);
        finite_difference_check(LossKind::SpoPlus, DecisionProblem::fee_l2(0.005, 0.42, Portfolio::uniform(4)), 4);
        finite_difference_check(LossKind::RobustSpo, DecisionProblem::max_return(4), 5);
    }

    #[test]
    fn spo_intercept_gradient_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = linear_data(&mut rng, 30, 5, &[0.1, 0.2], 0.1);
        let cfg = TrainConfig::new(LossKind::SpoPlus, DecisionProblem::fee(0.01, Portfolio::uniform(5)));
        let ctx = LossContext::new(&data, &cfg).unwrap();
        let model = LinearPredictor {
            theta: vec![0.3, -0.1],
            intercept: 0.01,
        };
        let (_, grad) = ctx.batch(&data, &model, 0..30).unwrap();
        assert!(grad[2].abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let data = planted(3, 100, 2, vec![0.01], 0.01);
        let mut cfg = TrainConfig::new(LossKind::RobustSpo, DecisionProblem::max_return(3));
        cfg.epochs = 0;
        match train(&data, &cfg) {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
        let mut cfg = TrainConfig::new(LossKind::Mse, DecisionProblem::max_return(3));
        cfg.batch_size = 500;
        assert!(matches!(train(&data, &cfg), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        let ok = Dataset::new(2, 1, vec![0.1, 0.2], vec![0.01, 0.02], vec![d], vec![d]);
        assert!(ok.is_ok());
        let bad = Dataset::new(2, 1, vec![0.1, 0.2], vec![0.01, f64::NAN], vec![d], vec![d]);
        assert!(matches!(bad, Err(Error::Invalid(_))));
    }
}
