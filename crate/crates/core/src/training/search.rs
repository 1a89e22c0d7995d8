use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decision_score, mean_squared_error, train, Dataset, LinearPredictor, LossKind, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform learning-rate bounds.
    pub lr_range: (f64, f64),
    /// Inclusive integer bounds on the epoch count.
    pub epoch_range: (usize, usize),
    pub n_trials: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr_range: (1e-4, 5e-2),
            epoch_range: (20, 40),
            n_trials: 20,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (lo, hi) = self.lr_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            problems.push(format!("search.lr_range must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        let (elo, ehi) = self.epoch_range;
        if !(1 <= elo && elo <= ehi && ehi <= 1000) {
            problems.push(format!("search.epoch_range must satisfy 1 <= lo <= hi <= 1000, got ({elo}, {ehi})"));
        }
        if self.n_trials == 0 {
            problems.push("search.n_trials must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// The `(learning_rate, epochs)` pairs tried, in trial order.
pub fn draw_trials(space: &SearchSpace) -> Vec<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let (ln_lo, ln_hi) = (space.lr_range.0.ln(), space.lr_range.1.ln());
    (0..space.n_trials)
        .map(|_| {
            let lr = if ln_hi > ln_lo { rng.random_range(ln_lo..ln_hi).exp() } else { space.lr_range.0 };
            let epochs = rng.random_range(space.epoch_range.0..=space.epoch_range.1);
            (lr, epochs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Validation score; higher is better.
    pub score: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<M> {
    pub best: usize,
    /// Model trained by the best trial.
    pub model: M,
    pub trials: Vec<TrialRecord>,
}

impl<M> SearchOutcome<M> {
    pub fn best_trial(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Run every drawn trial (in parallel) and keep the highest score; ties and
/// NaN scores resolve towards the earliest trial. The first failing trial's
/// error is returned.
pub fn random_search<M, F>(space: &SearchSpace, run: F) -> Result<SearchOutcome<M>>
where
    M: Send,
    F: Fn(usize, f64, usize) -> Result<(M, f64, Vec<f64>)> + Sync,
{
    space.validate()?;
    let draws = draw_trials(space);
    let results: Vec<Result<(M, f64, Vec<f64>)>> = draws
        .par_iter()
        .enumerate()
        .map(|(k, &(lr, epochs))| run(k, lr, epochs))
        .collect();
    let mut trials = Vec::with_capacity(draws.len());
    let mut models = Vec::with_capacity(draws.len());
    for (index, (result, &(learning_rate, epochs))) in results.into_iter().zip(&draws).enumerate() {
        let (model, score, trace) = result?;
        models.push(model);
        trials.push(TrialRecord {
            index,
            learning_rate,
            epochs,
            score,
            trace,
        });
    }
    let mut best = 0;
    for (k, t) in trials.iter().enumerate() {
        if t.score > trials[best].score || (trials[best].score.is_nan() && !t.score.is_nan()) {
            best = k;
        }
    }
    let model = models.swap_remove(best);
    Ok(SearchOutcome { best, model, trials })
}

/// Time-series validation of a linear predictor. Decision-focused losses
/// are scored by [`decision_score`] at `fee_rate`; MSE trials by negated
/// validation MSE. Returns the winning configuration with the search record.
pub fn hyperparameter_search(
    train_set: &Dataset,
    validation: &Dataset,
    space: &SearchSpace,
    base: &TrainConfig,
    fee_rate: f64,
) -> Result<(TrainConfig, SearchOutcome<LinearPredictor>)> {
    check_ordering(train_set, validation)?;
    let configure = |lr: f64, epochs: usize| TrainConfig {
        learning_rate: lr,
        epochs,
        ..base.clone()
    };
    let outcome = random_search(space, |_, lr, epochs| {
        let out = train(train_set, &configure(lr, epochs))?;
        let score = match base.loss {
            LossKind::Mse => -mean_squared_error(validation, &out.model)?,
            _ => decision_score(validation, &out.model, &base.problem, fee_rate)?,
        };
        Ok((out.model, score, out.trace))
    })?;
    let best = outcome.best_trial();
    Ok((configure(best.learning_rate, best.epochs), outcome))
}

pub(crate) fn check_ordering(train_set: &Dataset, validation: &Dataset) -> Result<()> {
    match (train_set.target_dates.last(), validation.target_dates.first()) {
        (Some(a), Some(b)) if a < b => Ok(()),
        (Some(_), Some(_)) => Err(Error::Span("validation span must start after the training span".into())),
        _ => Err(Error::Span("empty training or validation span".into())),
    }
}
