//! End-to-end softmax allocator: linear return inferencer, one hidden
//! rectifier layer and a softmax output, trained on realized portfolio
//! return or a Sharpe surrogate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{dot, estimate_covariance, CovarianceEstimate, Portfolio};
use crate::training::{adam_step, check_ordering, random_search, AdamState, Dataset, LinearPredictor, SearchOutcome, SearchSpace, TrainConfig};

pub const HIDDEN_UNITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DflKind {
    MaxReturn,
    MaxSharpe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxAllocator {
    pub inferencer: LinearPredictor,
    /// `hidden x n_assets`, row-major.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// `n_assets x hidden`, row-major.
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

struct Forward {
    r_hat: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    weights: Vec<f64>,
}

impl SoftmaxAllocator {
    /// Layers drawn uniformly from `+-1/sqrt(fan_in)`; inferencer at zero.
    pub fn new(n_assets: usize, n_features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |count: usize, fan_in: usize| -> Vec<f64> {
            let b = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| rng.random_range(-b..b)).collect()
        };
        let hidden_weights = layer(hidden * n_assets, n_assets);
        let hidden_bias = layer(hidden, n_assets);
        let output_weights = layer(n_assets * hidden, hidden);
        let output_bias = layer(n_assets, hidden);
        SoftmaxAllocator {
            inferencer: LinearPredictor::zeros(n_features),
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.output_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    fn forward(&self, slice: &[f64]) -> Result<Forward> {
        let n = self.n_assets();
        let r_hat = self.inferencer.predict(slice)?;
        if r_hat.len() != n {
            return Err(Error::Dimension(format!("{} assets in slice, model has {n}", r_hat.len())));
        }
        let pre: Vec<f64> = self
            .hidden_weights
            .chunks_exact(n)
            .zip(&self.hidden_bias)
            .map(|(row, b)| b + dot(row, &r_hat))
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|a| a.max(0.0)).collect();
        let logits: Vec<f64> = self
            .output_weights
            .chunks_exact(self.n_hidden())
            .zip(&self.output_bias)
            .map(|(row, b)| b + dot(row, &hidden))
            .collect();
        Ok(Forward {
            r_hat,
            pre,
            hidden,
            weights: softmax(&logits),
        })
    }

    pub fn allocate(&self, slice: &[f64]) -> Result<Portfolio> {
        Portfolio::new(self.forward(slice)?.weights)
    }

    /// All parameters packed as inferencer, hidden weights, hidden bias,
    /// output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.inferencer.params();
        for part in [&self.hidden_weights, &self.hidden_bias, &self.output_weights, &self.output_bias] {
            p.extend_from_slice(part);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let f = self.inferencer.n_features() + 1;
        self.inferencer.set_params(&p[..f]);
        let mut at = f;
        for part in [
            &mut self.hidden_weights,
            &mut self.hidden_bias,
            &mut self.output_weights,
            &mut self.output_bias,
        ] {
            let len = part.len();
            part.copy_from_slice(&p[at..at + len]);
            at += len;
        }
    }

    /// Loss on one sample and its gradient in [`Self::params`] order.
    pub fn loss_and_gradient(
        &self,
        slice: &[f64],
        realized: &[f64],
        kind: DflKind,
        est: Option<&CovarianceEstimate>,
    ) -> Result<(f64, Vec<f64>)> {
        let (n, h) = (self.n_assets(), self.n_hidden());
        let fw = self.forward(slice)?;
        let w = &fw.weights;
        let (loss, dw) = loss_with_gradient(w, realized, kind, est)?;
        let wg = dot(w, &dw);
        let dz: Vec<f64> = w.iter().zip(&dw).map(|(wi, gi)| wi * (gi - wg)).collect();

        let mut d_out_w = vec![0.0; n * h];
        let mut dh = vec![0.0; h];
        for i in 0..n {
            for k in 0..h {
                d_out_w[i * h + k] = dz[i] * fw.hidden[k];
                dh[k] += self.output_weights[i * h + k] * dz[i];
            }
        }
        let da: Vec<f64> = dh.iter().zip(&fw.pre).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }).collect();
        let mut d_hid_w = vec![0.0; h * n];
        let mut dr = vec![0.0; n];
        for k in 0..h {
            for i in 0..n {
                d_hid_w[k * n + i] = da[k] * fw.r_hat[i];
                dr[i] += self.hidden_weights[k * n + i] * da[k];
            }
        }
        let mut grad = vec![0.0; self.inferencer.n_features() + 1];
        crate::training::accumulate_gradient(slice, &dr, &mut grad);
        grad.extend(d_hid_w);
        grad.extend(da);
        grad.extend(d_out_w);
        grad.extend(dz);
        Ok((loss, grad))
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn loss_with_gradient(
    w: &[f64],
    realized: &[f64],
    kind: DflKind,
    est: Option<&CovarianceEstimate>,
) -> Result<(f64, Vec<f64>)> {
    if w.len() != realized.len() {
        return Err(Error::Dimension("weights and returns differ in length".into()));
    }
    let ret = dot(realized, w);
    match kind {
        DflKind::MaxReturn => Ok((-ret, realized.iter().map(|r| -r).collect())),
        DflKind::MaxSharpe => {
            let est = est.ok_or_else(|| Error::Invalid("MaxSharpe loss needs a covariance estimate".into()))?;
            if est.n_assets() != w.len() {
                return Err(Error::Dimension("covariance size differs from portfolio".into()));
            }
            let sw = est.sigma_times(w);
            let var = dot(w, &sw);
            if !(var > 0.0) {
                return Err(Error::DegenerateVariance);
            }
            let s = var.sqrt();
            let grad = realized
                .iter()
                .zip(&sw)
                .map(|(r, q)| -r / s + ret * q / (s * var))
                .collect();
            Ok((-ret / s, grad))
        }
    }
}

/// `-r.w` or `-r.w / sqrt(w' Sigma w)`.
pub fn dfl_loss(weights: &Portfolio, realized: &[f64], kind: DflKind, est: Option<&CovarianceEstimate>) -> Result<f64> {
    Ok(loss_with_gradient(weights.weights(), realized, kind, est)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DflOutcome {
    pub model: SoftmaxAllocator,
    pub trace: Vec<f64>,
}

/// Covariance of the dataset's target returns, used by the Sharpe loss.
pub fn target_covariance(data: &Dataset) -> Result<CovarianceEstimate> {
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|k| data.target(k).to_vec()).collect();
    estimate_covariance(&rows, None)
}

pub fn train_dfl(data: &Dataset, kind: DflKind, config: &TrainConfig) -> Result<DflOutcome> {
    train_dfl_with(data, kind, HIDDEN_UNITS, config)
}

/// Chronological mini-batch Adam; `config.seed` drives the layer init and
/// `config.loss`/`config.problem` are ignored.
pub fn train_dfl_with(data: &Dataset, kind: DflKind, hidden: usize, config: &TrainConfig) -> Result<DflOutcome> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(Error::WindowTooShort {
            required: config.batch_size,
            available: data.len(),
        });
    }
    let est = match kind {
        DflKind::MaxSharpe => Some(target_covariance(data)?),
        DflKind::MaxReturn => None,
    };
    let mut model = SoftmaxAllocator::new(data.n_assets(), data.n_features(), hidden, config.seed);
    let mut params = model.params();
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(config.epochs);
    let intercept = data.n_features();
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for (batch, start) in (0..data.len()).step_by(config.batch_size).enumerate() {
            let end = (start + config.batch_size).min(data.len());
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for k in start..end {
                let (l, g) = model.loss_and_gradient(data.features(k), data.target(k), kind, est.as_ref())?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let count = (end - start) as f64;
            grad.iter_mut().for_each(|g| *g /= count);
            if !config.fit_intercept {
                grad[intercept] = 0.0;
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += loss;
            adam_step(&mut state, &mut params, &grad, config.learning_rate, &config.adam);
            model.set_params(&params);
        }
        trace.push(total / data.len() as f64);
    }
    Ok(DflOutcome { model, trace })
}

/// Mean loss over `data` (lower is better).
pub fn mean_dfl_loss(
    data: &Dataset,
    model: &SoftmaxAllocator,
    kind: DflKind,
    est: Option<&CovarianceEstimate>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Span("empty validation span".into()));
    }
    let mut total = 0.0;
    for k in 0..data.len() {
        total += dfl_loss(&model.allocate(data.features(k))?, data.target(k), kind, est)?;
    }
    Ok(total / data.len() as f64)
}

/// Random search scored by the negated mean validation loss, with the
/// Sharpe covariance taken from the training span.
pub fn dfl_search(
    train_set: &Dataset,
    validation: &Dataset,
    space: &SearchSpace,
    base: &TrainConfig,
    kind: DflKind,
    hidden: usize,
) -> Result<(TrainConfig, SearchOutcome<SoftmaxAllocator>)> {
    check_ordering(train_set, validation)?;
    let est = match kind {
        DflKind::MaxSharpe => Some(target_covariance(train_set)?),
        DflKind::MaxReturn => None,
    };
    let configure = |lr: f64, epochs: usize| TrainConfig {
        learning_rate: lr,
        epochs,
        ..base.clone()
    };
    let outcome = random_search(space, |_, lr, epochs| {
        let out = train_dfl_with(train_set, kind, hidden, &configure(lr, epochs))?;
        let score = -mean_dfl_loss(validation, &out.model, kind, est.as_ref())?;
        Ok((out.model, score, out.trace))
    })?;
    let best = outcome.best_trial();
    Ok((configure(best.learning_rate, best.epochs), outcome))
}
