//! Decision oracles over the long-only, fully-invested simplex.
//!
//! Every solver returns a [`Portfolio`]. The fee-aware problems share one
//! lifted polytope in `(w, u)` where `u` bounds `|w - w_prev|`; the linear
//! version is handed to the dense simplex engine in [`lp`], the ridge version
//! is solved by Frank-Wolfe with that engine as its linear oracle.

mod covariance;
mod fee;
pub mod lp;
mod projection;
mod ridge;
mod sharpe;

pub use covariance::{estimate_covariance, CovarianceEstimate};
pub use fee::{fee_lp, solve_fee, solve_max_return};
pub use projection::project_simplex;
pub use ridge::{solve_fee_l2, solve_fee_l2_kkt, solve_fee_l2_with, FwOptions, FwReport, FwStart};
pub use sharpe::{solve_max_sharpe, solve_min_variance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative weights down to this magnitude are solver noise and clamp to 0.
pub const WEIGHT_TOLERANCE: f64 = 1e-10;

/// Fractions of capital per asset; non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio(Vec<f64>);

impl Portfolio {
    /// Clean raw solver output: clamp tiny negatives and renormalize.
    pub fn from_raw(mut weights: Vec<f64>) -> Result<Portfolio> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid(format!("invalid raw weights {weights:?}")));
        }
        if let Some(w) = weights.iter().find(|&&w| w < -1e-7) {
            return Err(Error::Invalid(format!("weight {w} is negative")));
        }
        weights.iter_mut().for_each(|w| *w = w.max(0.0));
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("weights sum to {total}")));
        }
        if total != 1.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Portfolio(weights))
    }

    /// Validate without modification.
    pub fn new(weights: Vec<f64>) -> Result<Portfolio> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| !w.is_finite() || *w < -WEIGHT_TOLERANCE)
            || (total - 1.0).abs() > 1e-8
        {
            return Err(Error::Invalid(format!("not a portfolio: {weights:?}")));
        }
        Ok(Portfolio(weights.into_iter().map(|w| w.max(0.0)).collect()))
    }

    pub fn uniform(n: usize) -> Portfolio {
        Portfolio(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, i: usize) -> Portfolio {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Portfolio(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        dot(&self.0, v)
    }

    /// `||self - other||_1`
    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl AsRef<[f64]> for Portfolio {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionKind {
    MaxReturn,
    MaxReturnFee,
    MaxReturnFeeL2,
}

/// Oracle specification: maximize `c.w - gamma ||w - w_prev||_1 - lambda ||w||^2`
/// over the simplex, with the penalty terms switched on by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionProblem {
    pub kind: DecisionKind,
    pub gamma: f64,
    pub lambda: f64,
    pub w_prev: Portfolio,
}

impl DecisionProblem {
    pub fn max_return(n: usize) -> Self {
        DecisionProblem {
            kind: DecisionKind::MaxReturn,
            gamma: 0.0,
            lambda: 0.0,
            w_prev: Portfolio::uniform(n),
        }
    }

    pub fn fee(gamma: f64, w_prev: Portfolio) -> Self {
        DecisionProblem {
            kind: DecisionKind::MaxReturnFee,
            gamma,
            lambda: 0.0,
            w_prev,
        }
    }

    pub fn fee_l2(gamma: f64, lambda: f64, w_prev: Portfolio) -> Self {
        DecisionProblem {
            kind: DecisionKind::MaxReturnFeeL2,
            gamma,
            lambda,
            w_prev,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.w_prev.len()
    }

    /// Same penalties, new reference holdings.
    pub fn with_w_prev(&self, w_prev: Portfolio) -> Self {
        DecisionProblem {
            w_prev,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("gamma and lambda must be finite and >= 0");
        }
        match self.kind {
            DecisionKind::MaxReturn if self.gamma != 0.0 || self.lambda != 0.0 => {
                bad("MaxReturn requires gamma = lambda = 0")
            }
            DecisionKind::MaxReturnFee if self.lambda != 0.0 => bad("MaxReturnFee requires lambda = 0"),
            _ => Ok(()),
        }
    }

    /// The prediction-independent part of the objective, `Phi(w)`.
    pub fn penalty(&self, w: &[f64]) -> f64 {
        let fee = if self.gamma > 0.0 { self.gamma * self.w_prev.l1_distance(w) } else { 0.0 };
        let ridge = if self.lambda > 0.0 { self.lambda * dot(w, w) } else { 0.0 };
        -fee - ridge
    }

    /// `c.w + Phi(w)`
    pub fn objective(&self, coeff: &[f64], w: &[f64]) -> f64 {
        dot(coeff, w) + self.penalty(w)
    }

    /// Argmax of [`Self::objective`] over the simplex.
    pub fn solve(&self, coeff: &[f64]) -> Result<Portfolio> {
        if coeff.len() != self.n_assets() {
            return Err(Error::Dimension(format!(
                "coefficient length {} vs {} assets",
                coeff.len(),
                self.n_assets()
            )));
        }
        match self.kind {
            DecisionKind::MaxReturn => Ok(solve_max_return(coeff)),
            DecisionKind::MaxReturnFee => solve_fee(coeff, self),
            DecisionKind::MaxReturnFeeL2 if self.lambda == 0.0 => solve_fee(coeff, self),
            DecisionKind::MaxReturnFeeL2 => solve_fee_l2(coeff, self),
        }
    }
}
