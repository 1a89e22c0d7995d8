//! SPO+ surrogate loss, its Danskin subgradient, and the robust variant that
//! takes the worst SPO+ loss over multiplicative perturbations of the
//! prediction.
//!
//! With `Phi(w)` the prediction-independent penalty of the decision problem
//! and `Psi(c) = max_w c.w + Phi(w)`:
//!
//! ```text
//! w*    = argmax r.w + Phi(w)
//! w~    = argmax (2 r_hat - r).w + Phi(w)
//! loss  = Psi(2 r_hat - r) - 2 r_hat.w* + r.w* - Phi(w*)
//! grad  = 2 (w~ - w*)
//! ```
//!
//! The loss is convex in `r_hat`, vanishes at `r_hat = r`, and upper-bounds
//! the decision regret of `w^ = argmax r_hat.w + Phi(w)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{dot, DecisionProblem, Portfolio};

#[derive(Debug, Clone, PartialEq)]
pub struct SpoInstance {
    pub r_hat: Vec<f64>,
    pub r_true: Vec<f64>,
    pub problem: DecisionProblem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpoEvaluation {
    pub loss: f64,
    /// d loss / d r_hat
    pub subgradient: Vec<f64>,
    pub w_tilde: Portfolio,
    pub w_star: Portfolio,
    /// True decision regret; `NAN` when evaluated without it.
    pub regret: f64,
}

impl SpoInstance {
    pub fn new(r_hat: Vec<f64>, r_true: Vec<f64>, problem: DecisionProblem) -> Result<Self> {
        let inst = SpoInstance { r_hat, r_true, problem };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.problem.n_assets();
        if self.r_hat.len() != n || self.r_true.len() != n {
            return Err(Error::Dimension(format!(
                "r_hat {} / r {} / problem {n}",
                self.r_hat.len(),
                self.r_true.len()
            )));
        }
        if self.r_hat.iter().chain(&self.r_true).any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite returns in SPO instance".into()));
        }
        self.problem.validate()
    }
}

/// The oracle decision for realized returns and its objective value.
#[derive(Debug, Clone)]
pub(crate) struct Oracle {
    pub w_star: Portfolio,
    pub value: f64,
}

impl Oracle {
    pub(crate) fn new(r_true: &[f64], problem: &DecisionProblem) -> Result<Self> {
        let w_star = problem.solve(r_true)?;
        let value = problem.objective(r_true, w_star.weights());
        Ok(Oracle { w_star, value })
    }
}

pub(crate) fn evaluate(
    r_hat: &[f64],
    r_true: &[f64],
    problem: &DecisionProblem,
    oracle: &Oracle,
    with_regret: bool,
) -> Result<SpoEvaluation> {
    let shifted: Vec<f64> = r_hat.iter().zip(r_true).map(|(h, r)| 2.0 * h - r).collect();
    let w_tilde = problem.solve(&shifted)?;
    let psi = problem.objective(&shifted, w_tilde.weights());
    let star = oracle.w_star.weights();
    let loss = psi - 2.0 * dot(r_hat, star) + dot(r_true, star) - problem.penalty(star);
    let subgradient = w_tilde
        .weights()
        .iter()
        .zip(star)
        .map(|(a, b)| 2.0 * (a - b))
        .collect();
    let regret = if with_regret {
        let w_hat = problem.solve(r_hat)?;
        oracle.value - problem.objective(r_true, w_hat.weights())
    } else {
        f64::NAN
    };
    Ok(SpoEvaluation {
        loss,
        subgradient,
        w_tilde,
        w_star: oracle.w_star.clone(),
        regret,
    })
}

pub fn spo_plus(instance: &SpoInstance) -> Result<SpoEvaluation> {
    instance.validate()?;
    let oracle = Oracle::new(&instance.r_true, &instance.problem)?;
    evaluate(&instance.r_hat, &instance.r_true, &instance.problem, &oracle, true)
}

/// Loss and subgradient only; skips the extra solve needed for the regret.
pub fn spo_plus_loss(instance: &SpoInstance) -> Result<SpoEvaluation> {
    instance.validate()?;
    let oracle = Oracle::new(&instance.r_true, &instance.problem)?;
    evaluate(&instance.r_hat, &instance.r_true, &instance.problem, &oracle, false)
}

/// Monte Carlo approximation of the box `||zeta||_inf <= rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub rho: f64,
    pub n_samples: usize,
    pub include_corners: bool,
    pub seed: u64,
}

impl RobustConfig {
    pub fn new(rho: f64) -> Self {
        RobustConfig {
            rho,
            n_samples: 8,
            include_corners: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) || self.n_samples == 0 {
            return Err(Error::Invalid("robust config needs rho > 0 and n_samples >= 1".into()));
        }
        Ok(())
    }
}

/// Perturbation set for `n` assets.
///
/// Uniform draws come in antithetic pairs `(u, -u)` (an odd count leaves the
/// last unpaired). With corners enabled, `+rho 1` and `-rho 1` follow, then
/// single-coordinate sign flips of those two, capped at `2n` corners in
/// total. Every vector is `rho` times a seed-determined unit-box vector, so
/// sets for different `rho` are nested scalings of one another.
pub fn perturbations(n: usize, config: &RobustConfig) -> Vec<Vec<f64>> {
    let rho = config.rho;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n_samples + 2 * n);
    while out.len() < config.n_samples {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        out.push(u.iter().map(|x| rho * x).collect());
        if out.len() < config.n_samples {
            out.push(u.iter().map(|x| -rho * x).collect());
        }
    }
    if config.include_corners {
        let mut corners = vec![vec![rho; n], vec![-rho; n]];
        for j in 0..n {
            if corners.len() + 2 > 2 * n {
                break;
            }
            let mut up = vec![-rho; n];
            up[j] = rho;
            let mut down = vec![rho; n];
            down[j] = -rho;
            corners.push(up);
            corners.push(down);
        }
        corners.truncate(2 * n);
        out.extend(corners);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustEvaluation {
    /// SPO+ evaluation at the worst perturbed prediction.
    pub evaluation: SpoEvaluation,
    pub zeta: Vec<f64>,
    /// Index of the worst sample in [`perturbations`] order.
    pub sample: usize,
}

impl RobustEvaluation {
    /// Chain rule through `r~ = r_hat * (1 + zeta)`.
    pub fn gradient_wrt_prediction(&self) -> Vec<f64> {
        self.evaluation
            .subgradient
            .iter()
            .zip(&self.zeta)
            .map(|(g, z)| g * (1.0 + z))
            .collect()
    }
}

fn robust(instance: &SpoInstance, config: &RobustConfig, with_regret: bool) -> Result<RobustEvaluation> {
    instance.validate()?;
    config.validate()?;
    let oracle = Oracle::new(&instance.r_true, &instance.problem)?;
    let set = perturbations(instance.r_hat.len(), config);
    robust_over(&instance.r_hat, &instance.r_true, &instance.problem, &oracle, &set, with_regret)
}

/// Worst case over an explicit perturbation set, with a precomputed oracle.
pub(crate) fn robust_over(
    r_hat: &[f64],
    r_true: &[f64],
    problem: &DecisionProblem,
    oracle: &Oracle,
    set: &[Vec<f64>],
    with_regret: bool,
) -> Result<RobustEvaluation> {
    let perturb = |zeta: &[f64]| -> Vec<f64> { r_hat.iter().zip(zeta).map(|(h, z)| h * (1.0 + z)).collect() };
    let mut worst: Option<(f64, usize, SpoEvaluation)> = None;
    for (k, zeta) in set.iter().enumerate() {
        let eval = evaluate(&perturb(zeta), r_true, problem, oracle, false)?;
        if worst.as_ref().is_none_or(|(l, _, _)| eval.loss > *l) {
            worst = Some((eval.loss, k, eval));
        }
    }
    let (_, sample, mut evaluation) = worst.ok_or_else(|| Error::Invalid("empty perturbation set".into()))?;
    if with_regret {
        evaluation = evaluate(&perturb(&set[sample]), r_true, problem, oracle, true)?;
    }
    Ok(RobustEvaluation {
        evaluation,
        zeta: set[sample].clone(),
        sample,
    })
}

/// Worst SPO+ loss over the sampled perturbation set; ties keep the first.
pub fn robust_spo_loss(instance: &SpoInstance, config: &RobustConfig) -> Result<RobustEvaluation> {
    robust(instance, config, true)
}
