use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::{dot, project_simplex, CovarianceEstimate, Portfolio};
use crate::error::Result;

const STARTS: usize = 8;
const MAX_ITERS: usize = 20_000;
const START_SEED: u64 = 0x5eed_0f_5a4e;

/// Maximum Sharpe ratio `mean.w / sqrt(w' Sigma w)` over the simplex.
///
/// Projected gradient ascent with backtracking from eight starts (barycenter,
/// the best vertices, seeded Dirichlet points). When no portfolio has a
/// positive expected return the minimum-variance portfolio is returned.
pub fn solve_max_sharpe(est: &CovarianceEstimate) -> Result<Portfolio> {
    est.validate()?;
    if est.mean.iter().all(|&m| m <= 0.0) {
        return solve_min_variance(est);
    }
    let sharpe = |w: &[f64]| dot(&est.mean, w) / est.variance(w).sqrt();
    let grad = |w: &[f64]| {
        let s2 = est.variance(w);
        let s = s2.sqrt();
        let ret = dot(&est.mean, w);
        let sw = est.sigma_times(w);
        est.mean
            .iter()
            .zip(&sw)
            .map(|(m, x)| m / s - ret * x / (s2 * s))
            .collect::<Vec<_>>()
    };
    Ok(multi_start(est, &sharpe, &grad))
}

pub fn solve_min_variance(est: &CovarianceEstimate) -> Result<Portfolio> {
    est.validate()?;
    let neg_var = |w: &[f64]| -est.variance(w);
    let grad = |w: &[f64]| est.sigma_times(w).into_iter().map(|x| -2.0 * x).collect::<Vec<_>>();
    Ok(multi_start(est, &neg_var, &grad))
}

fn starts(mean: &[f64]) -> Vec<Vec<f64>> {
    let n = mean.len();
    let mut out = vec![vec![1.0 / n as f64; n]];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
    for &i in order.iter().take(3) {
        out.push(Portfolio::vertex(n, i).into_inner());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    while out.len() < STARTS {
        let e: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = e.iter().sum();
        out.push(e.into_iter().map(|x| x / total).collect());
    }
    out
}

fn multi_start(
    est: &CovarianceEstimate,
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Portfolio {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts(&est.mean) {
        let w = ascend(start, f, grad);
        let value = f(&w);
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, w));
        }
    }
    let (_, w) = best.expect("at least one start");
    Portfolio::from_raw(w).expect("projection output is a portfolio")
}

/// Projected gradient ascent with Armijo backtracking and step growth.
fn ascend(mut w: Vec<f64>, f: &dyn Fn(&[f64]) -> f64, grad: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut step = 1.0;
    let mut value = f(&w);
    for _ in 0..MAX_ITERS {
        let g = grad(&w);
        let mut accepted = None;
        while step > 1e-18 {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(x, gi)| x + step * gi).collect();
            let cand = project_simplex(&trial).into_inner();
            let lin: f64 = g.iter().zip(cand.iter().zip(&w)).map(|(gi, (c, x))| gi * (c - x)).sum();
            let cv = f(&cand);
            if cv >= value + 1e-4 * lin && lin >= 0.0 {
                accepted = Some((cand, cv));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cv)) = accepted else { break };
        let moved = cand.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = cand;
        value = cv;
        if moved < 1e-14 {
            break;
        }
        step *= 2.0;
    }
    w
}
