//! Fee plus ridge oracle: maximize `r.w - gamma ||w - p||_1 - lambda ||w||^2`
//! over the simplex.
//!
//! [`solve_fee_l2`] runs pairwise Frank-Wolfe on the lifted polytope
//! `{w in simplex, -u <= w - p <= u, 0 <= u <= 1}` with the LP engine as the
//! linear minimization oracle, and reports the Frank-Wolfe duality gap as an
//! optimality certificate. By default the iterate starts from the exact
//! separable KKT point, which normally certifies in a single oracle call.

use super::fee::fee_lp;
use super::lp::Sense;
use super::{dot, DecisionKind, DecisionProblem, Portfolio};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwStart {
    /// Start from the KKT point of the separable problem.
    Warm,
    /// Start from the vertex `(w_prev, 0)`.
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: FwStart,
}

impl Default for FwOptions {
    fn default() -> Self {
        FwOptions {
            tolerance: 1e-7,
            max_iterations: 10_000,
            start: FwStart::Warm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwReport {
    pub portfolio: Portfolio,
    /// Frank-Wolfe gap at the returned iterate; upper-bounds suboptimality.
    pub gap: f64,
    pub iterations: usize,
}

pub fn solve_fee_l2(r_hat: &[f64], prob: &DecisionProblem) -> Result<Portfolio> {
    solve_fee_l2_with(r_hat, prob, &FwOptions::default()).map(|r| r.portfolio)
}

struct Lifted<'a> {
    r: &'a [f64],
    p: &'a [f64],
    gamma: f64,
    lambda: f64,
}

impl Lifted<'_> {
    fn n(&self) -> usize {
        self.p.len()
    }

    /// Minimization form `-r.w + gamma sum u + lambda ||w||^2`.
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut g = Vec::with_capacity(2 * n);
        g.extend((0..n).map(|i| -self.r[i] + 2.0 * self.lambda * z[i]));
        g.extend(std::iter::repeat_n(self.gamma, n));
        g
    }
}

pub fn solve_fee_l2_with(r_hat: &[f64], prob: &DecisionProblem, opts: &FwOptions) -> Result<FwReport> {
    prob.validate()?;
    if prob.kind != DecisionKind::MaxReturnFeeL2 || !(prob.lambda > 0.0) {
        return Err(Error::Invalid("solve_fee_l2 needs kind MaxReturnFeeL2 with lambda > 0".into()));
    }
    let n = prob.n_assets();
    if r_hat.len() != n {
        return Err(Error::Dimension(format!("{} predictions for {n} assets", r_hat.len())));
    }
    let p = prob.w_prev.weights();
    let f = Lifted {
        r: r_hat,
        p,
        gamma: prob.gamma,
        lambda: prob.lambda,
    };
    let mut lp = fee_lp(&vec![0.0; n], &vec![0.0; n], p, true)?;
    let mut lmo = |g: &[f64]| -> Result<Vec<f64>> {
        lp.set_objective(Sense::Minimize, g.to_vec())?;
        Ok(lp.solve()?.x)
    };
    let finish = |z: &[f64], gap: f64, iterations: usize| -> Result<FwReport> {
        Ok(FwReport {
            portfolio: Portfolio::from_raw(z[..n].to_vec())?,
            gap,
            iterations,
        })
    };

    if opts.start == FwStart::Warm {
        let w = solve_fee_l2_kkt(r_hat, prob.gamma, prob.lambda, p);
        let mut z = w.clone();
        z.extend(w.iter().zip(p).map(|(a, b)| (a - b).abs()));
        let g = f.gradient(&z);
        let s = lmo(&g)?;
        let gap = dot(&g, &z) - dot(&g, &s);
        if gap <= opts.tolerance {
            return finish(&z, gap.max(0.0), 1);
        }
    }

    // Pairwise Frank-Wolfe over an explicit active set of vertices.
    let mut start = p.to_vec();
    start.extend(std::iter::repeat_n(0.0, n));
    let mut active: Vec<(Vec<f64>, f64)> = vec![(start.clone(), 1.0)];
    let mut z = start;
    let mut gap = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let g = f.gradient(&z);
        let s = lmo(&g)?;
        gap = dot(&g, &z) - dot(&g, &s);
        if gap <= opts.tolerance {
            return finish(&z, gap.max(0.0), it);
        }
        let (away, _) = active
            .iter()
            .enumerate()
            .map(|(k, (v, _))| (k, dot(&g, v)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let away_weight = active[away].1;
        let d: Vec<f64> = s.iter().zip(&active[away].0).map(|(a, b)| a - b).collect();
        let slope = dot(&g, &d);
        let curvature = f.lambda * d[..n].iter().map(|x| x * x).sum::<f64>();
        let step = if curvature > 0.0 {
            (-slope / (2.0 * curvature)).min(away_weight)
        } else {
            away_weight
        };
        if step <= 0.0 {
            // Degenerate direction; fall back to a plain FW step toward s.
            let dfw: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a - b).collect();
            let curv = f.lambda * dfw[..n].iter().map(|x| x * x).sum::<f64>();
            let t = if curv > 0.0 { (gap / (2.0 * curv)).min(1.0) } else { 1.0 };
            z.iter_mut().zip(&dfw).for_each(|(zi, di)| *zi += t * di);
            active.iter_mut().for_each(|(_, a)| *a *= 1.0 - t);
            add_vertex(&mut active, s, t);
            active.retain(|(_, a)| *a > 1e-15);
            continue;
        }
        z.iter_mut().zip(&d).for_each(|(zi, di)| *zi += step * di);
        active[away].1 -= step;
        if step >= away_weight {
            active.remove(away);
        }
        add_vertex(&mut active, s, step);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        gap,
    })
}

fn add_vertex(active: &mut Vec<(Vec<f64>, f64)>, s: Vec<f64>, weight: f64) {
    match active
        .iter_mut()
        .find(|(v, _)| v.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-12))
    {
        Some(entry) => entry.1 += weight,
        None => active.push((s, weight)),
    }
}

/// Exact maximizer of the separable problem via its sum multiplier `nu`.
///
/// For fixed `nu` each coordinate solves a 1-D concave piecewise quadratic;
/// `sum_i w_i(nu)` is non-increasing and piecewise linear in `nu`, so the
/// root is found by walking the sorted breakpoints and interpolating.
pub fn solve_fee_l2_kkt(r: &[f64], gamma: f64, lambda: f64, p: &[f64]) -> Vec<f64> {
    assert!(lambda > 0.0, "ridge coefficient must be positive");
    let n = r.len();
    let coord = |i: usize, nu: f64| -> f64 {
        let up = (r[i] - nu - gamma) / (2.0 * lambda);
        if up > p[i] {
            return up;
        }
        let down = (r[i] - nu + gamma) / (2.0 * lambda);
        if down < p[i] {
            down.max(0.0)
        } else {
            p[i]
        }
    };
    let total = |nu: f64| (0..n).map(|i| coord(i, nu)).sum::<f64>();
    let mut breaks: Vec<f64> = (0..n)
        .flat_map(|i| {
            [
                r[i] - gamma - 2.0 * lambda * p[i],
                r[i] + gamma - 2.0 * lambda * p[i],
                r[i] + gamma,
            ]
        })
        .collect();
    breaks.sort_unstable_by(f64::total_cmp);
    breaks.dedup();
    let sums: Vec<f64> = breaks.iter().map(|&b| total(b)).collect();
    let k = sums.iter().position(|&s| s <= 1.0).unwrap_or(breaks.len() - 1);
    let nu = if k == 0 {
        // Left of every breakpoint all coordinates sit on the "buy" branch.
        let free: f64 = r.iter().map(|ri| ri - gamma).sum();
        (free - 2.0 * lambda) / n as f64
    } else {
        let (b0, b1) = (breaks[k - 1], breaks[k]);
        let (s0, s1) = (sums[k - 1], sums[k]);
        b0 + (s0 - 1.0) / (s0 - s1) * (b1 - b0)
    };
    (0..n).map(|i| coord(i, nu)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cold() -> FwOptions {
        FwOptions {
            start: FwStart::Cold,
            ..FwOptions::default()
        }
    }

    #[test]
    fn ridge_dominates_to_uniform() {
        let prob = DecisionProblem::fee_l2(0.0, 1e4, Portfolio::uniform(3));
        let w = solve_fee_l2(&[0.3, -0.1, 0.05], &prob).unwrap();
        for x in w.weights() {
            assert!((x - 1.0 / 3.0).abs() < 1e-4);
        }
    }

    #[test]
    fn two_asset_kkt_closed_form() {
        let prob = DecisionProblem::fee_l2(0.0, 0.5, Portfolio::uniform(2));
        for opts in [FwOptions::default(), cold()] {
            let rep = solve_fee_l2_with(&[0.1, 0.0], &prob, &opts).unwrap();
            assert!((rep.portfolio.weights()[0] - 0.55).abs() < 1e-6, "{rep:?}");
            assert!(rep.gap <= 1e-7);
        }
        let w = solve_fee_l2_kkt(&[0.1, 0.0], 0.0, 0.5, &[0.5, 0.5]);
        assert!((w[0] - 0.55).abs() < 1e-15 && (w[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn kkt_is_stationary_and_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..2000 {
            let n = rng.random_range(2..10);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
            let p = super::super::project_simplex(&(0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let gamma = rng.random_range(0.0..0.05);
            let lambda = rng.random_range(0.01..1.0);
            let w = solve_fee_l2_kkt(&r, gamma, lambda, p.weights());
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
            let prob = DecisionProblem::fee_l2(gamma, lambda, p.clone());
            let base = prob.objective(&r, &w);
            // pairwise mass shifts never improve a concave optimum
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let eps = 1e-6_f64.min(w[i]);
                    let mut v = w.clone();
                    v[i] -= eps;
                    v[j] += eps;
                    assert!(prob.objective(&r, &v) <= base + 1e-13);
                }
            }
        }
    }

    #[test]
    fn cold_and_warm_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..300 {
            let n = rng.random_range(2..4);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            let p = super::super::project_simplex(&(0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let prob = DecisionProblem::fee_l2(rng.random_range(0.0..0.05), rng.random_range(0.05..1.0), p);
            let warm = solve_fee_l2_with(&r, &prob, &FwOptions::default()).unwrap();
            let cold = solve_fee_l2_with(&r, &prob, &cold()).unwrap();
            let (a, b) = (prob.objective(&r, warm.portfolio.weights()), prob.objective(&r, cold.portfolio.weights()));
            assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
            assert!(a >= b - 1e-12);
        }
    }

    #[test]
    fn iteration_cap_reports_gap() {
        let prob = DecisionProblem::fee_l2(0.01, 0.1, Portfolio::uniform(4));
        let opts = FwOptions {
            max_iterations: 1,
            tolerance: 0.0,
            start: FwStart::Cold,
        };
        match solve_fee_l2_with(&[0.3, 0.1, -0.2, 0.0], &prob, &opts) {
            Err(Error::NonConvergence { iterations, gap }) => {
                assert_eq!(iterations, 1);
                assert!(gap > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }
}
