use super::lp::{LinearProgram, Relation};
use super::{DecisionKind, DecisionProblem, Portfolio};
use crate::error::{Error, Result};

/// Vertex `e_i` for the largest coefficient; ties go to the lowest index.
pub fn solve_max_return(coeff: &[f64]) -> Portfolio {
    assert!(!coeff.is_empty(), "empty coefficient vector");
    let mut best = 0;
    for (i, &c) in coeff.iter().enumerate().skip(1) {
        if c > coeff[best] {
            best = i;
        }
    }
    Portfolio::vertex(coeff.len(), best)
}

/// LP over the lifted polytope in `(w, u)`:
/// `sum w = 1`, `w - u <= w_prev`, `w + u >= w_prev`, optionally `u <= 1`.
/// The objective is `obj_w . w + obj_u . u`, maximized.
pub fn fee_lp(obj_w: &[f64], obj_u: &[f64], w_prev: &[f64], cap_u: bool) -> Result<LinearProgram> {
    let n = w_prev.len();
    if obj_w.len() != n || obj_u.len() != n {
        return Err(Error::Dimension("fee LP objective length".into()));
    }
    let mut objective = obj_w.to_vec();
    objective.extend_from_slice(obj_u);
    let mut lp = LinearProgram::maximize(objective);
    let mut sum = vec![0.0; 2 * n];
    sum[..n].iter_mut().for_each(|c| *c = 1.0);
    lp.constrain(sum, Relation::Eq, 1.0)?;
    for i in 0..n {
        let mut upper = vec![0.0; 2 * n];
        upper[i] = 1.0;
        upper[n + i] = -1.0;
        lp.constrain(upper, Relation::Le, w_prev[i])?;
        let mut lower = vec![0.0; 2 * n];
        lower[i] = 1.0;
        lower[n + i] = 1.0;
        lp.constrain(lower, Relation::Ge, w_prev[i])?;
        if cap_u {
            let mut cap = vec![0.0; 2 * n];
            cap[n + i] = 1.0;
            lp.constrain(cap, Relation::Le, 1.0)?;
        }
    }
    Ok(lp)
}

/// Maximize `r_hat . w - gamma ||w - w_prev||_1` over the simplex via the
/// epigraph LP.
pub fn solve_fee(r_hat: &[f64], prob: &DecisionProblem) -> Result<Portfolio> {
    prob.validate()?;
    if prob.kind == DecisionKind::MaxReturnFeeL2 && prob.lambda > 0.0 {
        return Err(Error::Invalid("solve_fee called with a ridge term".into()));
    }
    let n = prob.n_assets();
    if r_hat.len() != n {
        return Err(Error::Dimension(format!("{} predictions for {n} assets", r_hat.len())));
    }
    let lp = fee_lp(r_hat, &vec![-prob.gamma; n], prob.w_prev.weights(), false)?;
    let solution = lp.solve()?;
    Portfolio::from_raw(solution.x[..n].to_vec())
}
