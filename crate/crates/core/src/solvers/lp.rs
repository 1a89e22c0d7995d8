//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Variables are implicitly non-negative. Instances here are small (a few
//! dozen columns), so the tableau is a plain row-major `Vec<f64>`.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
struct Constraint {
    coeffs: Vec<f64>,
    relation: Relation,
    rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Objective value in the program's own sense.
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        LinearProgram {
            sense,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Maximize, objective)
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Minimize, objective)
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_objective(&mut self, sense: Sense, objective: Vec<f64>) -> Result<()> {
        if objective.len() != self.n_vars() {
            return Err(Error::Dimension("objective length changed".into()));
        }
        self.sense = sense;
        self.objective = objective;
        Ok(())
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Result<&mut Self> {
        if coeffs.len() != self.n_vars() {
            return Err(Error::Dimension(format!(
                "constraint has {} coefficients, program has {} variables",
                coeffs.len(),
                self.n_vars()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !rhs.is_finite() {
            return Err(Error::Invalid("non-finite constraint".into()));
        }
        self.constraints.push(Constraint { coeffs, relation, rhs });
        Ok(self)
    }

    pub fn solve(&self) -> Result<LpSolution> {
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite objective".into()));
        }
        let mut tableau = Tableau::build(self);
        tableau.phase_one()?;
        let max_costs: Vec<f64> = match self.sense {
            Sense::Maximize => self.objective.clone(),
            Sense::Minimize => self.objective.iter().map(|c| -c).collect(),
        };
        tableau.phase_two(&max_costs)?;
        let x = tableau.primal(self.n_vars());
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: tableau.pivots,
        })
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Columns `>= first_artificial` are phase-one artificials.
    first_artificial: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    reduced: Vec<f64>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n = lp.n_vars();
        // Flip rows so every right-hand side is non-negative.
        let rows: Vec<Constraint> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    Constraint {
                        coeffs: c.coeffs.iter().map(|x| -x).collect(),
                        relation: match c.relation {
                            Relation::Le => Relation::Ge,
                            Relation::Ge => Relation::Le,
                            Relation::Eq => Relation::Eq,
                        },
                        rhs: -c.rhs,
                    }
                } else {
                    c.clone()
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|c| c.relation != Relation::Eq).count();
        let n_art = rows.iter().filter(|c| c.relation != Relation::Le).count();
        let m = rows.len();
        let cols = n + n_slack + n_art;
        let first_artificial = n + n_slack;
        let mut a = vec![0.0; m * cols];
        let mut b = vec![0.0; m];
        let mut basis = vec![0; m];
        let (mut slack, mut art) = (n, first_artificial);
        for (i, c) in rows.iter().enumerate() {
            a[i * cols..i * cols + n].copy_from_slice(&c.coeffs);
            b[i] = c.rhs;
            match c.relation {
                Relation::Le => {
                    a[i * cols + slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    a[i * cols + slack] = -1.0;
                    slack += 1;
                    a[i * cols + art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    a[i * cols + art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            rows: m,
            cols,
            first_artificial,
            a,
            b,
            basis,
            reduced: vec![0.0; cols],
            pivots: 0,
        }
    }

    fn price(&mut self, costs: &[f64]) {
        self.reduced.copy_from_slice(costs);
        for i in 0..self.rows {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.cols..(i + 1) * self.cols];
                for (r, x) in self.reduced.iter_mut().zip(row) {
                    *r -= cb * x;
                }
            }
        }
    }

    fn objective_value(&self, costs: &[f64]) -> f64 {
        self.basis.iter().zip(&self.b).map(|(&j, v)| costs[j] * v).sum()
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let cols = self.cols;
        let p = self.a[r * cols + e];
        for x in &mut self.a[r * cols..(r + 1) * cols] {
            *x /= p;
        }
        self.b[r] /= p;
        let (pivot_row, brow) = (self.a[r * cols..(r + 1) * cols].to_vec(), self.b[r]);
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.a[i * cols + e];
            if f != 0.0 {
                for (x, pr) in self.a[i * cols..(i + 1) * cols].iter_mut().zip(&pivot_row) {
                    *x -= f * pr;
                }
                self.a[i * cols + e] = 0.0;
                self.b[i] -= f * brow;
                if self.b[i] < 0.0 && self.b[i] > -1e-12 {
                    self.b[i] = 0.0;
                }
            }
        }
        let f = self.reduced[e];
        if f != 0.0 {
            for (x, pr) in self.reduced.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            self.reduced[e] = 0.0;
        }
        self.basis[r] = e;
        self.pivots += 1;
    }

    /// Primal simplex on columns `< allowed`, maximizing. Bland: lowest
    /// improving column enters; ratio ties leave by lowest basic index.
    fn iterate(&mut self, allowed: usize) -> Result<()> {
        loop {
            let Some(e) = (0..allowed).find(|&j| self.reduced[j] > PIVOT_EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let coef = self.a[i * self.cols + e];
                if coef > PIVOT_EPS {
                    let ratio = self.b[i] / coef;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if (tie && self.basis[i] < self.basis[r]) || (!tie && ratio < best) {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(r, e);
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Invalid("simplex pivot limit exceeded".into()));
            }
        }
    }

    fn phase_one(&mut self) -> Result<()> {
        if self.first_artificial == self.cols {
            return Ok(());
        }
        let costs: Vec<f64> = (0..self.cols)
            .map(|j| if j >= self.first_artificial { -1.0 } else { 0.0 })
            .collect();
        self.price(&costs);
        self.iterate(self.cols)?;
        let scale = self.b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if self.objective_value(&costs) < -1e-9 * scale {
            return Err(Error::Infeasible);
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < self.rows {
            if self.basis[i] >= self.first_artificial {
                let row = &self.a[i * self.cols..i * self.cols + self.first_artificial];
                match row.iter().position(|x| x.abs() > 1e-9) {
                    Some(e) => self.pivot(i, e),
                    None => {
                        self.remove_row(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        Ok(())
    }

    fn remove_row(&mut self, i: usize) {
        self.a.drain(i * self.cols..(i + 1) * self.cols);
        self.b.remove(i);
        self.basis.remove(i);
        self.rows -= 1;
    }

    fn phase_two(&mut self, max_costs: &[f64]) -> Result<()> {
        let mut costs = vec![0.0; self.cols];
        costs[..max_costs.len()].copy_from_slice(max_costs);
        self.price(&costs);
        self.iterate(self.first_artificial)
    }

    fn primal(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < n {
                x[j] = self.b[i].max(0.0);
            }
        }
        x
    }
}
