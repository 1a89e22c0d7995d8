use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample mean and covariance (with diagonal loading) of a return window.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub mean: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub ridge: f64,
}

impl CovarianceEstimate {
    /// Build from explicit moments; `sigma` must already include any loading.
    pub fn new(mean: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let est = CovarianceEstimate { mean, sigma, ridge: 0.0 };
        est.validate()?;
        Ok(est)
    }

    pub fn n_assets(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.sigma.nrows() != n || self.sigma.ncols() != n {
            return Err(Error::Dimension("covariance shape".into()));
        }
        if (&self.sigma - self.sigma.transpose()).abs().max() > 1e-12 * (1.0 + self.sigma.abs().max()) {
            return Err(Error::NotPositiveDefinite);
        }
        if self.sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }

    /// `w' Sigma w`
    pub fn variance(&self, w: &[f64]) -> f64 {
        let v = DVector::from_column_slice(w);
        (v.transpose() * &self.sigma * &v)[(0, 0)]
    }

    /// `Sigma w`
    pub fn sigma_times(&self, w: &[f64]) -> Vec<f64> {
        (&self.sigma * DVector::from_column_slice(w)).as_slice().to_vec()
    }

    /// Default loading `1e-6 * trace / n`, floored so a zero matrix still loads.
    pub fn default_ridge(sigma: &DMatrix<f64>) -> f64 {
        (1e-6 * sigma.trace() / sigma.nrows() as f64).max(1e-12)
    }
}

/// Sample mean and unbiased covariance of `returns` (rows = days) plus
/// `ridge * I`. `None` selects [`CovarianceEstimate::default_ridge`].
pub fn estimate_covariance(returns: &[Vec<f64>], ridge: Option<f64>) -> Result<CovarianceEstimate> {
    let n = returns.first().map_or(0, |r| r.len());
    if n == 0 || returns.len() < n + 2 {
        return Err(Error::WindowTooShort {
            required: n.max(1) + 2,
            available: returns.len(),
        });
    }
    if returns.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("ragged return window".into()));
    }
    let count = returns.len() as f64;
    let mut mean = vec![0.0; n];
    for row in returns {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut sigma = DMatrix::zeros(n, n);
    for row in returns {
        for i in 0..n {
            let di = row[i] - mean[i];
            for j in i..n {
                sigma[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = sigma[(i, j)] / (count - 1.0);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    let ridge = ridge.unwrap_or_else(|| CovarianceEstimate::default_ridge(&sigma));
    for i in 0..n {
        sigma[(i, i)] += ridge;
    }
    let est = CovarianceEstimate { mean, sigma, ridge };
    est.validate()?;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn perfectly_correlated_assets() {
        let a = [0.01, -0.02, 0.03, 0.0, 0.015, -0.01];
        let rows: Vec<Vec<f64>> = a.iter().map(|&x| vec![x, 2.0 * x]).collect();
        let est = estimate_covariance(&rows, Some(1e-9)).unwrap();
        let (s11, s22) = (est.sigma[(0, 0)] - 1e-9, est.sigma[(1, 1)] - 1e-9);
        assert!((est.sigma[(0, 1)] - (s11 * s22).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn singular_sample_loads_to_pd() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.01; 3]).collect();
        assert!(estimate_covariance(&rows, Some(0.0)).is_err());
        assert!(estimate_covariance(&rows, Some(1e-6)).is_ok());
    }

    #[test]
    fn large_sample_recovers_truth() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sd = [0.01, 0.02, 0.015];
        let rho = 0.5;
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
                let common = z[0];
                vec![
                    sd[0] * common,
                    sd[1] * (rho * common + (1.0 - rho * rho).sqrt() * z[1]),
                    sd[2] * z[2],
                ]
            })
            .collect();
        let est = estimate_covariance(&rows, Some(0.0)).unwrap();
        let truth = [
            [sd[0] * sd[0], rho * sd[0] * sd[1], 0.0],
            [rho * sd[0] * sd[1], sd[1] * sd[1], 0.0],
            [0.0, 0.0, sd[2] * sd[2]],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let tol = 0.05 * truth[i][i].max(truth[j][j]).max(truth[i][j].abs());
                assert!((est.sigma[(i, j)] - truth[i][j]).abs() <= tol, "({i},{j})");
            }
        }
    }

    #[test]
    fn short_window_rejected() {
        let rows = vec![vec![0.0; 4]; 5];
        assert!(matches!(estimate_covariance(&rows, None), Err(Error::WindowTooShort { .. })));
    }
}
