use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-sectional linear model: one coefficient per feature, shared by
/// every asset, plus a common intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub theta: Vec<f64>,
    pub intercept: f64,
}

impl LinearPredictor {
    pub fn zeros(n_features: usize) -> Self {
        LinearPredictor {
            theta: vec![0.0; n_features],
            intercept: 0.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.theta.len()
    }

    /// `slice` holds one date's features, asset-major (`n_assets * n_features`).
    pub fn predict(&self, slice: &[f64]) -> Result<Vec<f64>> {
        let f = self.theta.len();
        if f == 0 || slice.len() % f != 0 {
            return Err(Error::Dimension(format!(
                "feature slice of length {} does not split into rows of {f}",
                slice.len()
            )));
        }
        Ok(slice
            .chunks_exact(f)
            .map(|x| self.intercept + x.iter().zip(&self.theta).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Parameters packed as `[theta..., intercept]`.
    pub(crate) fn params(&self) -> Vec<f64> {
        let mut p = self.theta.clone();
        p.push(self.intercept);
        p
    }

    pub(crate) fn set_params(&mut self, p: &[f64]) {
        let f = self.theta.len();
        self.theta.copy_from_slice(&p[..f]);
        self.intercept = p[f];
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.theta.iter().all(|t| t.is_finite())
    }
}

/// Pull a per-asset gradient `g = dl/dr_hat` back to `[dtheta..., dintercept]`,
/// accumulating into `out`.
pub(crate) fn accumulate_gradient(slice: &[f64], g: &[f64], out: &mut [f64]) {
    let f = out.len() - 1;
    for (x, gi) in slice.chunks_exact(f).zip(g) {
        for (o, xj) in out[..f].iter_mut().zip(x) {
            *o += gi * xj;
        }
        out[f] += gi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_theta_returns_intercept() {
        let m = LinearPredictor {
            theta: vec![0.0; 3],
            intercept: 0.01,
        };
        assert_eq!(m.predict(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0.01, 0.01]);
    }

    #[test]
    fn unit_theta_picks_coordinate() {
        let m = LinearPredictor {
            theta: vec![1.0, 0.0],
            intercept: 0.5,
        };
        let slice = [0.0, 9.0, 1.0, 9.0, 2.0, 9.0];
        assert_eq!(m.predict(&slice).unwrap(), vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn matches_independent_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (n, f) = (rng.random_range(1..8), rng.random_range(1..10));
            let m = LinearPredictor {
                theta: (0..f).map(|_| rng.random_range(-1.0..1.0)).collect(),
                intercept: rng.random_range(-1.0..1.0),
            };
            let slice: Vec<f64> = (0..n * f).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = m.predict(&slice).unwrap();
            for i in 0..n {
                let mut want = m.intercept;
                for j in 0..f {
                    want += slice[i * f + j] * m.theta[j];
                }
                assert!((got[i] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_ragged_slice() {
        assert!(LinearPredictor::zeros(3).predict(&[1.0; 4]).is_err());
    }

    #[test]
    fn gradient_pullback_is_transpose() {
        let slice = [1.0, 2.0, 3.0, 4.0];
        let mut out = vec![0.0; 3];
        accumulate_gradient(&slice, &[0.5, -1.0], &mut out);
        assert_eq!(out, vec![0.5 - 3.0, 1.0 - 4.0, -0.5]);
    }
}
