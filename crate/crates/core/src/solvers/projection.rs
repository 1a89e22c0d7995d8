use super::Portfolio;

/// Euclidean projection onto `{w >= 0, sum w = 1}` by sort and threshold.
pub fn project_simplex(v: &[f64]) -> Portfolio {
    assert!(!v.is_empty(), "cannot project an empty vector");
    assert!(v.iter().all(|x| x.is_finite()), "non-finite input to project_simplex");
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if total != 1.0 {
        w.iter_mut().for_each(|x| *x /= total);
    }
    Portfolio(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn feasible_point_is_fixed() {
        assert_eq!(project_simplex(&[0.2, 0.8]).weights(), &[0.2, 0.8]);
    }

    #[test]
    fn hand_threshold() {
        let w = project_simplex(&[1.0, 0.5]);
        assert!((w.weights()[0] - 0.75).abs() < 1e-15);
        assert!((w.weights()[1] - 0.25).abs() < 1e-15);
        assert_eq!(project_simplex(&[-5.0, -7.0]).weights(), &[1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn kkt_conditions(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
            let w = project_simplex(&v);
            let w = w.weights();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // v - w = tau on the support and <= tau off it.
            let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
            let tau = v[support[0]] - w[support[0]];
            for i in 0..w.len() {
                if w[i] > 0.0 {
                    prop_assert!((v[i] - w[i] - tau).abs() < 1e-9);
                } else {
                    prop_assert!(v[i] - tau <= 1e-9);
                }
            }
        }
    }
}
