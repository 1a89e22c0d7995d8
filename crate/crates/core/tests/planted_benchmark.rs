use dfolio::backtest::{run_backtest, BacktestConfig, Strategy, StrategyEntry};
use dfolio::market_data::{generate_synthetic, SyntheticSpec};
use dfolio::training::SearchSpace;
use rayon::prelude::*;

/// (windows where SPO+ held at least the uniform portfolio's value, windows).
fn seed_windows(seed: u64) -> (usize, usize) {
    let mut spec = SyntheticSpec::new(4, 640, 100 + seed, vec![0.004, -0.002, 0.001], 0.01);
    spec.feature_persistence = 0.97;
    let (frame, planted, _) = generate_synthetic(&spec).unwrap();
    let config = BacktestConfig {
        fee_rate: 0.0,
        seed,
        search: SearchSpace {
            n_trials: 4,
            epoch_range: (5, 10),
            seed,
            ..SearchSpace::default()
        },
        ..BacktestConfig::default()
    };
    let roster = [StrategyEntry {
        id: "spo-plus".into(),
        strategy: Strategy::SpoPlus,
    }];
    let report = run_backtest(&frame, &planted, &roster, &config).unwrap();
    let ledger = report.runs[0].outcome.as_ref().unwrap();
    let last = *frame.dates.last().unwrap();
    let mut wins = 0;
    for (k, rec) in ledger.rebalances.iter().enumerate() {
        let end = ledger.rebalances.get(k + 1).map_or(last, |r| r.date);
        let (a, b) = (frame.index_of(rec.date).unwrap(), frame.index_of(end).unwrap());
        let growth: Vec<f64> = (0..spec.n_assets).map(|i| frame.adj_close[b][i] / frame.adj_close[a][i]).collect();
        let held: f64 = rec.target.iter().zip(&growth).map(|(w, g)| w * g).sum();
        let uniform = growth.iter().sum::<f64>() / growth.len() as f64;
        wins += usize::from(held >= uniform);
    }
    (wins, ledger.rebalances.len())
}

#[test]
fn spo_plus_matches_or_beats_uniform_in_most_windows() {
    let (wins, windows) = (0..20u64)
        .into_par_iter()
        .map(seed_windows)
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    assert!(windows >= 200, "{windows} windows");
    let share = wins as f64 / windows as f64;
    assert!(share >= 0.6, "SPO+ at or above uniform in {wins}/{windows} windows ({share:.3})");
}
