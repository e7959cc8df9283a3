use deepfactor::data::{simulate_market, split, SimConfig, SplitConfig};
use deepfactor::evaluation::{dissect_holdout, evaluate_splits, in_sample_r2, significance_row};
use deepfactor::training::{train, Benchmark, CellSpec, Prepared, TrainConfig};

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_months: 24,
        ..TrainConfig::default()
    }
}

#[test]
fn dissecting_the_training_portfolios_reproduces_the_main_table() {
    let sim = simulate_market(&SimConfig {
        firms: 60,
        months: 90,
        seed: 8,
        ..SimConfig::default()
    })
    .unwrap();
    let ds = &sim.dataset;
    let prep = Prepared::new(ds).unwrap();
    let sp = split(&ds.dates, &SplitConfig::default()).unwrap();
    for conditions in [0, 1] {
        let cell = CellSpec { layers: 1, factors: 1, conditions };
        let trained = train(&prep, cell, Benchmark::Capm, &config(), sp.train.clone(), 0, None).unwrap();
        let refit = train(&prep, cell, Benchmark::Capm, &config(), sp.train.start..sp.validation.end, 0, None).unwrap();
        let row = evaluate_splits("m", &trained, &refit, &prep, &sp).unwrap();
        let (vld, test) = row.recompute().unwrap();
        assert!((vld - row.vld_r2).abs() < 1e-15 && (test - row.test_r2).abs() < 1e-15);

        let d = dissect_holdout("same", "m", &trained, &refit, &prep, &sp, &ds.portfolios).unwrap();
        assert!((d.vld_r2 - row.vld_r2).abs() < 1e-9, "{} vs {}", d.vld_r2, row.vld_r2);
        assert!((d.test_r2 - row.test_r2).abs() < 1e-9, "{} vs {}", d.test_r2, row.test_r2);

        let ins = in_sample_r2(&trained, &prep, &sp.train_months()).unwrap();
        assert_eq!(ins, row.ins_r2);
        assert!(ins > 0.0 && ins < 1.0);
    }
}

#[test]
fn significance_rows_count_within_range() {
    let sim = simulate_market(&SimConfig {
        firms: 60,
        months: 90,
        seed: 9,
        ..SimConfig::default()
    })
    .unwrap();
    let ds = &sim.dataset;
    let prep = Prepared::new(ds).unwrap();
    let sp = split(&ds.dates, &SplitConfig::default()).unwrap();
    let cell = CellSpec { layers: 1, factors: 1, conditions: 0 };
    let trained = train(&prep, cell, Benchmark::Ff3, &config(), sp.train.clone(), 0, None).unwrap();
    let refit = train(&prep, cell, Benchmark::Ff3, &config(), sp.train.start..sp.validation.end, 0, None).unwrap();
    let row = significance_row("m", &trained, &refit, &prep, &sp, &ds.portfolios).unwrap();
    assert_eq!(row.anomalies, ds.num_portfolios());
    for c in [row.ins_sig, row.vld_sig, row.test_sig] {
        assert!(c <= row.anomalies);
    }
}
