use deepfactor::data::{simulate_market, split, AccessLog, PanelDataset, SimConfig, SplitConfig};
use deepfactor::pipeline::{build_report, run_pipeline, write_run, ReportInputs, RunConfig};
use deepfactor::training::{
    grid_select, refit_and_test, train, Benchmark, CellSpec, GridConfig, Prepared, TrainConfig,
};

fn market(seed: u64) -> PanelDataset {
    simulate_market(&SimConfig {
        firms: 60,
        months: 90,
        seed,
        ..SimConfig::default()
    })
    .unwrap()
    .dataset
}

fn small_config(grid: GridConfig) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_months: 24,
        grid,
        ..TrainConfig::default()
    }
}

#[test]
fn single_cell_grid_selects_that_cell() {
    let ds = market(3);
    let prep = Prepared::new(&ds).unwrap();
    let sp = split(&ds.dates, &SplitConfig::default()).unwrap();
    let cell = CellSpec { layers: 1, factors: 1, conditions: 0 };
    let cfg = small_config(GridConfig { seeds: 2, ..GridConfig::single(cell) });
    let (model, report) = grid_select(&prep, &sp, Benchmark::Capm, &cfg).unwrap();
    assert_eq!(report.selected, cell);
    assert_eq!(report.entries.len(), 2);
    assert_eq!(report.cells.len(), 1);
    assert_eq!(report.cells[0].seeds_ok, 2);
    let best = report
        .entries
        .iter()
        .min_by(|a, b| a.validation_rmse.unwrap().total_cmp(&b.validation_rmse.unwrap()))
        .unwrap();
    assert_eq!(model.seed, best.seed);
    assert_eq!(report.selected_seed, best.seed);
    assert_eq!(model.fit_months(), sp.train);
}

#[test]
fn refit_covers_train_and_validation_only() {
    let ds = market(4);
    let prep = Prepared::new(&ds).unwrap();
    let sp = split(&ds.dates, &SplitConfig::default()).unwrap();
    let cell = CellSpec { layers: 1, factors: 1, conditions: 1 };
    let cfg = small_config(GridConfig::single(cell));
    let (selected, _) = grid_select(&prep, &sp, Benchmark::Capm, &cfg).unwrap();
    let log = AccessLog::new();
    let refit = refit_and_test(&prep, &sp, &selected, &cfg, Some(&log)).unwrap();
    let seen = log.months();
    assert_eq!(seen.len(), sp.train.len() + sp.validation.len());
    assert!(seen.iter().all(|t| *t < sp.validation.end));
    assert_eq!(refit.model.fit_months(), sp.train.start..sp.validation.end);
    assert_eq!(refit.model.seed, selected.seed);
    assert_eq!(refit.model.cell, selected.cell);
    assert!(refit.test.rmse.is_finite() && refit.baseline_rmse > 0.0);
}

#[test]
fn training_reads_only_its_window() {
    let ds = market(5);
    let prep = Prepared::new(&ds).unwrap();
    let cfg = small_config(GridConfig::default());
    let log = AccessLog::new();
    let cell = CellSpec { layers: 1, factors: 2, conditions: 1 };
    train(&prep, cell, Benchmark::Ff3, &cfg, 20..60, 0, Some(&log)).unwrap();
    assert_eq!(log.months(), (20..60).collect());
}

#[test]
fn factors_ignore_later_months() {
    let ds = market(6);
    let prep = Prepared::new(&ds).unwrap();
    let cfg = small_config(GridConfig::default());
    let cell = CellSpec { layers: 2, factors: 2, conditions: 0 };
    let model = train(&prep, cell, Benchmark::Capm, &cfg, 0..50, 1, None).unwrap();
    let months: Vec<usize> = (0..50).collect();
    let before = model.deep_factors(&prep, &months, None).unwrap();

    let mut altered = ds.clone();
    for cs in &mut altered.firms.months[50..] {
        for v in cs.chars.as_mut_slice() {
            *v = -*v + 0.3;
        }
        for r in &mut cs.returns {
            *r += 0.5;
        }
        for me in &mut cs.market_equity {
            *me *= 7.0;
        }
    }
    let altered_prep = Prepared::new(&altered).unwrap();
    let after = model.deep_factors(&altered_prep, &months, None).unwrap();
    assert_eq!(before, after);

    let log = AccessLog::new();
    model.deep_factors(&prep, &[30], Some(&log)).unwrap();
    assert_eq!(log.months(), [30].into_iter().collect());
}

#[test]
fn manifests_repeat_exactly() {
    let ds = market(7);
    let prep = Prepared::new(&ds).unwrap();
    let sp = split(&ds.dates, &SplitConfig::default()).unwrap();
    let cfg = small_config(GridConfig {
        layers: vec![1],
        factors: vec![1, 2],
        conditions: vec![0],
        seeds: 2,
    });
    let config = RunConfig {
        train: cfg,
        ..RunConfig::default()
    };
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let run = run_pipeline(&prep, &sp, &config).unwrap();
        let report = build_report(&prep, &sp, &run.models, &ReportInputs::default()).unwrap();
        write_run(out.path(), &run, &report).unwrap();
        let read = |rel: &str| std::fs::read_to_string(out.path().join(rel)).unwrap();
        [read("manifest.json"), read("report/summary.txt"), read("report/table_oos.csv")].concat()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(!a.contains("time"));
}
