use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AccessLog, SampleSplit};
use crate::error::{Error, Result};
use crate::evaluation::historical_average_baseline;
use crate::stats::{alpha_rmse, mean, oos_r_squared, population_std, AlphaStats};

use super::context::Prepared;
use super::fit::train;
use super::{Benchmark, CellSpec, TrainConfig, TrainedModel};

/// One trained (cell, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub cell: CellSpec,
    pub seed: u64,
    pub validation_rmse: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub error: Option<String>,
}

/// Validation alpha RMSE of a cell across its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: CellSpec,
    pub seeds_ok: usize,
    pub mean_rmse: Option<f64>,
    pub std_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub benchmark: Benchmark,
    pub entries: Vec<GridEntry>,
    pub cells: Vec<CellSummary>,
    pub selected: CellSpec,
    pub selected_seed: u64,
}

/// Validation alpha RMSE with the loadings fitted on the training window.
pub(crate) fn frozen_rmse(model: &TrainedModel, prep: &Prepared<'_>, months: &[usize], log: Option<&AccessLog>) -> Result<f64> {
    let e = model.pricing_errors(prep, months, log)?;
    let alphas: Vec<f64> = (0..e.rows()).map(|i| mean(e.row(i))).collect();
    alpha_rmse(&alphas)
}

fn is_cell_failure(e: &Error) -> bool {
    e.exit_code() == 3
}

/// Orders cells by validation score, then fewer layers, factors and
/// conditions.
fn better(a: (f64, CellSpec), b: (f64, CellSpec)) -> bool {
    let key = |c: CellSpec| (c.layers, c.factors, c.conditions);
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => key(a.1) < key(b.1),
    }
}

/// Trains every cell and seed on the training window, scores each on the
/// validation window with frozen loadings and returns the best model.
pub fn grid_select(
    prep: &Prepared<'_>,
    split: &SampleSplit,
    benchmark: Benchmark,
    config: &TrainConfig,
) -> Result<(TrainedModel, GridReport)> {
    config.validate()?;
    let cells = config.grid.cells();
    let tasks: Vec<(CellSpec, u64)> = cells
        .iter()
        .flat_map(|&c| (0..config.grid.seeds as u64).map(move |s| (c, config.seed.wrapping_add(s))))
        .collect();
    let validation = split.validation_months();
    let results: Vec<Result<(TrainedModel, f64)>> = tasks
        .par_iter()
        .map(|&(cell, seed)| {
            let model = train(prep, cell, benchmark, config, split.train.clone(), seed, None)?;
            let rmse = frozen_rmse(&model, prep, &validation, None)?;
            if !rmse.is_finite() {
                return Err(Error::Numerical(format!("cell {cell}: non-finite validation RMSE")));
            }
            Ok((model, rmse))
        })
        .collect();

    let mut entries = Vec::with_capacity(tasks.len());
    let mut models = Vec::with_capacity(tasks.len());
    for (r, &(cell, seed)) in results.into_iter().zip(&tasks) {
        match r {
            Ok((m, rmse)) => {
                entries.push(GridEntry {
                    cell,
                    seed,
                    validation_rmse: Some(rmse),
                    final_train_loss: Some(m.final_train_loss),
                    error: None,
                });
                models.push(Some(m));
            }
            Err(e) if is_cell_failure(&e) => {
                log::warn!("cell {cell} seed {seed} failed: {e}");
                entries.push(GridEntry {
                    cell,
                    seed,
                    validation_rmse: None,
                    final_train_loss: None,
                    error: Some(e.to_string()),
                });
                models.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let mut summaries = Vec::with_capacity(cells.len());
    let mut best_cell: Option<(f64, CellSpec)> = None;
    for &cell in &cells {
        let scores: Vec<f64> = entries.iter().filter(|e| e.cell == cell).filter_map(|e| e.validation_rmse).collect();
        let summary = CellSummary {
            cell,
            seeds_ok: scores.len(),
            mean_rmse: (!scores.is_empty()).then(|| mean(&scores)),
            std_rmse: (!scores.is_empty()).then(|| population_std(&scores)),
        };
        if let Some(m) = summary.mean_rmse {
            if best_cell.is_none_or(|b| better((m, cell), b)) {
                best_cell = Some((m, cell));
            }
        }
        summaries.push(summary);
    }
    let (_, selected) = best_cell.ok_or_else(|| Error::Numerical("every grid cell failed".into()))?;
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        if e.cell == selected {
            if let Some(r) = e.validation_rmse {
                if best.is_none_or(|(_, b)| r < b) {
                    best = Some((i, r));
                }
            }
        }
    }
    let (index, _) = best.expect("selected cell has a finished seed");
    let model = models.swap_remove(index).expect("selected entry finished");
    let report = GridReport {
        benchmark,
        entries,
        cells: summaries,
        selected,
        selected_seed: model.seed,
    };
    Ok((model, report))
}

/// Test-window metrics of the refit model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitResult {
    pub model: TrainedModel,
    pub test: AlphaStats,
    pub baseline_rmse: f64,
    pub test_r2: f64,
}

/// Retrains the selected architecture and seed on train plus validation
/// and evaluates once on the test window.
pub fn refit_and_test(
    prep: &Prepared<'_>,
    split: &SampleSplit,
    selected: &TrainedModel,
    config: &TrainConfig,
    log: Option<&AccessLog>,
) -> Result<RefitResult> {
    let refit = split.train.start..split.validation.end;
    let model = train(prep, selected.cell, selected.benchmark, config, refit, selected.seed, log)?;
    let test_months = split.test_months();
    let e = model.pricing_errors(prep, &test_months, None)?;
    let test = AlphaStats::from_residuals(&e)?;
    let all = prep.portfolio_panel(&(0..prep.num_months()).collect::<Vec<_>>(), None);
    let baseline = historical_average_baseline(&all, split.train.start, &test_months)?;
    let test_r2 = oos_r_squared(test.rmse, baseline.rmse)?;
    Ok(RefitResult {
        model,
        test,
        baseline_rmse: baseline.rmse,
        test_r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: [String; 2],
    pub validation: [String; 2],
    pub test: [String; 2],
    pub months: [usize; 3],
}

impl SplitSummary {
    pub fn new(prep: &Prepared<'_>, split: &SampleSplit) -> Self {
        let d = &prep.dataset.dates;
        let span = |r: &std::ops::Range<usize>| [d[r.start].to_string(), d[r.end - 1].to_string()];
        SplitSummary {
            train: span(&split.train),
            validation: span(&split.validation),
            test: span(&split.test),
            months: [split.train.len(), split.validation.len(), split.test.len()],
        }
    }
}
