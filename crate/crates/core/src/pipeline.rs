//! The full protocol for one benchmark: a benchmark-only row, a deep-factor
//! row and a conditional row, each selected on validation, refit on train
//! plus validation and tested once. Writes checkpoints, a manifest and the
//! report tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{KeyValueConfig, ReturnSeries, SampleSplit, SplitConfig, YearMonth};
use crate::error::{Error, Result};
use crate::evaluation::{benchmark_ols_loss, dissect_holdout, evaluate_splits, significance_row};
use crate::report::{render_report, LossCurve, Report};
use crate::training::{
    grid_select, refit_and_test, Benchmark, CellSpec, GridConfig, GridReport, Prepared, SplitSummary, TrainConfig,
    TrainedModel,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "report";

/// Keys accepted in a training config file.
pub const KEYS: &[&str] = &[
    "benchmark",
    "epochs",
    "batch_months",
    "learning_rate",
    "decay_steps",
    "optimizer",
    "p_keep",
    "temperature_start",
    "temperature_end",
    "tau",
    "sort_mode",
    "activation",
    "init_scale",
    "head_fit",
    "ensemble_members",
    "ensemble_epochs",
    "ensemble_batch_months",
    "seed",
    "layers",
    "factors",
    "conditions",
    "seeds",
    "train_fraction",
    "validation_fraction",
    "train_end",
    "validation_end",
];

/// Parses `3`, `1,2,4` or an inclusive range `1-5`.
pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad list {s:?}, expected e.g. 2, 1,3 or 1-5"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

fn set<T: FromStr>(kv: &KeyValueConfig, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.get(key)? {
        *slot = v;
    }
    Ok(())
}

/// Benchmark, sample split and training settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            benchmark: Benchmark::Capm,
            split: SplitConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overridden by whatever keys `kv` holds.
    pub fn from_kv(kv: &KeyValueConfig) -> Result<Self> {
        kv.ensure_known(KEYS)?;
        let mut c = RunConfig::default();
        let t = &mut c.train;
        set(kv, "benchmark", &mut c.benchmark)?;
        set(kv, "epochs", &mut t.epochs)?;
        set(kv, "batch_months", &mut t.batch_months)?;
        set(kv, "learning_rate", &mut t.learning_rate)?;
        set(kv, "decay_steps", &mut t.decay_steps)?;
        set(kv, "optimizer", &mut t.optimizer)?;
        set(kv, "p_keep", &mut t.p_keep)?;
        set(kv, "temperature_start", &mut t.temperature_start)?;
        set(kv, "temperature_end", &mut t.temperature_end)?;
        set(kv, "tau", &mut t.sort.tau)?;
        set(kv, "sort_mode", &mut t.sort.mode)?;
        set(kv, "activation", &mut t.activation)?;
        set(kv, "init_scale", &mut t.init_scale)?;
        set(kv, "head_fit", &mut t.head_fit)?;
        set(kv, "ensemble_members", &mut t.ensemble.members)?;
        set(kv, "ensemble_epochs", &mut t.ensemble.epochs)?;
        set(kv, "ensemble_batch_months", &mut t.ensemble.batch_months)?;
        set(kv, "seed", &mut t.seed)?;
        set(kv, "seeds", &mut t.grid.seeds)?;
        for (key, slot) in [
            ("layers", &mut t.grid.layers),
            ("factors", &mut t.grid.factors),
            ("conditions", &mut t.grid.conditions),
        ] {
            if let Some(v) = kv.get_str(key) {
                *slot = parse_list(v)?;
            }
        }
        t.sort.temperature = t.temperature_start;

        let ends: (Option<YearMonth>, Option<YearMonth>) = (kv.get("train_end")?, kv.get("validation_end")?);
        let fractions: (Option<f64>, Option<f64>) = (kv.get("train_fraction")?, kv.get("validation_fraction")?);
        c.split = match (ends, fractions) {
            ((Some(train_end), Some(validation_end)), (None, None)) => SplitConfig::Boundaries {
                train_end,
                validation_end,
            },
            ((None, None), (train, validation)) => match SplitConfig::default() {
                SplitConfig::Fractions {
                    train: t0,
                    validation: v0,
                } => SplitConfig::Fractions {
                    train: train.unwrap_or(t0),
                    validation: validation.unwrap_or(v0),
                },
                other => other,
            },
            _ => {
                return Err(Error::InvalidArgument(
                    "give both train_end and validation_end, or fractions, not a mix".into(),
                ))
            }
        };
        c.train.validate()?;
        Ok(c)
    }
}

/// The grids behind the report rows: benchmark only, deep factors without
/// conditions, deep factors with conditions. Rows with no cells are left
/// out.
pub fn row_grids(benchmark: Benchmark, grid: &GridConfig) -> Vec<(String, GridConfig)> {
    let factors: Vec<usize> = grid.factors.iter().copied().filter(|&p| p > 0).collect();
    let conditions: Vec<usize> = grid.conditions.iter().copied().filter(|&c| c > 0).collect();
    let label = benchmark.label();
    let mut rows = vec![(
        label.to_string(),
        GridConfig::single(CellSpec {
            layers: 1,
            factors: 0,
            conditions: 0,
        }),
    )];
    if !factors.is_empty() {
        if grid.conditions.contains(&0) {
            rows.push((
                format!("{label}+DL"),
                GridConfig {
                    layers: grid.layers.clone(),
                    factors: factors.clone(),
                    conditions: vec![0],
                    seeds: grid.seeds,
                },
            ));
        }
        if !conditions.is_empty() {
            rows.push((
                format!("{label}+DL+Cond"),
                GridConfig {
                    layers: grid.layers.clone(),
                    factors,
                    conditions,
                    seeds: grid.seeds,
                },
            ));
        }
    }
    rows
}

/// A trained model and its refit, under a report label.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub label: String,
    pub trained: TrainedModel,
    pub refit: TrainedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub label: String,
    pub grid: GridReport,
    pub refit_cell: CellSpec,
    pub refit_seed: u64,
    pub refit_train_loss: f64,
    pub test_rmse: f64,
    pub test_r2: f64,
    pub checkpoints: [String; 2],
}

/// Everything needed to reproduce a run. Contains no clock time or host
/// information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub split: SplitSummary,
    pub rows: Vec<RowSummary>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub models: Vec<ModelPair>,
    pub manifest: Manifest,
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase().replace('+', "-")
}

/// Grid selection, refit and test for every report row.
pub fn run_pipeline(prep: &Prepared<'_>, split: &SampleSplit, config: &RunConfig) -> Result<PipelineRun> {
    config.train.validate()?;
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for (label, grid) in row_grids(config.benchmark, &config.train.grid) {
        let cfg = TrainConfig {
            grid,
            ..config.train.clone()
        };
        log::info!("{label}: {} cells x {} seeds", cfg.grid.cells().len(), cfg.grid.seeds);
        let (trained, report) = grid_select(prep, split, config.benchmark, &cfg)?;
        let refit = refit_and_test(prep, split, &trained, &cfg, None)?;
        log::info!(
            "{label}: selected {} seed {}, test alpha RMSE {:.6}",
            report.selected,
            report.selected_seed,
            refit.test.rmse
        );
        let s = slug(&label);
        rows.push(RowSummary {
            label: label.clone(),
            grid: report,
            refit_cell: refit.model.cell,
            refit_seed: refit.model.seed,
            refit_train_loss: refit.model.final_train_loss,
            test_rmse: refit.test.rmse,
            test_r2: refit.test_r2,
            checkpoints: [
                format!("{CHECKPOINT_DIR}/{s}.trained.json"),
                format!("{CHECKPOINT_DIR}/{s}.refit.json"),
            ],
        });
        models.push(ModelPair {
            label,
            trained,
            refit: refit.model,
        });
    }
    Ok(PipelineRun {
        models,
        manifest: Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            split: SplitSummary::new(prep, split),
            rows,
        },
    })
}

/// Optional inputs of the significance and dissection tables.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub anomalies: Option<ReturnSeries>,
    pub holdouts: Vec<(String, ReturnSeries)>,
}

/// Report tables for a set of models. Loss curves come from the training
/// fits; the least-squares losses of every benchmark over the training
/// window are the reference lines.
pub fn build_report(
    prep: &Prepared<'_>,
    split: &SampleSplit,
    models: &[ModelPair],
    inputs: &ReportInputs,
) -> Result<Report> {
    let mut report = Report::default();
    for m in models {
        report.oos.push(evaluate_splits(&m.label, &m.trained, &m.refit, prep, split)?);
        if let Some(a) = &inputs.anomalies {
            report.significance.push(significance_row(&m.label, &m.trained, &m.refit, prep, split, a)?);
        }
        for (set, h) in &inputs.holdouts {
            report.dissect.push(dissect_holdout(set, &m.label, &m.trained, &m.refit, prep, split, h)?);
        }
        if m.trained.network.is_some() || m.trained.conditional.is_some() {
            report.curves.push(LossCurve {
                model: m.label.clone(),
                losses: m.trained.loss_curve.clone(),
            });
        }
    }
    let train = split.train_months();
    for b in Benchmark::ALL {
        if b.num_factors() <= prep.dataset.num_factors() {
            report.references.push((b.label().to_string(), benchmark_ols_loss(prep, b, &train)?));
        }
    }
    Ok(report)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes checkpoints, the manifest and the report under `dir`.
pub fn write_run(dir: impl AsRef<Path>, run: &PipelineRun, report: &Report) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    create_dir(&dir.join(CHECKPOINT_DIR))?;
    let mut written = Vec::new();
    for (m, row) in run.models.iter().zip(&run.manifest.rows) {
        for (model, rel) in [(&m.trained, &row.checkpoints[0]), (&m.refit, &row.checkpoints[1])] {
            let path = dir.join(rel);
            model.save(&path)?;
            written.push(path);
        }
    }
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, run.manifest.to_json()?).map_err(|e| Error::io(&manifest, e))?;
    written.push(manifest);
    written.extend(render_report(report, dir.join(REPORT_DIR))?);
    Ok(written)
}

/// Reads back the manifest and checkpoints of a finished run.
pub fn load_run(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<ModelPair>)> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir.join(MANIFEST_FILE))?;
    let models = manifest
        .rows
        .iter()
        .map(|row| {
            Ok(ModelPair {
                label: row.label.clone(),
                trained: TrainedModel::load(dir.join(&row.checkpoints[0]))?,
                refit: TrainedModel::load(dir.join(&row.checkpoints[1]))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, models))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("3").unwrap(), vec![3]);
        assert_eq!(parse_list("1, 2,4").unwrap(), vec![1, 2, 4]);
        assert_eq!(parse_list("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert!(parse_list("3-1").is_err());
        assert!(parse_list("a").is_err());
    }

    #[test]
    fn config_keys_override_defaults() {
        let kv = KeyValueConfig::parse(
            "benchmark = ff3\nepochs = 7\nlayers = 1-2\nconditions = 0\nsort_mode = straight_through\ntrain_fraction = 0.5\n",
            None,
        )
        .unwrap();
        let c = RunConfig::from_kv(&kv).unwrap();
        assert_eq!(c.benchmark, Benchmark::Ff3);
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.grid.layers, vec![1, 2]);
        assert_eq!(c.train.grid.conditions, vec![0]);
        assert_eq!(c.train.sort.mode, crate::sorting::SortMode::StraightThrough);
        assert_eq!(c.split, SplitConfig::Fractions { train: 0.5, validation: 0.2 });
        assert_eq!(c.train.batch_months, TrainConfig::default().batch_months);

        let unknown = KeyValueConfig::parse("epoch = 3\n", None).unwrap();
        assert_eq!(RunConfig::from_kv(&unknown).unwrap_err().exit_code(), 1);
        let mixed = KeyValueConfig::parse("train_end = 2000-01\ntrain_fraction = 0.5\n", None).unwrap();
        assert!(RunConfig::from_kv(&mixed).is_err());
        let hard = KeyValueConfig::parse("sort_mode = hard\n", None).unwrap();
        assert!(RunConfig::from_kv(&hard).is_err());
    }

    #[test]
    fn rows_follow_the_grid() {
        let rows = row_grids(Benchmark::Capm, &GridConfig::default());
        let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["CAPM", "CAPM+DL", "CAPM+DL+Cond"]);
        assert_eq!(rows[0].1.cells().len(), 1);
        assert_eq!(rows[1].1.cells().len(), 25);
        assert_eq!(rows[2].1.cells().len(), 75);

        let unconditional = GridConfig {
            conditions: vec![0],
            ..GridConfig::default()
        };
        assert_eq!(row_grids(Benchmark::Ff3, &unconditional).len(), 2);
        let cond_only = GridConfig {
            conditions: vec![2],
            ..GridConfig::default()
        };
        let labels: Vec<String> = row_grids(Benchmark::Ff4, &cond_only).into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, ["FF4", "FF4+DL+Cond"]);
    }
}
