//! End-to-end training of the deep factor stack, grid selection over
//! architectures and the refit on train plus validation.

mod context;
mod fit;
mod gradcheck;
mod grid;
mod objective;
mod optim;

use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditional::{relu_pairs_panel, stack_factors, ConditionSpec, PairCoeffs};
use crate::data::{AccessLog, MacroScaler};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{Activation, NetworkParams};
use crate::pricing::{EnsembleConfig, EnsembleHead, PricingCoeffs};
use crate::sorting::{SortMode, SortSpec};

pub use context::Prepared;
pub use fit::{train, TrainingState};
pub use gradcheck::{gradient_check_full, shrink_dataset, GradCheck, GradCheckStatus};
pub use grid::{grid_select, refit_and_test, CellSummary, GridEntry, GridReport, RefitResult, SplitSummary};
pub use optim::OptimizerKind;

/// Which benchmark factors `g` are controlled for: the leading 1, 3 or 4
/// columns of the factor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Capm,
    Ff3,
    Ff4,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Capm, Benchmark::Ff3, Benchmark::Ff4];

    pub fn num_factors(self) -> usize {
        match self {
            Benchmark::Capm => 1,
            Benchmark::Ff3 => 3,
            Benchmark::Ff4 => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Benchmark::Capm => "CAPM",
            Benchmark::Ff3 => "FF3",
            Benchmark::Ff4 => "FF4",
        }
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "capm" => Ok(Benchmark::Capm),
            "ff3" => Ok(Benchmark::Ff3),
            "ff4" => Ok(Benchmark::Ff4),
            other => Err(Error::InvalidArgument(format!("unknown benchmark {other:?}, expected capm, ff3 or ff4"))),
        }
    }
}

/// One architecture in the grid: hidden layers, deep factors and ReLU
/// condition pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellSpec {
    pub layers: usize,
    pub factors: usize,
    pub conditions: usize,
}

impl std::fmt::Display for CellSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}-P{}-C{}", self.layers, self.factors, self.conditions)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub layers: Vec<usize>,
    pub factors: Vec<usize>,
    pub conditions: Vec<usize>,
    pub seeds: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            layers: (1..=5).collect(),
            factors: (1..=5).collect(),
            conditions: (0..=3).collect(),
            seeds: 3,
        }
    }
}

impl GridConfig {
    pub fn single(cell: CellSpec) -> Self {
        GridConfig {
            layers: vec![cell.layers],
            factors: vec![cell.factors],
            conditions: vec![cell.conditions],
            seeds: 1,
        }
    }

    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &factors in &self.factors {
                for &conditions in &self.conditions {
                    out.push(CellSpec {
                        layers,
                        factors,
                        conditions,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells().is_empty() || self.seeds == 0 {
            return Err(Error::InvalidArgument("grid is empty".into()));
        }
        if let Some(l) = self.layers.iter().find(|&&l| l > 7) {
            return Err(Error::InvalidArgument(format!("at most 7 hidden layers are supported, got {l}")));
        }
        if let Some(c) = self.conditions.iter().find(|&&c| c > 8) {
            return Err(Error::InvalidArgument(format!("at most 8 condition pairs are supported, got {c}")));
        }
        Ok(())
    }
}

/// How the final head is fitted on the hard-sort factors once the network
/// is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFit {
    Ols,
    Ensemble,
}

impl FromStr for HeadFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(HeadFit::Ols),
            "ensemble" => Ok(HeadFit::Ensemble),
            other => Err(Error::InvalidArgument(format!("unknown head fit {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_months: usize,
    pub learning_rate: f64,
    /// Steps over which the step size halves.
    pub decay_steps: f64,
    pub optimizer: OptimizerKind,
    pub p_keep: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub sort: SortSpec,
    pub activation: Activation,
    /// Half-width of the uniform initialization of deep-factor loadings.
    pub init_scale: f64,
    pub head_fit: HeadFit,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
    pub grid: GridConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_months: 120,
            learning_rate: 10.0,
            decay_steps: 100.0,
            optimizer: OptimizerKind::Sgd,
            p_keep: 0.9,
            temperature_start: 1.0,
            temperature_end: 0.1,
            sort: SortSpec::default(),
            activation: Activation::Tanh,
            init_scale: 0.1,
            head_fit: HeadFit::Ols,
            ensemble: EnsembleConfig::default(),
            seed: 0,
            grid: GridConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_months == 0 {
            return bad("batch_months must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.p_keep > 0.0 && self.p_keep <= 1.0) {
            return bad(format!("p_keep must lie in (0, 1], got {}", self.p_keep));
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if self.sort.mode == SortMode::Hard {
            return bad("training needs a soft or straight-through sort".into());
        }
        self.sort.validate()?;
        self.grid.validate()
    }

    /// Geometric interpolation from the start to the end temperature.
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_end;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.temperature_start * (self.temperature_end / self.temperature_start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalHead {
    pub spec: ConditionSpec,
    pub pairs: PairCoeffs,
}

/// A trained stack ready for evaluation. Predictions use hard sorting and
/// no dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub cell: CellSpec,
    pub benchmark: Benchmark,
    pub seed: u64,
    pub sort: SortSpec,
    pub network: Option<NetworkParams>,
    pub scaler: MacroScaler,
    pub coeffs: PricingCoeffs,
    pub conditional: Option<ConditionalHead>,
    pub ensemble: Option<EnsembleHead>,
    /// Full-window loss before the first step.
    pub initial_loss: f64,
    /// Full-window loss after each epoch, hard sort, training coefficients.
    pub loss_curve: Vec<f64>,
    /// Full-window loss of the final model.
    pub final_train_loss: f64,
    pub fit_start: usize,
    pub fit_end: usize,
    /// Month-factor pairs with too few eligible firms to sort.
    pub degenerate_months: usize,
}

impl TrainedModel {
    pub fn fit_months(&self) -> Range<usize> {
        self.fit_start..self.fit_end
    }

    pub(crate) fn stack(&self) -> objective::StackParams {
        let (directions, pairs) = match &self.conditional {
            Some(c) => (c.spec.directions.clone(), c.pairs.clone()),
            None => (
                Matrix::zeros(0, self.cell.factors + self.benchmark.num_factors()),
                PairCoeffs::zeros(self.coeffs.num_assets(), 0),
            ),
        };
        objective::StackParams {
            network: self.network.clone(),
            coeffs: self.coeffs.clone(),
            directions,
            pairs,
        }
    }

    /// `P x T` hard-sort deep factor returns, decimal.
    pub fn deep_factors(&self, prep: &Prepared<'_>, months: &[usize], log: Option<&AccessLog>) -> Result<Matrix> {
        if self.network.is_none() || months.is_empty() {
            for &t in months {
                context::record(log, t);
            }
            return Ok(Matrix::zeros(self.cell.factors, months.len()));
        }
        let ctx = context::Context {
            prep,
            scaler: &self.scaler,
            scale: 1.0,
            benchmark: self.benchmark,
            log,
        };
        let opts = objective::PassOptions {
            sort: objective::SortPass::Hard,
            tau: self.sort,
            dropout: None,
            frozen: None,
            gradients: false,
        };
        Ok(objective::evaluate(&self.stack(), &ctx, months, &opts)?.factors)
    }

    pub fn benchmark_factors(&self, prep: &Prepared<'_>, months: &[usize], log: Option<&AccessLog>) -> Result<Matrix> {
        prep.benchmark_panel(self.benchmark, months, log)
    }

    /// Regressors of the linear form of the model over `months`: deep
    /// factors stacked with the ReLU condition features, then the benchmark
    /// factors. Predictions equal a linear fit on these.
    pub fn regressors(&self, prep: &Prepared<'_>, months: &[usize], log: Option<&AccessLog>) -> Result<(Matrix, Matrix)> {
        let f = self.deep_factors(prep, months, log)?;
        let g = self.benchmark_factors(prep, months, log)?;
        let x = match &self.conditional {
            Some(c) => {
                let s = c.spec.directions.matmul(&stack_factors(&f, &g)?)?;
                stack_factors(&f, &s.map(|v| v.max(0.0)))?
            }
            None => f,
        };
        Ok((x, g))
    }

    /// `N x T` predicted returns from factor panels.
    pub fn predict(&self, f: &Matrix, g: &Matrix) -> Result<Matrix> {
        let mut out = self.coeffs.predict_panel(f, g)?;
        if let Some(c) = &self.conditional {
            out.add_scaled(&relu_pairs_panel(&stack_factors(f, g)?, &c.spec, &c.pairs)?, 1.0)?;
        }
        Ok(out)
    }

    /// Realized minus predicted test-portfolio returns over `months`.
    pub fn pricing_errors(&self, prep: &Prepared<'_>, months: &[usize], log: Option<&AccessLog>) -> Result<Matrix> {
        let f = self.deep_factors(prep, months, log)?;
        let g = self.benchmark_factors(prep, months, log)?;
        let mut e = prep.portfolio_panel(months, log);
        e.add_scaled(&self.predict(&f, &g)?, -1.0)?;
        Ok(e)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
