use std::ops::Range;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditional::{stack_factors, PairCoeffs};
use crate::data::{AccessLog, MacroScaler};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{init_params, Architecture};
use crate::pricing::{fit_ensemble, fit_ols, EnsembleHead, PricingCoeffs};
use crate::stats::population_std;

use super::context::{record, Context, Prepared};
use super::objective::{evaluate, Dropout, PassOptions, SortPass, StackParams};
use super::optim::Optimizer;
use super::{Benchmark, CellSpec, ConditionalHead, HeadFit, TrainConfig, TrainedModel};

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stack in the middle of training on one fitting window.
///
/// Returns are divided by their standard deviation over the window before
/// entering the loss. Loadings are unaffected; reported losses are in
/// decimal units.
pub struct TrainingState<'p, 'a> {
    prep: &'p Prepared<'a>,
    cell: CellSpec,
    benchmark: Benchmark,
    config: TrainConfig,
    seed: u64,
    scaler: MacroScaler,
    scale: f64,
    months: Vec<usize>,
    params: StackParams,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    log: Option<&'p AccessLog>,
}

impl<'p, 'a> TrainingState<'p, 'a> {
    pub fn new(
        prep: &'p Prepared<'a>,
        cell: CellSpec,
        benchmark: Benchmark,
        config: &TrainConfig,
        fit: Range<usize>,
        seed: u64,
        log: Option<&'p AccessLog>,
    ) -> Result<Self> {
        config.validate()?;
        if fit.end > prep.num_months() || fit.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fitting window {}..{} is outside the {} available months",
                fit.start,
                fit.end,
                prep.num_months()
            )));
        }
        let months: Vec<usize> = fit.collect();
        if config.batch_months > months.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {} months exceeds the {}-month fitting window",
                config.batch_months,
                months.len()
            )));
        }
        for &t in &months {
            record(log, t);
        }
        let scaler = MacroScaler::fit(&prep.dataset.macro_series, &months)?;
        let r = prep.portfolio_panel(&months, log);
        let g = prep.benchmark_panel(benchmark, &months, log)?;
        let sd = population_std(r.as_slice());
        let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };

        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
        let (n, p, d, pc) = (r.rows(), cell.factors, g.rows(), cell.conditions);
        let network = if p > 0 {
            let arch = Architecture::with_depth(prep.input_rows(), cell.layers, p)?;
            Some(init_params(&arch, config.activation, mix(seed, 2))?)
        } else {
            None
        };
        let beta = Matrix::from_vec(
            n,
            p,
            (0..n * p).map(|_| rng.random_range(-config.init_scale..=config.init_scale)).collect(),
        )?;
        let gamma = match fit_ols(&r, &Matrix::zeros(0, months.len()), &g) {
            Ok(c) => c.gamma,
            Err(_) => Matrix::zeros(n, d),
        };
        let width = (p + d) as f64;
        let directions = Matrix::from_vec(
            pc,
            p + d,
            (0..pc * (p + d))
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / width.sqrt()
                })
                .collect(),
        )?;
        let params = StackParams {
            network,
            coeffs: PricingCoeffs { beta, gamma },
            directions,
            pairs: PairCoeffs::zeros(n, pc),
        };
        let optimizer = Optimizer::new(
            config.optimizer,
            config.learning_rate,
            config.decay_steps,
            params.values().len(),
        );
        Ok(TrainingState {
            prep,
            cell,
            benchmark,
            config: config.clone(),
            seed,
            scaler,
            scale,
            months,
            params,
            optimizer,
            rng,
            log,
        })
    }

    pub(crate) fn context(&self) -> Context<'_, 'a> {
        Context {
            prep: self.prep,
            scaler: &self.scaler,
            scale: self.scale,
            benchmark: self.benchmark,
            log: self.log,
        }
    }

    pub(crate) fn params(&self) -> &StackParams {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut StackParams {
        &mut self.params
    }

    pub fn months(&self) -> &[usize] {
        &self.months
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.params.values()
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.learning_rate()
    }

    /// One gradient step on `batch` (month indices) at the given sort
    /// temperature. Returns the batch loss before the step.
    pub fn sgd_step(&mut self, batch: &[usize], temperature: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(t) = batch.iter().find(|t| !self.months.contains(t)) {
            return Err(Error::InvalidArgument(format!("month {t} is outside the fitting window")));
        }
        let sort = match self.config.sort.mode {
            crate::sorting::SortMode::StraightThrough => SortPass::StraightThrough { temperature },
            _ => SortPass::Soft { temperature },
        };
        let dropout = (self.config.p_keep < 1.0).then(|| Dropout {
            p_keep: self.config.p_keep,
            seed: mix(self.seed, 1000 + self.optimizer.steps()),
        });
        let opts = PassOptions {
            sort,
            tau: self.config.sort,
            dropout,
            frozen: None,
            gradients: true,
        };
        let pass = evaluate(&self.params, &self.context(), batch, &opts)?;
        let grads = pass.grads.expect("gradients requested").values();
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient entry {i} at step {} (months {}..={}, batch loss {})",
                self.optimizer.steps(),
                batch[0],
                batch[batch.len() - 1],
                pass.loss
            )));
        }
        let mut values = self.params.values();
        self.optimizer.apply(&mut values, &grads);
        self.params.set_values(&values);
        Ok(pass.loss * self.scale * self.scale)
    }

    /// Loss over the whole window with hard sorting and no dropout.
    pub fn full_loss(&self) -> Result<f64> {
        let opts = PassOptions {
            sort: SortPass::Hard,
            tau: self.config.sort,
            dropout: None,
            frozen: None,
            gradients: false,
        };
        Ok(evaluate(&self.params, &self.context(), &self.months, &opts)?.loss * self.scale * self.scale)
    }

    /// A random contiguous window of `batch_months` months.
    pub fn sample_batch(&mut self) -> Vec<usize> {
        let b = self.config.batch_months;
        let start = self.rng.random_range(0..=self.months.len() - b);
        self.months[start..start + b].to_vec()
    }

    fn trainable(&self) -> bool {
        self.cell.factors > 0 || self.cell.conditions > 0
    }

    /// Runs every epoch and returns the finished model.
    pub fn run(mut self) -> Result<TrainedModel> {
        let initial = self.full_loss()?;
        let mut curve = Vec::with_capacity(self.config.epochs);
        let steps = self.months.len().div_ceil(self.config.batch_months);
        for epoch in 0..self.config.epochs {
            if self.trainable() {
                let temperature = self.config.temperature(epoch);
                for _ in 0..steps {
                    let batch = self.sample_batch();
                    self.sgd_step(&batch, temperature)?;
                }
                curve.push(self.full_loss()?);
            } else {
                curve.push(initial);
            }
            log::debug!("cell {} seed {} epoch {epoch}: loss {}", self.cell, self.seed, curve[epoch]);
        }
        self.finish(initial, curve)
    }

    /// Refits the head on the hard-sort factors of the window and packages
    /// the model.
    pub fn finish(self, initial_loss: f64, loss_curve: Vec<f64>) -> Result<TrainedModel> {
        let mut model = TrainedModel {
            cell: self.cell,
            benchmark: self.benchmark,
            seed: self.seed,
            sort: self.config.sort.with_mode(crate::sorting::SortMode::Hard),
            network: self.params.network.clone(),
            scaler: self.scaler.clone(),
            coeffs: self.params.coeffs.clone(),
            conditional: self.params.condition_spec().map(|spec| ConditionalHead {
                spec,
                pairs: self.params.pairs.clone(),
            }),
            ensemble: None,
            initial_loss,
            loss_curve,
            final_train_loss: f64::NAN,
            fit_start: self.months[0],
            fit_end: self.months[self.months.len() - 1] + 1,
            degenerate_months: 0,
        };
        let ctx = Context {
            prep: self.prep,
            scaler: &self.scaler,
            scale: 1.0,
            benchmark: self.benchmark,
            log: self.log,
        };
        let hard = PassOptions {
            sort: SortPass::Hard,
            tau: self.config.sort,
            dropout: None,
            frozen: None,
            gradients: false,
        };
        let pass = evaluate(&model.stack(), &ctx, &self.months, &hard)?;
        if pass.degenerate > 0 {
            log::warn!(
                "cell {}: {} month-factor pairs had fewer than two eligible firms and were set to zero",
                self.cell,
                pass.degenerate
            );
        }
        model.degenerate_months = pass.degenerate;
        let f = pass.factors;
        let g = self.prep.benchmark_panel(self.benchmark, &self.months, self.log)?;
        let r = self.prep.portfolio_panel(&self.months, self.log);
        refit_head(&mut model, &r, &f, &g, &self.config, self.seed)?;
        let mut e = r.clone();
        e.add_scaled(&model.predict(&f, &g)?, -1.0)?;
        model.final_train_loss = e.as_slice().iter().map(|v| v * v).sum::<f64>() / e.as_slice().len() as f64;
        if !model.final_train_loss.is_finite() {
            return Err(Error::Numerical(format!("cell {}: non-finite final loss", self.cell)));
        }
        Ok(model)
    }
}

/// Least-squares (or ensemble) fit of the head on fixed factors. With
/// condition pairs the regressors are `[f; ReLU(Ã[f; g])]` and `g`, which
/// spans the same functions as the paired form without its built-in
/// collinearity; the result maps back to `β₊ = c`, `β₋ = 0`.
fn refit_head(model: &mut TrainedModel, r: &Matrix, f: &Matrix, g: &Matrix, config: &TrainConfig, seed: u64) -> Result<()> {
    let p = f.rows();
    let t = f.cols();
    let relu_features = match &model.conditional {
        Some(c) => {
            let s = c.spec.directions.matmul(&stack_factors(f, g)?)?;
            s.map(|v| v.max(0.0))
        }
        None => Matrix::zeros(0, t),
    };
    let pc = relu_features.rows();
    let extended = stack_factors(f, &relu_features)?;
    let fit = |x: &Matrix| -> Result<(PricingCoeffs, Option<EnsembleHead>)> {
        match config.head_fit {
            HeadFit::Ols => Ok((fit_ols(r, x, g)?, None)),
            HeadFit::Ensemble => {
                let ens = fit_ensemble(r, x, g, &config.ensemble, mix(seed, 3))?;
                Ok((ens.mean_coeffs(), Some(ens)))
            }
        }
    };
    let (coeffs, ensemble) = match fit(&extended) {
        Ok(fitted) => fitted,
        Err(Error::RankDeficient { column }) if pc > 0 => {
            log::warn!("cell {}: condition feature {column} is collinear, refitting without conditions", model.cell);
            model.conditional = None;
            fit(f)?
        }
        Err(e) => return Err(e),
    };
    model.coeffs = PricingCoeffs {
        beta: coeffs.beta.columns(0..p),
        gamma: coeffs.gamma,
    };
    if let Some(c) = model.conditional.as_mut() {
        c.pairs = PairCoeffs {
            plus: coeffs.beta.columns(p..p + pc),
            minus: Matrix::zeros(r.rows(), pc),
        };
    }
    model.ensemble = ensemble;
    if !model.coeffs.is_finite() {
        return Err(Error::Numerical(format!("cell {}: non-finite head coefficients", model.cell)));
    }
    Ok(())
}

/// Trains one grid cell on the months in `fit`.
pub fn train(
    prep: &Prepared<'_>,
    cell: CellSpec,
    benchmark: Benchmark,
    config: &TrainConfig,
    fit: Range<usize>,
    seed: u64,
    log: Option<&AccessLog>,
) -> Result<TrainedModel> {
    TrainingState::new(prep, cell, benchmark, config, fit, seed, log)?.run()
}
