//! Out-of-sample R² against the historical average, alpha significance
//! counts and held-out portfolio dissection.

use serde::{Deserialize, Serialize};

use crate::data::{AccessLog, ReturnSeries, SampleSplit};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pricing::fit_ols;
use crate::stats::{alpha_rmse, alpha_tstat, is_significant, mean, oos_r_squared};
use crate::training::{Benchmark, Prepared, TrainedModel};

/// Expanding-mean forecast errors over an evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub alpha: Vec<f64>,
    pub rmse: f64,
    /// `N x T_eval` realized minus forecast.
    pub errors: Matrix,
}

/// Forecasts each asset's return at month `t` by its mean over
/// `history_start..t` and reports the resulting pricing errors. `returns`
/// is `N x T` over the whole sample. When a log is given it records the
/// months read to form forecasts.
pub fn historical_average_baseline_logged(
    returns: &Matrix,
    history_start: usize,
    eval: &[usize],
    log: Option<&AccessLog>,
) -> Result<Baseline> {
    if eval.is_empty() {
        return Err(Error::InvalidArgument("historical average needs a nonempty evaluation window".into()));
    }
    let n = returns.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("historical average needs at least one asset".into()));
    }
    let mut errors = Matrix::zeros(n, eval.len());
    for (s, &t) in eval.iter().enumerate() {
        if t <= history_start || t >= returns.cols() {
            return Err(Error::InvalidArgument(format!(
                "month {t} has no history after month {history_start} or lies outside the sample"
            )));
        }
        for h in history_start..t {
            if let Some(l) = log {
                l.record(h);
            }
        }
        let count = (t - history_start) as f64;
        for i in 0..n {
            let past: f64 = returns.row(i)[history_start..t].iter().sum();
            errors[(i, s)] = returns[(i, t)] - past / count;
        }
    }
    let alpha: Vec<f64> = (0..n).map(|i| mean(errors.row(i))).collect();
    let rmse = alpha_rmse(&alpha)?;
    Ok(Baseline { alpha, rmse, errors })
}

pub fn historical_average_baseline(returns: &Matrix, history_start: usize, eval: &[usize]) -> Result<Baseline> {
    historical_average_baseline_logged(returns, history_start, eval, None)
}

fn row_means(e: &Matrix) -> Vec<f64> {
    (0..e.rows()).map(|i| mean(e.row(i))).collect()
}

/// One row of the out-of-sample table with the alpha vectors it was
/// computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub ins_r2: f64,
    pub vld_r2: f64,
    pub test_r2: f64,
    pub vld_alpha: Vec<f64>,
    pub test_alpha: Vec<f64>,
    pub vld_baseline_alpha: Vec<f64>,
    pub test_baseline_alpha: Vec<f64>,
}

impl EvalRow {
    /// Recomputes the out-of-sample R² values from the stored alphas.
    pub fn recompute(&self) -> Result<(f64, f64)> {
        Ok((
            oos_r_squared(alpha_rmse(&self.vld_alpha)?, alpha_rmse(&self.vld_baseline_alpha)?)?,
            oos_r_squared(alpha_rmse(&self.test_alpha)?, alpha_rmse(&self.test_baseline_alpha)?)?,
        ))
    }
}

/// In-sample `1 - SSE / ΣR²` of a model over `months`.
pub fn in_sample_r2(model: &TrainedModel, prep: &Prepared<'_>, months: &[usize]) -> Result<f64> {
    let e = model.pricing_errors(prep, months, None)?;
    let r = prep.portfolio_panel(months, None);
    let sst: f64 = r.as_slice().iter().map(|v| v * v).sum();
    if sst == 0.0 {
        return Err(Error::DegenerateBenchmark);
    }
    Ok(1.0 - e.as_slice().iter().map(|v| v * v).sum::<f64>() / sst)
}

/// INS R² of the training fit on the training window, VLD R² of the same
/// model with frozen loadings, Test R² of the refit model. Out-of-sample
/// values are relative to the historical average.
pub fn evaluate_splits(
    label: &str,
    trained: &TrainedModel,
    refit: &TrainedModel,
    prep: &Prepared<'_>,
    split: &SampleSplit,
) -> Result<EvalRow> {
    if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument("every split window must be nonempty".into()));
    }
    let all = prep.portfolio_panel(&(0..prep.num_months()).collect::<Vec<_>>(), None);
    let vld = split.validation_months();
    let test = split.test_months();
    let vld_alpha = row_means(&trained.pricing_errors(prep, &vld, None)?);
    let test_alpha = row_means(&refit.pricing_errors(prep, &test, None)?);
    let vld_base = historical_average_baseline(&all, split.train.start, &vld)?;
    let test_base = historical_average_baseline(&all, split.train.start, &test)?;
    Ok(EvalRow {
        model: label.to_string(),
        ins_r2: in_sample_r2(trained, prep, &split.train_months())?,
        vld_r2: oos_r_squared(alpha_rmse(&vld_alpha)?, vld_base.rmse)?,
        test_r2: oos_r_squared(alpha_rmse(&test_alpha)?, test_base.rmse)?,
        vld_alpha,
        test_alpha,
        vld_baseline_alpha: vld_base.alpha,
        test_baseline_alpha: test_base.alpha,
    })
}

/// Number of residual series whose mean is significant at `|t| > 1.96`.
/// Series with fewer than two months are skipped and reported.
pub fn count_significant_residuals(residuals: &Matrix) -> Result<(usize, usize)> {
    if residuals.cols() < 2 {
        log::warn!("{} series have fewer than two months and were excluded", residuals.rows());
        return Ok((0, 0));
    }
    let mut count = 0;
    for i in 0..residuals.rows() {
        if is_significant(alpha_tstat(residuals.row(i))?) {
            count += 1;
        }
    }
    Ok((count, residuals.rows()))
}

/// Residuals of `assets` (`N_a x T` over the whole sample) on the model's
/// regressors: loadings by no-intercept OLS over `fit`, residuals over
/// `eval`.
pub fn factor_residuals(
    model: &TrainedModel,
    prep: &Prepared<'_>,
    assets: &Matrix,
    fit: &[usize],
    eval: &[usize],
) -> Result<Matrix> {
    let take = |months: &[usize]| -> Matrix {
        let mut out = Matrix::zeros(assets.rows(), months.len());
        for (s, &t) in months.iter().enumerate() {
            for i in 0..assets.rows() {
                out[(i, s)] = assets[(i, t)];
            }
        }
        out
    };
    let (x_fit, g_fit) = model.regressors(prep, fit, None)?;
    let coeffs = fit_ols(&take(fit), &x_fit, &g_fit)?;
    let (x, g) = model.regressors(prep, eval, None)?;
    let mut e = take(eval);
    e.add_scaled(&coeffs.predict_panel(&x, &g)?, -1.0)?;
    Ok(e)
}

/// Significant anomaly alphas over `eval` after controlling for the model's
/// factors, loadings fitted over `fit` (before the evaluation window).
pub fn count_significant(
    model: &TrainedModel,
    prep: &Prepared<'_>,
    anomalies: &Matrix,
    fit: &[usize],
    eval: &[usize],
) -> Result<usize> {
    if let (Some(&last_fit), Some(&first_eval)) = (fit.last(), eval.first()) {
        if last_fit >= first_eval && fit != eval {
            log::warn!("anomaly loadings are fitted on months that overlap the evaluation window");
        }
    }
    Ok(count_significant_residuals(&factor_residuals(model, prep, anomalies, fit, eval)?)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigRow {
    pub model: String,
    pub anomalies: usize,
    pub ins_sig: usize,
    pub vld_sig: usize,
    pub test_sig: usize,
}

/// Significance counts on train (training fit), validation (training
/// loadings) and test (refit model, loadings over train plus validation).
pub fn significance_row(
    label: &str,
    trained: &TrainedModel,
    refit: &TrainedModel,
    prep: &Prepared<'_>,
    split: &SampleSplit,
    anomalies: &ReturnSeries,
) -> Result<SigRow> {
    let a = anomalies.align_to(&prep.dataset.dates)?.values.transpose();
    let train = split.train_months();
    Ok(SigRow {
        model: label.to_string(),
        anomalies: a.rows(),
        ins_sig: count_significant(trained, prep, &a, &train, &train)?,
        vld_sig: count_significant(trained, prep, &a, &train, &split.validation_months())?,
        test_sig: count_significant(refit, prep, &a, &split.refit_months(), &split.test_months())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissectRow {
    pub set: String,
    pub model: String,
    pub vld_r2: f64,
    pub test_r2: f64,
}

/// Out-of-sample R² on portfolios the model never saw. The model and its
/// factors stay frozen; only the holdout loadings are fitted, by OLS over
/// the months before each evaluation window.
pub fn dissect_holdout(
    set: &str,
    label: &str,
    trained: &TrainedModel,
    refit: &TrainedModel,
    prep: &Prepared<'_>,
    split: &SampleSplit,
    holdout: &ReturnSeries,
) -> Result<DissectRow> {
    let h = holdout.align_to(&prep.dataset.dates)?.values.transpose();
    let p = &prep.dataset.portfolios.values;
    for i in 0..h.rows() {
        if (0..p.cols()).any(|c| (0..p.rows()).all(|t| p[(t, c)] == h[(i, t)])) {
            log::warn!("holdout series {} duplicates a training portfolio", holdout.names[i]);
        }
    }
    let r2 = |model: &TrainedModel, fit: &[usize], eval: &[usize]| -> Result<f64> {
        let e = factor_residuals(model, prep, &h, fit, eval)?;
        let base = historical_average_baseline(&h, split.train.start, eval)?;
        oos_r_squared(alpha_rmse(&row_means(&e))?, base.rmse)
    };
    Ok(DissectRow {
        set: set.to_string(),
        model: label.to_string(),
        vld_r2: r2(trained, &split.train_months(), &split.validation_months())?,
        test_r2: r2(refit, &split.refit_months(), &split.test_months())?,
    })
}

/// Mean squared error of the benchmark-only OLS fit over `months`.
pub fn benchmark_ols_loss(prep: &Prepared<'_>, benchmark: Benchmark, months: &[usize]) -> Result<f64> {
    let r = prep.portfolio_panel(months, None);
    let g = prep.benchmark_panel(benchmark, months, None)?;
    let f = Matrix::zeros(0, months.len());
    let mut e = r.clone();
    e.add_scaled(&fit_ols(&r, &f, &g)?.predict_panel(&f, &g)?, -1.0)?;
    Ok(e.as_slice().iter().map(|v| v * v).sum::<f64>() / e.as_slice().len() as f64)
}
