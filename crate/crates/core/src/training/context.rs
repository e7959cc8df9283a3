//! Month-level access to a prepared dataset.

use crate::data::{build_input, rank_normalize, AccessLog, FirmPanel, InputTensor, MacroScaler, PanelDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::Benchmark;

/// A dataset with rank-normalized characteristics and per-month sort
/// eligibility. Built once and shared by every grid cell.
#[derive(Debug)]
pub struct Prepared<'a> {
    pub dataset: &'a PanelDataset,
    normalized: FirmPanel,
    eligible: Vec<Vec<bool>>,
}

impl<'a> Prepared<'a> {
    pub fn new(dataset: &'a PanelDataset) -> Result<Self> {
        dataset.validate()?;
        if dataset.num_months() == 0 {
            return Err(Error::Data("dataset has no months".into()));
        }
        let normalized = rank_normalize(&dataset.firms);
        let eligible = normalized.months.iter().map(|cs| cs.sort_eligible()).collect();
        Ok(Prepared {
            dataset,
            normalized,
            eligible,
        })
    }

    pub fn num_months(&self) -> usize {
        self.dataset.num_months()
    }

    pub fn input_rows(&self) -> usize {
        InputTensor::input_rows(self.dataset.num_chars(), self.dataset.num_macro())
    }

    /// `N x T` test-portfolio returns for the given months.
    pub fn portfolio_panel(&self, months: &[usize], log: Option<&AccessLog>) -> Matrix {
        let v = &self.dataset.portfolios.values;
        let mut out = Matrix::zeros(v.cols(), months.len());
        for (s, &t) in months.iter().enumerate() {
            record(log, t);
            for i in 0..v.cols() {
                out[(i, s)] = v[(t, i)];
            }
        }
        out
    }

    /// `D x T` benchmark factor returns.
    pub fn benchmark_panel(&self, benchmark: Benchmark, months: &[usize], log: Option<&AccessLog>) -> Result<Matrix> {
        let d = benchmark.num_factors();
        let v = &self.dataset.factors.values;
        if v.cols() < d {
            return Err(Error::Data(format!(
                "{} needs {d} benchmark factors, the factor file has {}",
                benchmark.label(),
                v.cols()
            )));
        }
        let mut out = Matrix::zeros(d, months.len());
        for (s, &t) in months.iter().enumerate() {
            record(log, t);
            for k in 0..d {
                out[(k, s)] = v[(t, k)];
            }
        }
        Ok(out)
    }
}

pub(crate) fn record(log: Option<&AccessLog>, t: usize) {
    if let Some(l) = log {
        l.record(t);
    }
}

/// Everything the sort needs for one month. Characteristics and macro
/// values stored at month `t` are already lagged, so nothing here reads
/// beyond `t`.
pub(crate) struct MonthData {
    pub input: Matrix,
    pub eligible: Vec<bool>,
    pub market_equity: Vec<f64>,
    /// Firm returns divided by the context scale.
    pub returns: Vec<f64>,
}

/// A prepared dataset seen through one fitting window's macro scaler and
/// return scale.
pub(crate) struct Context<'p, 'a> {
    pub prep: &'p Prepared<'a>,
    pub scaler: &'p MacroScaler,
    pub scale: f64,
    pub benchmark: Benchmark,
    pub log: Option<&'p AccessLog>,
}

impl Context<'_, '_> {
    pub fn month(&self, t: usize) -> Result<MonthData> {
        record(self.log, t);
        let cs = &self.prep.normalized.months[t];
        let x = self.scaler.transform(self.prep.dataset.macro_series.values.row(t));
        let input = build_input(&cs.chars, &cs.observed, &x)?.z0;
        Ok(MonthData {
            input,
            eligible: self.prep.eligible[t].clone(),
            market_equity: cs.market_equity.clone(),
            returns: cs.returns.iter().map(|r| r / self.scale).collect(),
        })
    }
}
