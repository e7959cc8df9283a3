//! Firm-month panels, macro predictors, benchmark factors and test
//! portfolios, plus everything needed to get them into the network.

mod config;
mod input;
mod io;
mod normalize;
mod simulate;
mod split;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use config::KeyValueConfig;
pub use input::{build_input, InputTensor, MacroScaler};
pub use io::{
    load_panel, load_series, write_panel, write_series, DataPaths, LoadOptions, FIRMS_FILE,
    FACTORS_FILE, MACRO_FILE, PORTFOLIOS_FILE,
};
pub use normalize::rank_normalize;
pub use simulate::{simulate_market, GroundTruth, SimConfig, Simulation, TRUTH_FILE};
pub use split::{split, SampleSplit, SplitConfig};

/// Calendar month, formatted `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!("month {month} out of range")));
        }
        Ok(YearMonth { year, month })
    }

    /// Months since year 0, used for arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        YearMonth {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn succ(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }

    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected YYYY-MM date, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

/// One month of the firm panel. Column `j` of `chars` belongs to
/// `firm_ids[j]`; characteristics are lagged one month relative to
/// `returns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub firm_ids: Vec<String>,
    /// Excess returns over the month, decimal.
    pub returns: Vec<f64>,
    /// Lagged market equity, strictly positive.
    pub market_equity: Vec<f64>,
    /// K x M lagged characteristics; unobserved entries hold 0.
    pub chars: Matrix,
    /// K x M observation mask, row-major like `chars`.
    pub observed: Vec<bool>,
}

impl CrossSection {
    pub fn len(&self) -> usize {
        self.firm_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firm_ids.is_empty()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.rows()
    }

    #[inline]
    pub fn is_observed(&self, k: usize, j: usize) -> bool {
        self.observed[k * self.len() + j]
    }

    /// Firms that take part in security sorting: every characteristic that is
    /// observed for anyone this month must be observed for the firm.
    pub fn sort_eligible(&self) -> Vec<bool> {
        let m = self.len();
        let active: Vec<usize> = (0..self.num_chars())
            .filter(|&k| (0..m).any(|j| self.is_observed(k, j)))
            .collect();
        (0..m)
            .map(|j| active.iter().all(|&k| self.is_observed(k, j)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmPanel {
    pub char_names: Vec<String>,
    pub months: Vec<CrossSection>,
}

impl FirmPanel {
    pub fn num_chars(&self) -> usize {
        self.char_names.len()
    }
}

/// Lagged macro predictors, one row per month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSeries {
    pub names: Vec<String>,
    /// T x E.
    pub values: Matrix,
    /// `(month index, series index)` pairs that were forward-filled at load.
    pub filled: Vec<(usize, usize)>,
}

/// A fully observed monthly return panel: benchmark factors, test
/// portfolios, anomalies or holdout portfolios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub dates: Vec<YearMonth>,
    pub names: Vec<String>,
    /// T x N.
    pub values: Matrix,
}

impl ReturnSeries {
    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Keeps the first `n` columns.
    pub fn leading(&self, n: usize) -> Result<ReturnSeries> {
        if n > self.width() {
            return Err(Error::InvalidArgument(format!(
                "requested {n} series but only {} are available",
                self.width()
            )));
        }
        Ok(ReturnSeries {
            dates: self.dates.clone(),
            names: self.names[..n].to_vec(),
            values: self.values.columns(0..n),
        })
    }

    /// Restricts to the given dates, which must all be present.
    pub fn align_to(&self, dates: &[YearMonth]) -> Result<ReturnSeries> {
        let mut rows = Vec::with_capacity(dates.len());
        let mut cursor = 0;
        for d in dates {
            while cursor < self.dates.len() && self.dates[cursor] < *d {
                cursor += 1;
            }
            if cursor == self.dates.len() || self.dates[cursor] != *d {
                return Err(Error::Data(format!("series has no row for month {d}")));
            }
            rows.push(self.values.row(cursor).to_vec());
            cursor += 1;
        }
        let values = if rows.is_empty() {
            Matrix::zeros(0, self.width())
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(ReturnSeries {
            dates: dates.to_vec(),
            names: self.names.clone(),
            values,
        })
    }
}

/// Records which month indices a computation touched.
#[derive(Debug, Default)]
pub struct AccessLog {
    months: Mutex<BTreeSet<usize>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, month: usize) {
        self.months.lock().expect("access log poisoned").insert(month);
    }

    pub fn months(&self) -> BTreeSet<usize> {
        self.months.lock().expect("access log poisoned").clone()
    }
}

/// Aligned firm panel, macro predictors, benchmark factors and test
/// portfolios. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub dates: Vec<YearMonth>,
    pub firms: FirmPanel,
    pub macro_series: MacroSeries,
    pub factors: ReturnSeries,
    pub portfolios: ReturnSeries,
}

impl PanelDataset {
    pub fn num_months(&self) -> usize {
        self.dates.len()
    }

    pub fn num_chars(&self) -> usize {
        self.firms.num_chars()
    }

    pub fn num_macro(&self) -> usize {
        self.macro_series.names.len()
    }

    pub fn num_portfolios(&self) -> usize {
        self.portfolios.width()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.width()
    }

    pub fn month_index(&self, date: YearMonth) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Checks the cross-file invariants.
    pub fn validate(&self) -> Result<()> {
        let t = self.dates.len();
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("months must be strictly increasing".into()));
        }
        if self.firms.months.len() != t
            || self.macro_series.values.rows() != t
            || self.factors.values.rows() != t
            || self.portfolios.values.rows() != t
        {
            return Err(Error::Data("series lengths do not match the month count".into()));
        }
        for (cs, d) in self.firms.months.iter().zip(&self.dates) {
            if cs.num_chars() != self.num_chars() {
                return Err(Error::Data(format!("month {d}: characteristic count mismatch")));
            }
            if cs.market_equity.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Data(format!("month {d}: non-positive market equity")));
            }
            if cs.returns.iter().any(|r| !r.is_finite()) {
                return Err(Error::Data(format!("month {d}: non-finite return")));
            }
        }
        Ok(())
    }
}
