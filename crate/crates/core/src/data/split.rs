use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::YearMonth;

/// Train, validation and test month index ranges, contiguous and ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SampleSplit {
    pub fn train_months(&self) -> Vec<usize> {
        self.train.clone().collect()
    }

    pub fn validation_months(&self) -> Vec<usize> {
        self.validation.clone().collect()
    }

    pub fn test_months(&self) -> Vec<usize> {
        self.test.clone().collect()
    }

    /// Train followed by validation, the window used for the final refit.
    pub fn refit_months(&self) -> Vec<usize> {
        (self.train.start..self.validation.end).collect()
    }

    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitConfig {
    /// Proportional split of the whole sample; the test window takes the
    /// remainder.
    Fractions { train: f64, validation: f64 },
    /// Partition of the whole sample at the given inclusive end months.
    Boundaries {
        train_end: YearMonth,
        validation_end: YearMonth,
    },
    /// Three explicit inclusive windows that must tile a contiguous span.
    Explicit {
        train: (YearMonth, YearMonth),
        validation: (YearMonth, YearMonth),
        test: (YearMonth, YearMonth),
    },
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Fractions {
            train: 0.6,
            validation: 0.2,
        }
    }
}

fn position(dates: &[YearMonth], d: YearMonth, what: &str) -> Result<usize> {
    dates
        .binary_search(&d)
        .map_err(|_| Error::InvalidArgument(format!("{what} {d} is not a sample month")))
}

/// Splits the sample months into train, validation and test windows.
pub fn split(dates: &[YearMonth], config: &SplitConfig) -> Result<SampleSplit> {
    let t = dates.len();
    let out = match *config {
        SplitConfig::Fractions { train, validation } => {
            if !(train > 0.0 && validation > 0.0 && train + validation < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "split fractions must be positive and sum below 1, got {train} and {validation}"
                )));
            }
            let n_train = (train * t as f64).floor() as usize;
            let n_val = (validation * t as f64).floor() as usize;
            SampleSplit {
                train: 0..n_train,
                validation: n_train..n_train + n_val,
                test: n_train + n_val..t,
            }
        }
        SplitConfig::Boundaries {
            train_end,
            validation_end,
        } => {
            if validation_end <= train_end {
                return Err(Error::InvalidArgument(format!(
                    "validation end {validation_end} must follow train end {train_end}"
                )));
            }
            let a = dates.partition_point(|d| *d <= train_end);
            let b = dates.partition_point(|d| *d <= validation_end);
            SampleSplit {
                train: 0..a,
                validation: a..b,
                test: b..t,
            }
        }
        SplitConfig::Explicit {
            train,
            validation,
            test,
        } => {
            for (name, (s, e)) in [("train", train), ("validation", validation), ("test", test)] {
                if e < s {
                    return Err(Error::InvalidArgument(format!("{name} window ends before it starts")));
                }
            }
            if validation.0 <= train.1 || test.0 <= validation.1 {
                return Err(Error::InvalidArgument(
                    "windows overlap: each window must start after the previous one ends".into(),
                ));
            }
            if validation.0 != train.1.succ() || test.0 != validation.1.succ() {
                return Err(Error::InvalidArgument("windows must be adjacent with no gap".into()));
            }
            let ts = position(dates, train.0, "train start")?;
            let te = position(dates, train.1, "train end")?;
            let vs = position(dates, validation.0, "validation start")?;
            let ve = position(dates, validation.1, "validation end")?;
            let ss = position(dates, test.0, "test start")?;
            let se = position(dates, test.1, "test end")?;
            debug_assert!(te + 1 == vs && ve + 1 == ss);
            SampleSplit {
                train: ts..te + 1,
                validation: vs..ve + 1,
                test: ss..se + 1,
            }
        }
    };
    if out.train.is_empty() || out.validation.is_empty() || out.test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty split: train {}, validation {}, test {} months",
            out.train.len(),
            out.validation.len(),
            out.test.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monthly(start: &str, n: usize) -> Vec<YearMonth> {
        let s: YearMonth = start.parse().unwrap();
        (0..n).map(|i| s.add_months(i as i64)).collect()
    }

    #[test]
    fn calendar_boundaries() {
        let dates = monthly("1975-01", 43 * 12);
        let sp = split(
            &dates,
            &SplitConfig::Boundaries {
                train_end: "2002-12".parse().unwrap(),
                validation_end: "2010-12".parse().unwrap(),
            },
        )
        .unwrap();
        assert_eq!(sp.lengths(), (336, 96, 84));
    }

    #[test]
    fn proportional() {
        let dates = monthly("1990-01", 300);
        let sp = split(&dates, &SplitConfig::default()).unwrap();
        assert_eq!(sp.lengths(), (180, 60, 60));
        assert_eq!(sp.refit_months().len(), 240);
    }

    #[test]
    fn explicit_overlap_rejected() {
        let dates = monthly("2000-01", 36);
        let ym = |s: &str| s.parse::<YearMonth>().unwrap();
        let cfg = SplitConfig::Explicit {
            train: (ym("2000-01"), ym("2000-12")),
            validation: (ym("2001-01"), ym("2001-12")),
            test: (ym("2001-12"), ym("2002-12")),
        };
        assert!(split(&dates, &cfg).is_err());
        let ok = SplitConfig::Explicit {
            train: (ym("2000-01"), ym("2000-12")),
            validation: (ym("2001-01"), ym("2001-12")),
            test: (ym("2002-01"), ym("2002-12")),
        };
        assert_eq!(split(&dates, &ok).unwrap().lengths(), (12, 12, 12));
    }

    #[test]
    fn empty_window_rejected() {
        let dates = monthly("2000-01", 24);
        let cfg = SplitConfig::Boundaries {
            train_end: "2000-12".parse().unwrap(),
            validation_end: "2003-12".parse().unwrap(),
        };
        assert!(split(&dates, &cfg).is_err());
    }

    #[test]
    fn windows_partition_the_sample() {
        for n in [10usize, 57, 300] {
            let dates = monthly("2000-01", n);
            let sp = split(&dates, &SplitConfig::Fractions { train: 0.5, validation: 0.3 }).unwrap();
            assert_eq!(sp.train.start, 0);
            assert_eq!(sp.train.end, sp.validation.start);
            assert_eq!(sp.validation.end, sp.test.start);
            assert_eq!(sp.test.end, n);
        }
    }
}
