//! Ranking, time-series statistics and the pricing-error metrics.
//!
//! Every reduction sums left to right so results are reproducible bit for
//! bit across runs and thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 5% critical value used for alpha significance.
pub const SIGNIFICANCE_THRESHOLD: f64 = 1.96;

/// Stable ascending ranks in `1..=M`; ties go to the lower index first.
pub fn rank_ascending(values: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite value at index {i} cannot be ranked"
        )));
    }
    let order = argsort(values);
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

/// Indices that sort `values` ascending, ties by index. Values must be
/// finite.
pub(crate) fn argsort(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the `1/T` normalization.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::dim("correlation", a.len(), b.len()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("correlation of a constant series".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Root mean squared pricing error across assets.
pub fn alpha_rmse(alphas: &[f64]) -> Result<f64> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("alpha RMSE of an empty vector".into()));
    }
    Ok((alphas.iter().map(|a| a * a).sum::<f64>() / alphas.len() as f64).sqrt())
}

/// Out-of-sample R² of a model relative to the historical average:
/// `1 - rmse_model² / rmse_avg²`. Negative when the model does worse.
pub fn oos_r_squared(rmse_model: f64, rmse_avg: f64) -> Result<f64> {
    if rmse_avg == 0.0 {
        return Err(Error::DegenerateBenchmark);
    }
    if !(rmse_avg.is_finite() && rmse_model.is_finite()) || rmse_avg < 0.0 || rmse_model < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "RMSE values must be finite and non-negative, got {rmse_model} and {rmse_avg}"
        )));
    }
    let ratio = rmse_model / rmse_avg;
    Ok(1.0 - ratio * ratio)
}

/// t-statistic of a residual mean, `sqrt(T) * mean / std` with the `1/T`
/// standard deviation.
pub fn alpha_tstat(residuals: &[f64]) -> Result<f64> {
    let t = residuals.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-statistic needs at least 2 observations, got {t}"
        )));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite residual".into()));
    }
    let m = mean(residuals);
    let sd = population_std(residuals);
    if sd == 0.0 {
        if m == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::DegenerateResiduals);
    }
    Ok((t as f64).sqrt() * m / sd)
}

pub fn is_significant(tstat: f64) -> bool {
    tstat.abs() > SIGNIFICANCE_THRESHOLD
}

/// Per-asset mean pricing errors with their t-statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    pub alpha: Vec<f64>,
    pub tstat: Vec<f64>,
    pub rmse: f64,
}

impl AlphaStats {
    /// Builds the statistics from per-asset residual series (one row per
    /// asset, one column per month).
    pub fn from_residuals(residuals: &crate::linalg::Matrix) -> Result<AlphaStats> {
        let mut alpha = Vec::with_capacity(residuals.rows());
        let mut tstat = Vec::with_capacity(residuals.rows());
        for i in 0..residuals.rows() {
            let row = residuals.row(i);
            alpha.push(mean(row));
            tstat.push(alpha_tstat(row)?);
        }
        let rmse = alpha_rmse(&alpha)?;
        Ok(AlphaStats { alpha, tstat, rmse })
    }

    pub fn significant_count(&self) -> usize {
        self.tstat.iter().filter(|t| is_significant(**t)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranks_simple() {
        assert_eq!(rank_ascending(&[3.0, 1.0, 2.0]).unwrap(), vec![3, 1, 2]);
        assert_eq!(rank_ascending(&[5.0, 5.0]).unwrap(), vec![1, 2]);
    }

    #[test]
    fn rank_rejects_nan_with_index() {
        let err = rank_ascending(&[1.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("index 1"));
    }

    /// Count-based oracle: rank = 1 + #smaller + #equal-with-lower-index.
    fn rank_oracle(v: &[f64]) -> Vec<usize> {
        (0..v.len())
            .map(|i| {
                1 + (0..v.len())
                    .filter(|&j| v[j] < v[i] || (v[j] == v[i] && j < i))
                    .count()
            })
            .collect()
    }

    #[test]
    fn ranks_match_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let m = rng.random_range(1..60);
            let v: Vec<f64> = (0..m).map(|_| (rng.random_range(0..20) as f64) * 0.5).collect();
            assert_eq!(rank_ascending(&v).unwrap(), rank_oracle(&v));
        }
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(alpha_rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let r = alpha_rmse(&[0.3, -0.4]).unwrap();
        assert!((r - (0.125f64).sqrt()).abs() < 1e-15);
        assert!(alpha_rmse(&[]).is_err());
    }

    #[test]
    fn r_squared_cases() {
        assert_eq!(oos_r_squared(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(oos_r_squared(2.0, 2.0).unwrap(), 0.0);
        assert!(oos_r_squared(3.0, 2.0).unwrap() < 0.0);
        assert!(matches!(oos_r_squared(1.0, 0.0), Err(Error::DegenerateBenchmark)));
    }

    #[test]
    fn tstat_cases() {
        assert!(matches!(alpha_tstat(&[0.5; 6]), Err(Error::DegenerateResiduals)));
        assert_eq!(alpha_tstat(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 0.0);
        // 100 draws alternating 0.2 +- 1 have mean 0.2 and 1/T std exactly 1.
        let series: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.2 } else { -0.8 })
            .collect();
        let t = alpha_tstat(&series).unwrap();
        assert!((t - 2.0).abs() < 1e-12, "t = {t}");
        assert!(is_significant(t));
        assert!(alpha_tstat(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn ranks_are_a_bijection(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let mut r = rank_ascending(&v).unwrap();
            r.sort_unstable();
            prop_assert_eq!(r, (1..=v.len()).collect::<Vec<_>>());
        }

        #[test]
        fn rmse_permutation_and_scale(
            v in proptest::collection::vec(-1.0f64..1.0, 1..50),
            c in -10.0f64..10.0,
        ) {
            let base = alpha_rmse(&v).unwrap();
            let mut rev = v.clone();
            rev.reverse();
            prop_assert!((alpha_rmse(&rev).unwrap() - base).abs() <= 1e-12);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((alpha_rmse(&scaled).unwrap() - c.abs() * base).abs() <= 1e-12 * (1.0 + c.abs()));
        }

        #[test]
        fn r_squared_identity(a in 0.0f64..5.0, b in 0.01f64..5.0) {
            let r2 = oos_r_squared(a, b).unwrap();
            prop_assert!((r2 + (a / b).powi(2) - 1.0).abs() <= 1e-12 * (1.0 + (a / b).powi(2)));
        }

        #[test]
        fn tstat_reversal_invariant(v in proptest::collection::vec(-1.0f64..1.0, 2..80)) {
            prop_assume!(population_std(&v) > 1e-9);
            let mut rev = v.clone();
            rev.reverse();
            let (a, b) = (alpha_tstat(&v).unwrap(), alpha_tstat(&rev).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
