use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::MacroSeries;

/// Network input for one month: `K + E + K*E` rows by `M` firm columns.
///
/// Row layout: the K characteristics, then the E macro predictors
/// (identical in every column), then the products `z_k * x_e` at row
/// `K + E + e*K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub z0: Matrix,
    /// Row-major like `z0`; false entries are exactly zero in `z0`.
    pub mask: Vec<bool>,
}

impl InputTensor {
    pub fn input_rows(num_chars: usize, num_macro: usize) -> usize {
        num_chars + num_macro + num_chars * num_macro
    }
}

/// Builds the interaction input from normalized characteristics (K x M,
/// with mask) and standardized macro predictors.
pub fn build_input(chars: &Matrix, observed: &[bool], macro_x: &[f64]) -> Result<InputTensor> {
    let (k, m) = chars.shape();
    if observed.len() != k * m {
        return Err(Error::dim("build_input mask", k * m, observed.len()));
    }
    let e = macro_x.len();
    let rows = InputTensor::input_rows(k, e);
    let mut z0 = Matrix::zeros(rows, m);
    let mut mask = vec![true; rows * m];
    for kk in 0..k {
        for j in 0..m {
            if observed[kk * m + j] {
                z0[(kk, j)] = chars[(kk, j)];
            } else {
                mask[kk * m + j] = false;
            }
        }
    }
    for (ee, &x) in macro_x.iter().enumerate() {
        z0.row_mut(k + ee).iter_mut().for_each(|v| *v = x);
    }
    for (ee, &x) in macro_x.iter().enumerate() {
        for kk in 0..k {
            let r = k + e + ee * k + kk;
            for j in 0..m {
                if observed[kk * m + j] {
                    z0[(r, j)] = chars[(kk, j)] * x;
                } else {
                    mask[r * m + j] = false;
                }
            }
        }
    }
    Ok(InputTensor { z0, mask })
}

/// Z-scores macro predictors with statistics from a fitting window and
/// clips them to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MacroScaler {
    pub fn fit(series: &MacroSeries, months: &[usize]) -> Result<MacroScaler> {
        if months.is_empty() {
            return Err(Error::InvalidArgument("macro scaler needs at least one month".into()));
        }
        let e = series.values.cols();
        let mut mean = vec![0.0; e];
        let mut std = vec![0.0; e];
        for c in 0..e {
            let xs: Vec<f64> = months.iter().map(|&t| series.values[(t, c)]).collect();
            mean[c] = crate::stats::mean(&xs);
            std[c] = crate::stats::population_std(&xs);
        }
        Ok(MacroScaler { mean, std })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { ((v - m) / s).clamp(-1.0, 1.0) } else { 0.0 })
            .collect()
    }
}
