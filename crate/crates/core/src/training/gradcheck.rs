use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CrossSection, FirmPanel, MacroSeries, PanelDataset, ReturnSeries};
use crate::error::{Error, Result};
use crate::sorting::SortMode;

use super::context::Prepared;
use super::fit::TrainingState;
use super::objective::{evaluate, PassOptions, SortPass};
use super::{Benchmark, CellSpec, TrainConfig};

const STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero are judged by absolute error.
const FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckStatus {
    Checked,
    NonDifferentiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub status: GradCheckStatus,
    pub parameters: usize,
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-7)`.
    pub max_relative_error: Option<f64>,
    pub worst_parameter: Option<usize>,
}

/// Compares the analytic gradient of the full stack with central finite
/// differences over every parameter. Uses all months of `prep`, dropout
/// off, the soft sort at the starting temperature and thresholds frozen at
/// the unperturbed scores. Head coefficients are perturbed at random first.
pub fn gradient_check_full(
    prep: &Prepared<'_>,
    cell: CellSpec,
    benchmark: Benchmark,
    config: &TrainConfig,
    seed: u64,
) -> Result<GradCheck> {
    if config.sort.mode != SortMode::Soft {
        return Ok(GradCheck {
            status: GradCheckStatus::NonDifferentiable,
            parameters: 0,
            max_relative_error: None,
            worst_parameter: None,
        });
    }
    let months = prep.num_months();
    let mut cfg = config.clone();
    cfg.batch_months = months;
    let mut state = TrainingState::new(prep, cell, benchmark, &cfg, 0..months, seed, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    {
        let params = state.params_mut();
        for v in params.pairs.plus.as_mut_slice().iter_mut().chain(params.pairs.minus.as_mut_slice()) {
            *v = rng.random_range(-0.5..0.5);
        }
        // Move off the OLS warm start, where the gamma gradient vanishes.
        for v in params.coeffs.gamma.as_mut_slice() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let opts = |frozen, gradients| PassOptions {
        sort: SortPass::Soft {
            temperature: cfg.temperature_start,
        },
        tau: cfg.sort,
        dropout: None,
        frozen,
        gradients,
    };
    let all: Vec<usize> = (0..months).collect();
    let ctx = state.context();
    let base = evaluate(state.params(), &ctx, &all, &opts(None, true))?;
    let analytic = base.grads.expect("gradients requested").values();
    let frozen = base.thresholds;
    let values = state.params().values();
    let mut probe = state.params().clone();
    let mut worst = (0.0f64, None);
    for (i, &a) in analytic.iter().enumerate() {
        let mut v = values.clone();
        v[i] = values[i] + STEP;
        probe.set_values(&v);
        let up = evaluate(&probe, &ctx, &all, &opts(Some(&frozen), false))?.loss;
        v[i] = values[i] - STEP;
        probe.set_values(&v);
        let down = evaluate(&probe, &ctx, &all, &opts(Some(&frozen), false))?.loss;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        if !rel.is_finite() {
            return Err(Error::Numerical(format!("gradient check produced a non-finite error at parameter {i}")));
        }
        if rel > worst.0 || worst.1.is_none() {
            worst = (rel, Some(i));
        }
    }
    Ok(GradCheck {
        status: GradCheckStatus::Checked,
        parameters: analytic.len(),
        max_relative_error: Some(worst.0),
        worst_parameter: worst.1,
    })
}

/// The first `months` months, the first `firms` firms of each month and the
/// first `portfolios` test portfolios. Used to build tiny fixtures for
/// gradient checks.
pub fn shrink_dataset(dataset: &PanelDataset, months: usize, firms: usize, portfolios: usize) -> Result<PanelDataset> {
    if months == 0 || months > dataset.num_months() {
        return Err(Error::InvalidArgument(format!("cannot keep {months} of {} months", dataset.num_months())));
    }
    if portfolios == 0 || portfolios > dataset.num_portfolios() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {portfolios} of {} portfolios",
            dataset.num_portfolios()
        )));
    }
    let take_series = |s: &ReturnSeries, width: usize| ReturnSeries {
        dates: s.dates[..months].to_vec(),
        names: s.names[..width].to_vec(),
        values: s.values.columns(0..width).transpose().columns(0..months).transpose(),
    };
    let sections = dataset.firms.months[..months]
        .iter()
        .map(|cs| {
            let m = firms.min(cs.len());
            let k = cs.num_chars();
            let idx: Vec<usize> = (0..m).collect();
            let mut observed = Vec::with_capacity(k * m);
            for kk in 0..k {
                observed.extend((0..m).map(|j| cs.is_observed(kk, j)));
            }
            CrossSection {
                firm_ids: cs.firm_ids[..m].to_vec(),
                returns: cs.returns[..m].to_vec(),
                market_equity: cs.market_equity[..m].to_vec(),
                chars: cs.chars.select_columns(&idx),
                observed,
            }
        })
        .collect();
    let out = PanelDataset {
        dates: dataset.dates[..months].to_vec(),
        firms: FirmPanel {
            char_names: dataset.firms.char_names.clone(),
            months: sections,
        },
        macro_series: MacroSeries {
            names: dataset.macro_series.names.clone(),
            values: dataset.macro_series.values.transpose().columns(0..months).transpose(),
            filled: dataset.macro_series.filled.iter().copied().filter(|(t, _)| *t < months).collect(),
        },
        factors: take_series(&dataset.factors, dataset.num_factors()),
        portfolios: take_series(&dataset.portfolios, portfolios),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_market, SimConfig};
    use crate::net::Activation;

    fn tiny() -> PanelDataset {
        let sim = simulate_market(&SimConfig {
            firms: 30,
            months: 12,
            missing: 0.0,
            seed: 4,
            ..SimConfig::default()
        })
        .unwrap();
        shrink_dataset(&sim.dataset, 12, 8, 3).unwrap()
    }

    fn check(activation: Activation, cell: CellSpec) -> GradCheck {
        let ds = tiny();
        let prep = Prepared::new(&ds).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.activation = activation;
        cfg.p_keep = 1.0;
        gradient_check_full(&prep, cell, Benchmark::Capm, &cfg, 3).unwrap()
    }

    #[test]
    fn two_layer_soft_stack() {
        for conditions in 0..=2 {
            let g = check(Activation::Tanh, CellSpec { layers: 2, factors: 2, conditions });
            assert_eq!(g.status, GradCheckStatus::Checked);
            assert!(g.max_relative_error.unwrap() < 1e-4, "{g:?}");
        }
    }

    #[test]
    fn linear_stack() {
        // No deep factors and no conditions: the loss is quadratic in gamma.
        let g = check(Activation::Identity, CellSpec { layers: 1, factors: 0, conditions: 0 });
        assert_eq!(g.parameters, 3);
        assert!(g.max_relative_error.unwrap() < 1e-8, "{g:?}");
    }

    #[test]
    fn identity_network_soft_stack() {
        let g = check(Activation::Identity, CellSpec { layers: 2, factors: 1, conditions: 1 });
        assert!(g.max_relative_error.unwrap() < 1e-4, "{g:?}");
    }

    #[test]
    fn hard_sort_is_not_differentiable() {
        let ds = tiny();
        let prep = Prepared::new(&ds).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.sort.mode = SortMode::StraightThrough;
        let g = gradient_check_full(&prep, CellSpec { layers: 1, factors: 1, conditions: 0 }, Benchmark::Capm, &cfg, 1).unwrap();
        assert_eq!(g.status, GradCheckStatus::NonDifferentiable);
        assert!(g.max_relative_error.is_none());
    }
}
