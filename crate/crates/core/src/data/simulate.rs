//! Synthetic markets with planted characteristic-driven factors.
//!
//! Each firm carries AR(1) latent characteristics. Every month the
//! cross-section is bucketed into quintiles on characteristic 1 and, within
//! those, on characteristic 2. Loadings on planted factor 1 are set by the
//! first bucket, loadings on planted factor 2 (and the market-beta tilt) by
//! the second, so the 5 x 5 dependent-sort test portfolios have constant
//! exposures and are spanned exactly by the market and planted factors
//! when idiosyncratic noise is zero. Planted factors beyond the second load
//! on unconditional quintiles of their own characteristic.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sorting::{sort_hard, weights_h2, SortMode, SortSpec};
use crate::stats::argsort;

use super::config::KeyValueConfig;
use super::{CrossSection, FirmPanel, MacroSeries, PanelDataset, ReturnSeries, YearMonth};

pub const TRUTH_FILE: &str = "truth.csv";

const KEYS: &[&str] = &[
    "firms",
    "months",
    "chars",
    "macros",
    "true_factors",
    "noise",
    "seed",
    "start",
    "factor_mean",
    "factor_vol",
    "market_mean",
    "market_vol",
    "persistence",
    "macro_persistence",
    "missing",
];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub firms: usize,
    pub months: usize,
    pub chars: usize,
    pub macros: usize,
    pub true_factors: usize,
    /// Idiosyncratic monthly return volatility.
    pub noise: f64,
    pub seed: u64,
    pub start: YearMonth,
    pub factor_mean: f64,
    pub factor_vol: f64,
    pub market_mean: f64,
    pub market_vol: f64,
    /// AR(1) coefficient of the latent characteristics.
    pub persistence: f64,
    pub macro_persistence: f64,
    /// Probability that characteristics 3 and up are missing for a firm-month.
    pub missing: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            firms: 200,
            months: 360,
            chars: 4,
            macros: 2,
            true_factors: 1,
            noise: 0.06,
            seed: 1,
            start: YearMonth { year: 1990, month: 1 },
            factor_mean: 0.01,
            factor_vol: 0.03,
            market_mean: 0.006,
            market_vol: 0.045,
            persistence: 0.95,
            macro_persistence: 0.9,
            missing: 0.02,
        }
    }
}

impl SimConfig {
    /// Reads the documented keys; anything absent keeps its default.
    pub fn from_kv(kv: &KeyValueConfig) -> Result<Self> {
        kv.ensure_known(KEYS)?;
        let mut c = SimConfig::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.get(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        take!(firms);
        take!(months);
        take!(chars);
        take!(macros);
        take!(true_factors);
        take!(noise);
        take!(seed);
        take!(start);
        take!(factor_mean);
        take!(factor_vol);
        take!(market_mean);
        take!(market_vol);
        take!(persistence);
        take!(macro_persistence);
        take!(missing);
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValueConfig {
        let mut kv = KeyValueConfig::default();
        kv.set("firms", self.firms);
        kv.set("months", self.months);
        kv.set("chars", self.chars);
        kv.set("macros", self.macros);
        kv.set("true_factors", self.true_factors);
        kv.set("noise", self.noise);
        kv.set("seed", self.seed);
        kv.set("start", self.start);
        kv.set("factor_mean", self.factor_mean);
        kv.set("factor_vol", self.factor_vol);
        kv.set("market_mean", self.market_mean);
        kv.set("market_vol", self.market_vol);
        kv.set("persistence", self.persistence);
        kv.set("macro_persistence", self.macro_persistence);
        kv.set("missing", self.missing);
        kv
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("firms", self.firms),
            ("months", self.months),
            ("chars", self.chars),
            ("macros", self.macros),
            ("true_factors", self.true_factors),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.firms < 25 {
            return Err(Error::InvalidArgument("at least 25 firms are needed for a 5 x 5 grid".into()));
        }
        if self.chars < 2 {
            return Err(Error::InvalidArgument("at least 2 characteristics are needed".into()));
        }
        if self.true_factors > self.chars {
            return Err(Error::InvalidArgument("true_factors cannot exceed chars".into()));
        }
        if !(self.noise >= 0.0 && self.factor_vol >= 0.0 && self.market_vol >= 0.0) {
            return Err(Error::InvalidArgument("volatilities must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.persistence.abs()) || !(0.0..1.0).contains(&self.macro_persistence.abs()) {
            return Err(Error::InvalidArgument("persistence must lie in (-1, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.missing) {
            return Err(Error::InvalidArgument("missing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// What the simulator knows and the data does not show.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Columns: `mkt`, then `f1..fk` planted factor returns.
    pub factor_returns: ReturnSeries,
    /// Test-portfolio exposures (N x (1 + k)) on market and planted factors.
    pub portfolio_loadings: Matrix,
    /// 5 x 5 dependent sorts on characteristics outside the test grid.
    pub holdout: ReturnSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: PanelDataset,
    pub truth: GroundTruth,
}

struct Firm {
    id: String,
    latent: Vec<f64>,
    me: f64,
    end: usize,
}

fn level(bucket: usize) -> f64 {
    (bucket as f64 - 2.0) / 2.0
}

fn raw_char(k: usize, s: f64) -> f64 {
    match k % 3 {
        0 => s,
        1 => s.exp(),
        _ => s + s * s * s / 3.0,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Quintile (0..5) of each entry of `values`, ties by index.
fn quintiles(values: &[f64]) -> Vec<usize> {
    let m = values.len();
    let mut b = vec![0; m];
    for (r, &j) in argsort(values).iter().enumerate() {
        b[j] = r * 5 / m;
    }
    b
}

/// Quintiles on `first`, then quintiles on `second` within each.
fn dependent_sort(first: &[f64], second: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let b1 = quintiles(first);
    let mut b2 = vec![0; first.len()];
    for q in 0..5 {
        let members: Vec<usize> = (0..first.len()).filter(|&j| b1[j] == q).collect();
        let vals: Vec<f64> = members.iter().map(|&j| second[j]).collect();
        for (pos, b) in quintiles(&vals).into_iter().enumerate() {
            b2[members[pos]] = b;
        }
    }
    (b1, b2)
}

fn grid_returns(b1: &[usize], b2: &[usize], me: &[f64], r: &[f64]) -> Vec<f64> {
    let mut num = [0.0; 25];
    let mut den = vec![0.0; 25];
    for j in 0..r.len() {
        let c = b1[j] * 5 + b2[j];
        num[c] += me[j] * r[j];
        den[c] += me[j];
    }
    num.iter().zip(&den).map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 }).collect()
}

fn grid_names(prefix: &str) -> Vec<String> {
    (0..25).map(|c| format!("{prefix}{}{}", c / 5 + 1, c % 5 + 1)).collect()
}

/// Generates a synthetic panel. Deterministic in `config.seed`.
pub fn simulate_market(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n_firms, t_len, k, e, kf) = (config.firms, config.months, config.chars, config.macros, config.true_factors);
    let innovation = (1.0 - config.persistence * config.persistence).sqrt();
    let macro_innovation = (1.0 - config.macro_persistence * config.macro_persistence).sqrt();

    let lifetime = |rng: &mut ChaCha8Rng, start: usize| -> usize {
        let end = start + rng.random_range(36..=240usize);
        if end + 24 > t_len {
            t_len
        } else {
            end
        }
    };
    let mut generations = vec![0usize; n_firms];
    let mut firms: Vec<Firm> = (0..n_firms)
        .map(|slot| Firm {
            id: format!("F{slot:04}_0"),
            latent: (0..k).map(|_| normal(&mut rng)).collect(),
            me: (5.0 + 1.5 * normal(&mut rng)).exp(),
            end: lifetime(&mut rng, 0),
        })
        .collect();
    let mut macro_state: Vec<f64> = (0..e).map(|_| normal(&mut rng)).collect();

    // Benchmark long-short factors sort on characteristics 2, 3, 4 (wrapping
    // past characteristic 1 when fewer exist).
    let bench_chars: Vec<usize> = (1..=3).map(|d| if d < k { d } else { (d - 1) % (k - 1) + 1 }).collect();
    let (hold_a, hold_b) = if k >= 4 { (2, 3) } else { (1, 0) };
    let bench_spec = SortSpec::new(0.8, 1.0, SortMode::Hard)?;

    let mut dates = Vec::with_capacity(t_len);
    let mut sections = Vec::with_capacity(t_len);
    let mut macro_rows = Vec::with_capacity(t_len);
    let mut factor_rows = Vec::with_capacity(t_len);
    let mut portfolio_rows = Vec::with_capacity(t_len);
    let mut holdout_rows = Vec::with_capacity(t_len);
    let mut truth_rows = Vec::with_capacity(t_len);
    let mut loading_sums = Matrix::zeros(25, 1 + kf);

    for t in 0..t_len {
        for (slot, firm) in firms.iter_mut().enumerate() {
            if firm.end <= t {
                generations[slot] += 1;
                *firm = Firm {
                    id: format!("F{slot:04}_{}", generations[slot]),
                    latent: (0..k).map(|_| normal(&mut rng)).collect(),
                    me: (4.0 + 1.5 * normal(&mut rng)).exp(),
                    end: lifetime(&mut rng, t),
                };
            }
        }
        let m = firms.len();
        let latent = |kk: usize| -> Vec<f64> { firms.iter().map(|f| f.latent[kk]).collect() };
        let (b1, b2) = dependent_sort(&latent(0), &latent(1));
        let mut loads = Matrix::zeros(kf, m);
        for j in 0..m {
            loads[(0, j)] = level(b1[j]);
            if kf >= 2 {
                loads[(1, j)] = level(b2[j]);
            }
        }
        for f in 2..kf {
            for (j, b) in quintiles(&latent(f)).into_iter().enumerate() {
                loads[(f, j)] = level(b);
            }
        }
        let betas: Vec<f64> = b2.iter().map(|&b| 1.0 + 0.25 * level(b)).collect();

        let mkt = config.market_mean + config.market_vol * normal(&mut rng);
        let planted: Vec<f64> = (0..kf).map(|_| config.factor_mean + config.factor_vol * normal(&mut rng)).collect();
        let returns: Vec<f64> = (0..m)
            .map(|j| {
                let systematic: f64 = (0..kf).map(|f| loads[(f, j)] * planted[f]).sum();
                betas[j] * mkt + systematic + config.noise * normal(&mut rng)
            })
            .collect();
        let me: Vec<f64> = firms.iter().map(|f| f.me).collect();

        let mut chars = Matrix::zeros(k, m);
        let mut observed = vec![true; k * m];
        for (j, f) in firms.iter().enumerate() {
            for kk in 0..k {
                if kk >= 2 && rng.random::<f64>() < config.missing {
                    observed[kk * m + j] = false;
                } else {
                    chars[(kk, j)] = raw_char(kk, f.latent[kk]);
                }
            }
        }
        let section = CrossSection {
            firm_ids: firms.iter().map(|f| f.id.clone()).collect(),
            returns,
            market_equity: me,
            chars,
            observed,
        };

        let mut factors = vec![mkt];
        for &c in &bench_chars {
            let mask: Vec<bool> = (0..m).map(|j| section.is_observed(c, j)).collect();
            let u = sort_hard(section.chars.row(c), &bench_spec, &mask)?;
            let w = weights_h2(&u.u, &section.market_equity)?;
            factors.push(w.iter().zip(&section.returns).map(|(a, b)| a * b).sum());
        }
        portfolio_rows.push(grid_returns(&b1, &b2, &section.market_equity, &section.returns));
        let (h1, h2) = dependent_sort(&latent(hold_a), &latent(hold_b));
        holdout_rows.push(grid_returns(&h1, &h2, &section.market_equity, &section.returns));

        let mut cell_weight = [0.0; 25];
        let mut cell_loads = Matrix::zeros(25, 1 + kf);
        for j in 0..m {
            let c = b1[j] * 5 + b2[j];
            let w = section.market_equity[j];
            cell_weight[c] += w;
            cell_loads[(c, 0)] += w * betas[j];
            for f in 0..kf {
                cell_loads[(c, 1 + f)] += w * loads[(f, j)];
            }
        }
        for c in 0..25 {
            if cell_weight[c] > 0.0 {
                for col in 0..=kf {
                    loading_sums[(c, col)] += cell_loads[(c, col)] / cell_weight[c] / t_len as f64;
                }
            }
        }

        let mut truth = vec![mkt];
        truth.extend_from_slice(&planted);
        truth_rows.push(truth);
        factor_rows.push(factors);
        macro_rows.push(macro_state.clone());
        dates.push(config.start.add_months(t as i64));

        for (firm, r) in firms.iter_mut().zip(&section.returns) {
            firm.me *= r.clamp(-5.0, 5.0).exp();
            for s in firm.latent.iter_mut() {
                *s = config.persistence * *s + innovation * normal(&mut rng);
            }
        }
        for x in macro_state.iter_mut() {
            *x = config.macro_persistence * *x + macro_innovation * normal(&mut rng);
        }
        sections.push(section);
    }

    let char_names: Vec<String> = (1..=k).map(|i| format!("c{i}")).collect();
    let mut factor_names = vec!["mkt".to_string()];
    factor_names.extend(bench_chars.iter().map(|&c| format!("ls_{}", char_names[c])));
    let mut truth_names = vec!["mkt".to_string()];
    truth_names.extend((1..=kf).map(|i| format!("f{i}")));

    let series = |names: Vec<String>, rows: &[Vec<f64>]| -> Result<ReturnSeries> {
        Ok(ReturnSeries {
            dates: dates.clone(),
            names,
            values: Matrix::from_rows(rows)?,
        })
    };
    let dataset = PanelDataset {
        dates: dates.clone(),
        firms: FirmPanel {
            char_names,
            months: sections,
        },
        macro_series: MacroSeries {
            names: (1..=e).map(|i| format!("x{i}")).collect(),
            values: Matrix::from_rows(&macro_rows)?,
            filled: Vec::new(),
        },
        factors: series(factor_names, &factor_rows)?,
        portfolios: series(grid_names("p"), &portfolio_rows)?,
    };
    dataset.validate()?;
    Ok(Simulation {
        dataset,
        truth: GroundTruth {
            factor_returns: series(truth_names, &truth_rows)?,
            portfolio_loadings: loading_sums,
            holdout: series(grid_names("h"), &holdout_rows)?,
        },
    })
}
