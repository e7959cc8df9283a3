//! The linear pricing layer `R̂ = βf + γg`, its squared-error loss and
//! the ensemble of coefficient fits.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue_psd, Matrix, Qr};
use crate::stats::AlphaStats;

/// Loadings of `N` assets on `P` deep factors (`beta`) and `D` benchmark
/// factors (`gamma`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingCoeffs {
    pub beta: Matrix,
    pub gamma: Matrix,
}

impl PricingCoeffs {
    pub fn zeros(n: usize, p: usize, d: usize) -> Self {
        PricingCoeffs {
            beta: Matrix::zeros(n, p),
            gamma: Matrix::zeros(n, d),
        }
    }

    pub fn new(beta: Matrix, gamma: Matrix) -> Result<Self> {
        if beta.rows() != gamma.rows() {
            return Err(Error::dim("pricing coefficient rows", beta.rows(), gamma.rows()));
        }
        Ok(PricingCoeffs { beta, gamma })
    }

    pub fn num_assets(&self) -> usize {
        self.beta.rows()
    }

    pub fn num_deep(&self) -> usize {
        self.beta.cols()
    }

    pub fn num_benchmark(&self) -> usize {
        self.gamma.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.gamma.is_finite()
    }

    /// Predictions for a panel: `f` is `P x T`, `g` is `D x T`, output `N x T`.
    pub fn predict_panel(&self, f: &Matrix, g: &Matrix) -> Result<Matrix> {
        check_factors(self, f, g)?;
        let mut out = self.beta.matmul(f)?;
        out.add_scaled(&self.gamma.matmul(g)?, 1.0)?;
        Ok(out)
    }

    /// Writes `asset,<factor labels...>` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, assets: &[String], deep: &[String], bench: &[String]) -> Result<()> {
        if assets.len() != self.num_assets() || deep.len() != self.num_deep() || bench.len() != self.num_benchmark() {
            return Err(Error::dim(
                "coefficient labels",
                format!("{}x({}+{})", self.num_assets(), self.num_deep(), self.num_benchmark()),
                format!("{}x({}+{})", assets.len(), deep.len(), bench.len()),
            ));
        }
        let mut w = csv::Writer::from_writer(&mut out);
        let header: Vec<&str> = std::iter::once("asset")
            .chain(deep.iter().map(String::as_str))
            .chain(bench.iter().map(String::as_str))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (i, name) in assets.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.beta.row(i).iter().map(f64::to_string));
            rec.extend(self.gamma.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn check_factors(c: &PricingCoeffs, f: &Matrix, g: &Matrix) -> Result<()> {
    if f.rows() != c.num_deep() {
        return Err(Error::dim("deep factor count", c.num_deep(), f.rows()));
    }
    if g.rows() != c.num_benchmark() {
        return Err(Error::dim("benchmark factor count", c.num_benchmark(), g.rows()));
    }
    if f.cols() != g.cols() {
        return Err(Error::dim("factor months", f.cols(), g.cols()));
    }
    Ok(())
}

/// One month's prediction `β f + γ g`, no intercept.
pub fn predict_h4(f: &[f64], g: &[f64], coeffs: &PricingCoeffs) -> Result<Vec<f64>> {
    let fm = Matrix::from_vec(f.len(), 1, f.to_vec())?;
    let gm = Matrix::from_vec(g.len(), 1, g.to_vec())?;
    Ok(coeffs.predict_panel(&fm, &gm)?.into_vec())
}

/// Mean squared pricing error split into time-series variation, squared
/// mean errors and their cross term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ts_variation: f64,
    pub cs_variation: f64,
    pub cross_term: f64,
}

pub fn loss(r: &Matrix, r_hat: &Matrix) -> Result<LossBreakdown> {
    if r.shape() != r_hat.shape() {
        return Err(Error::dim("loss panels", format!("{:?}", r.shape()), format!("{:?}", r_hat.shape())));
    }
    let (n, t) = r.shape();
    if t == 0 || n == 0 {
        return Err(Error::InvalidArgument("loss over an empty panel".into()));
    }
    let nt = (n * t) as f64;
    let mut total = 0.0;
    let mut ts = 0.0;
    let mut cs = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        let e: Vec<f64> = r.row(i).iter().zip(r_hat.row(i)).map(|(a, b)| a - b).collect();
        let alpha = e.iter().sum::<f64>() / t as f64;
        cs += alpha * alpha;
        for v in &e {
            total += v * v;
            ts += (v - alpha) * (v - alpha);
            cross += alpha * (v - alpha);
        }
    }
    Ok(LossBreakdown {
        total: total / nt,
        ts_variation: ts / nt,
        cs_variation: cs / n as f64,
        cross_term: 2.0 * cross / nt,
    })
}

/// Loss `(1/NT) ΣΣ (R - βf - γg)²` with its gradients with respect to the
/// coefficients and the deep factors.
pub struct HeadGradients {
    pub loss: f64,
    pub coeffs: PricingCoeffs,
    /// `P x T`.
    pub factors: Matrix,
}

pub fn head_gradients(r: &Matrix, f: &Matrix, g: &Matrix, coeffs: &PricingCoeffs) -> Result<HeadGradients> {
    let r_hat = coeffs.predict_panel(f, g)?;
    if r.shape() != r_hat.shape() {
        return Err(Error::dim("returns panel", format!("{:?}", r_hat.shape()), format!("{:?}", r.shape())));
    }
    let nt = r.as_slice().len() as f64;
    let mut d = r_hat;
    let mut sse = 0.0;
    for (dv, rv) in d.as_mut_slice().iter_mut().zip(r.as_slice()) {
        let e = rv - *dv;
        sse += e * e;
        *dv = -2.0 * e / nt;
    }
    Ok(HeadGradients {
        loss: sse / nt,
        coeffs: PricingCoeffs {
            beta: d.matmul_t(f)?,
            gamma: d.matmul_t(g)?,
        },
        factors: coeffs.beta.t_matmul(&d)?,
    })
}

/// Per-asset mean pricing errors, t-statistics and RMSE over the window.
pub fn tradable_alphas(r: &Matrix, f: &Matrix, g: &Matrix, coeffs: &PricingCoeffs) -> Result<AlphaStats> {
    if r.cols() < 2 {
        return Err(Error::InvalidArgument(format!("alphas need at least 2 months, got {}", r.cols())));
    }
    let mut e = r.clone();
    e.add_scaled(&coeffs.predict_panel(f, g)?, -1.0)?;
    AlphaStats::from_residuals(&e)
}

/// Labels `f1.., g1..` used to name collinear regressors.
pub fn regressor_labels(p: usize, d: usize) -> Vec<String> {
    (1..=p).map(|i| format!("f{i}")).chain((1..=d).map(|i| format!("g{i}"))).collect()
}

fn stack_regressors(f: &Matrix, g: &Matrix) -> Result<Matrix> {
    if f.cols() != g.cols() {
        return Err(Error::dim("factor months", f.cols(), g.cols()));
    }
    let t = f.cols();
    let mut x = Matrix::zeros(t, f.rows() + g.rows());
    for s in 0..t {
        let row = x.row_mut(s);
        for k in 0..f.rows() {
            row[k] = f[(k, s)];
        }
        for k in 0..g.rows() {
            row[f.rows() + k] = g[(k, s)];
        }
    }
    Ok(x)
}

/// Per-asset least squares of `R` on `[f; g]` without intercept.
pub fn fit_ols(r: &Matrix, f: &Matrix, g: &Matrix) -> Result<PricingCoeffs> {
    let x = stack_regressors(f, g)?;
    if r.cols() != x.rows() {
        return Err(Error::dim("returns months", x.rows(), r.cols()));
    }
    let (p, d) = (f.rows(), g.rows());
    if x.rows() <= p + d {
        return Err(Error::InvalidArgument(format!(
            "least squares needs more months ({}) than regressors ({})",
            x.rows(),
            p + d
        )));
    }
    let qr = Qr::new(&x, &regressor_labels(p, d))?;
    let b = qr.solve(&r.transpose())?;
    let coef = b.transpose();
    Ok(PricingCoeffs {
        beta: coef.columns(0..p),
        gamma: coef.columns(p..p + d),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub epochs: usize,
    pub batch_months: usize,
    /// Half-width of the uniform coefficient initialization.
    pub init_scale: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 100,
            epochs: 200,
            batch_months: 120,
            init_scale: 0.5,
        }
    }
}

/// Coefficient sets fitted from different starting points on the same
/// factors. Predictions average the members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHead {
    pub members: Vec<PricingCoeffs>,
}

impl EnsembleHead {
    /// Averaged coefficients. Because the head is linear this gives the
    /// same predictions as averaging member predictions.
    pub fn mean_coeffs(&self) -> PricingCoeffs {
        let mut acc = PricingCoeffs::zeros(
            self.members[0].num_assets(),
            self.members[0].num_deep(),
            self.members[0].num_benchmark(),
        );
        let w = 1.0 / self.members.len() as f64;
        for m in &self.members {
            acc.beta.add_scaled(&m.beta, w).expect("member shapes agree");
            acc.gamma.add_scaled(&m.gamma, w).expect("member shapes agree");
        }
        acc
    }

    pub fn predict_panel(&self, f: &Matrix, g: &Matrix) -> Result<Matrix> {
        let mut acc: Option<Matrix> = None;
        for m in &self.members {
            let p = m.predict_panel(f, g)?;
            match acc.as_mut() {
                None => acc = Some(p),
                Some(a) => a.add_scaled(&p, 1.0)?,
            }
        }
        let mut out = acc.expect("at least one member");
        out.scale(1.0 / self.members.len() as f64);
        Ok(out)
    }
}

pub(crate) fn member_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fits `config.members` heads by minibatch SGD from independent random
/// starts. The step is `1/λ_max` of the regressor second-moment matrix.
pub fn fit_ensemble(r: &Matrix, f: &Matrix, g: &Matrix, config: &EnsembleConfig, seed: u64) -> Result<EnsembleHead> {
    if config.members == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
    }
    if config.epochs == 0 || config.batch_months == 0 {
        return Err(Error::InvalidArgument("ensemble epochs and batch size must be positive".into()));
    }
    let x = stack_regressors(f, g)?;
    let t = x.rows();
    if r.cols() != t || t == 0 {
        return Err(Error::dim("returns months", t, r.cols()));
    }
    let mut moment = x.t_matmul(&x)?;
    moment.scale(1.0 / t as f64);
    let lambda = max_eigenvalue_psd(&moment);
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Numerical("factor second moment is zero".into()));
    }
    let eta = 0.5 / lambda;
    let (n, p, d) = (r.rows(), f.rows(), g.rows());
    let batch = config.batch_months.min(t);
    let members = (0..config.members)
        .into_par_iter()
        .map(|w| {
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed(seed, w));
            let k = p + d;
            let mut coef = Matrix::from_vec(
                n,
                k,
                (0..n * k).map(|_| rng.random_range(-config.init_scale..=config.init_scale)).collect(),
            )?;
            let mut order: Vec<usize> = (0..t).collect();
            let mut grad = Matrix::zeros(n, k);
            for _ in 0..config.epochs {
                order.shuffle(&mut rng);
                for chunk in order.chunks(batch) {
                    grad.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
                    for &s in chunk {
                        let xs = x.row(s);
                        for i in 0..n {
                            let e = r[(i, s)] - crate::linalg::dot(coef.row(i), xs);
                            for (gv, xv) in grad.row_mut(i).iter_mut().zip(xs) {
                                *gv += e * xv;
                            }
                        }
                    }
                    coef.add_scaled(&grad, eta / chunk.len() as f64)?;
                }
            }
            if !coef.is_finite() {
                return Err(Error::Numerical(format!("ensemble member {w} diverged")));
            }
            Ok(PricingCoeffs {
                beta: coef.columns(0..p),
                gamma: coef.columns(p..k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleHead { members })
}
