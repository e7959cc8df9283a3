//! Paired ±ReLU transformations of the stacked factors `[f; g]`. Each pair
//! of hyperplanes splits factor space in two, so `P_cond` pairs define
//! `2^P_cond` regions and the head is linear inside each one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::pricing::PricingCoeffs;

/// Direction matrix `Ã`, one row per hyperplane pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub directions: Matrix,
}

impl ConditionSpec {
    pub fn new(directions: Matrix) -> Result<Self> {
        for p in 0..directions.rows() {
            if directions.row(p).iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidArgument(format!("condition direction {p} is all zero")));
            }
        }
        Ok(ConditionSpec { directions })
    }

    /// Hyperplane pairs.
    pub fn num_conditions(&self) -> usize {
        self.directions.rows()
    }

    /// Length of `[f; g]`.
    pub fn input_len(&self) -> usize {
        self.directions.cols()
    }

    pub fn num_regions(&self) -> usize {
        1 << self.num_conditions()
    }

    fn projections(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::dim("condition input", self.input_len(), x.len()));
        }
        Ok((0..self.num_conditions()).map(|p| dot(self.directions.row(p), x)).collect())
    }
}

/// Per-asset slopes on the positive and negative ReLU of each pair
/// (`N x P_cond` each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCoeffs {
    pub plus: Matrix,
    pub minus: Matrix,
}

impl PairCoeffs {
    pub fn zeros(n: usize, conditions: usize) -> Self {
        PairCoeffs {
            plus: Matrix::zeros(n, conditions),
            minus: Matrix::zeros(n, conditions),
        }
    }

    fn check(&self, spec: &ConditionSpec) -> Result<()> {
        if self.plus.shape() != self.minus.shape() {
            return Err(Error::dim(
                "pair coefficient shapes",
                format!("{:?}", self.plus.shape()),
                format!("{:?}", self.minus.shape()),
            ));
        }
        if self.plus.cols() != spec.num_conditions() {
            return Err(Error::dim("pair coefficient columns", spec.num_conditions(), self.plus.cols()));
        }
        Ok(())
    }
}

/// Stacks `f` (`P x T`) over `g` (`D x T`).
pub fn stack_factors(f: &Matrix, g: &Matrix) -> Result<Matrix> {
    if f.cols() != g.cols() {
        return Err(Error::dim("factor months", f.cols(), g.cols()));
    }
    let mut x = Matrix::zeros(f.rows() + g.rows(), f.cols());
    x.as_mut_slice()[..f.as_slice().len()].copy_from_slice(f.as_slice());
    x.as_mut_slice()[f.as_slice().len()..].copy_from_slice(g.as_slice());
    Ok(x)
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `Σ_p β₊ ReLU(Ã_p x) + β₋ ReLU(-Ã_p x)` for one month.
pub fn relu_pairs_forward(f: &[f64], g: &[f64], spec: &ConditionSpec, head: &PairCoeffs) -> Result<Vec<f64>> {
    head.check(spec)?;
    let x: Vec<f64> = f.iter().chain(g).copied().collect();
    let s = spec.projections(&x)?;
    Ok((0..head.plus.rows())
        .map(|i| {
            s.iter()
                .enumerate()
                .map(|(p, &sp)| head.plus[(i, p)] * relu(sp) + head.minus[(i, p)] * relu(-sp))
                .sum()
        })
        .collect())
}

/// Panel version: `x` is `(P+D) x T`, output `N x T`.
pub fn relu_pairs_panel(x: &Matrix, spec: &ConditionSpec, head: &PairCoeffs) -> Result<Matrix> {
    head.check(spec)?;
    if x.rows() != spec.input_len() {
        return Err(Error::dim("condition input", spec.input_len(), x.rows()));
    }
    let s = spec.directions.matmul(x)?;
    let mut out = head.plus.matmul(&s.map(relu))?;
    out.add_scaled(&head.minus.matmul(&s.map(|v| relu(-v)))?, 1.0)?;
    Ok(out)
}

/// Gradients of the pair head given `dL/dR̂` (`N x T`).
pub struct PairGradients {
    pub directions: Matrix,
    pub head: PairCoeffs,
    /// With respect to the stacked factors, `(P+D) x T`.
    pub input: Matrix,
}

pub fn relu_pairs_backward(x: &Matrix, spec: &ConditionSpec, head: &PairCoeffs, d_out: &Matrix) -> Result<PairGradients> {
    head.check(spec)?;
    let s = spec.directions.matmul(x)?;
    if d_out.shape() != (head.plus.rows(), x.cols()) {
        return Err(Error::dim(
            "pair head upstream gradient",
            format!("{:?}", (head.plus.rows(), x.cols())),
            format!("{:?}", d_out.shape()),
        ));
    }
    let d_plus = d_out.matmul_t(&s.map(relu))?;
    let d_minus = d_out.matmul_t(&s.map(|v| relu(-v)))?;
    let up = head.plus.t_matmul(d_out)?;
    let down = head.minus.t_matmul(d_out)?;
    let mut d_s = Matrix::zeros(s.rows(), s.cols());
    for ((ds, sv), (u, dn)) in d_s
        .as_mut_slice()
        .iter_mut()
        .zip(s.as_slice())
        .zip(up.as_slice().iter().zip(down.as_slice()))
    {
        *ds = if *sv > 0.0 {
            *u
        } else if *sv < 0.0 {
            -dn
        } else {
            0.0
        };
    }
    Ok(PairGradients {
        directions: d_s.matmul_t(x)?,
        head: PairCoeffs { plus: d_plus, minus: d_minus },
        input: spec.directions.t_matmul(&d_s)?,
    })
}

/// Region of `[f; g]`: bit `p` is set when `Ã_p x >= 0`, and the index is
/// the bit pattern plus one, so it lies in `1..=2^P_cond`.
pub fn region_index(f: &[f64], g: &[f64], spec: &ConditionSpec) -> Result<usize> {
    let x: Vec<f64> = f.iter().chain(g).copied().collect();
    let s = spec.projections(&x)?;
    Ok(1 + s
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= 0.0)
        .map(|(p, _)| 1usize << p)
        .sum::<usize>())
}

/// `"+-+"` style sign pattern of a region, condition 1 first.
pub fn region_pattern(region: usize, conditions: usize) -> String {
    (0..conditions)
        .map(|p| if (region - 1) >> p & 1 == 1 { '+' } else { '-' })
        .collect()
}

/// Explicit per-region linear coefficients on `[f; g]`, one `N x (P+D)`
/// matrix per region in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCoeffs {
    pub conditions: usize,
    pub regions: Vec<Matrix>,
}

impl ConditionalCoeffs {
    pub fn region(&self, q: usize) -> &Matrix {
        &self.regions[q - 1]
    }

    /// Predicts with the region's linear model, `x = [f; g]`.
    pub fn predict(&self, f: &[f64], g: &[f64], spec: &ConditionSpec) -> Result<Vec<f64>> {
        let q = region_index(f, g, spec)?;
        let x: Vec<f64> = f.iter().chain(g).copied().collect();
        self.region(q).matvec(&x)
    }

    /// Adds an unconditional linear part to every region.
    pub fn with_base(mut self, base: &PricingCoeffs) -> Result<Self> {
        let (n, p, d) = (base.num_assets(), base.num_deep(), base.num_benchmark());
        for m in &mut self.regions {
            if m.shape() != (n, p + d) {
                return Err(Error::dim("region coefficients", format!("{:?}", (n, p + d)), format!("{:?}", m.shape())));
            }
            for i in 0..n {
                let row = m.row_mut(i);
                for k in 0..p {
                    row[k] += base.beta[(i, k)];
                }
                for k in 0..d {
                    row[p + k] += base.gamma[(i, k)];
                }
            }
        }
        Ok(self)
    }

    /// Rows `region,pattern,asset,<factor labels>`.
    pub fn write_csv<W: Write>(&self, out: W, assets: &[String], factors: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["region".to_string(), "pattern".to_string(), "asset".to_string()];
        header.extend(factors.iter().cloned());
        w.write_record(&header).map_err(|e| Error::Data(format!("csv: {e}")))?;
        for (q0, m) in self.regions.iter().enumerate() {
            if m.rows() != assets.len() || m.cols() != factors.len() {
                return Err(Error::dim(
                    "region coefficient labels",
                    format!("{}x{}", m.rows(), m.cols()),
                    format!("{}x{}", assets.len(), factors.len()),
                ));
            }
            for (i, a) in assets.iter().enumerate() {
                let mut rec = vec![(q0 + 1).to_string(), region_pattern(q0 + 1, self.conditions), a.clone()];
                rec.extend(m.row(i).iter().map(f64::to_string));
                w.write_record(&rec).map_err(|e| Error::Data(format!("csv: {e}")))?;
            }
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }
}

/// In region `q` the pair `p` contributes `β₊ Ã_p` when its bit is set and
/// `-β₋ Ã_p` otherwise.
pub fn unwrap_regions(spec: &ConditionSpec, head: &PairCoeffs) -> Result<ConditionalCoeffs> {
    head.check(spec)?;
    let (n, k, pc) = (head.plus.rows(), spec.input_len(), spec.num_conditions());
    let regions = (1..=spec.num_regions())
        .map(|q| {
            let mut m = Matrix::zeros(n, k);
            for p in 0..pc {
                let positive = (q - 1) >> p & 1 == 1;
                let a = spec.directions.row(p);
                for i in 0..n {
                    let c = if positive { head.plus[(i, p)] } else { -head.minus[(i, p)] };
                    for (v, av) in m.row_mut(i).iter_mut().zip(a) {
                        *v += c * av;
                    }
                }
            }
            m
        })
        .collect();
    Ok(ConditionalCoeffs { conditions: pc, regions })
}
