//! The full stack as one differentiable function of its parameters:
//! network, sort, factor, linear head and ReLU pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conditional::{relu_pairs_backward, relu_pairs_panel, stack_factors, ConditionSpec, PairCoeffs};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{backward, forward, Mode, NetworkParams};
use crate::pricing::PricingCoeffs;
use crate::sorting::{soft_membership, sort_hard, thresholds, LegFactor, SortSpec, Thresholds};

use super::context::{Context, MonthData};

/// Every trainable value of the stack.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StackParams {
    pub network: Option<NetworkParams>,
    pub coeffs: PricingCoeffs,
    /// `P_cond x (P + D)`.
    pub directions: Matrix,
    pub pairs: PairCoeffs,
}

impl StackParams {
    pub fn num_deep(&self) -> usize {
        self.coeffs.num_deep()
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some(n) = &self.network {
            v.extend(n.values());
        }
        v.extend(self.coeffs.beta.as_slice());
        v.extend(self.coeffs.gamma.as_slice());
        v.extend(self.directions.as_slice());
        v.extend(self.pairs.plus.as_slice());
        v.extend(self.pairs.minus.as_slice());
        v
    }

    pub fn set_values(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let slots = self
            .network
            .iter_mut()
            .flat_map(|n| n.values_mut())
            .chain(self.coeffs.beta.as_mut_slice())
            .chain(self.coeffs.gamma.as_mut_slice())
            .chain(self.directions.as_mut_slice())
            .chain(self.pairs.plus.as_mut_slice())
            .chain(self.pairs.minus.as_mut_slice());
        for slot in slots {
            *slot = it.next().expect("value count");
        }
        debug_assert!(it.next().is_none());
    }

    pub fn condition_spec(&self) -> Option<ConditionSpec> {
        (self.directions.rows() > 0).then(|| ConditionSpec {
            directions: self.directions.clone(),
        })
    }
}

/// How the sort is evaluated in a pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SortPass {
    Hard,
    Soft { temperature: f64 },
    /// Hard forward values, soft derivatives.
    StraightThrough { temperature: f64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dropout {
    pub p_keep: f64,
    pub seed: u64,
}

pub(crate) struct PassOptions<'t> {
    pub sort: SortPass,
    pub tau: SortSpec,
    pub dropout: Option<Dropout>,
    /// Reuse these thresholds (one row per month, one entry per factor)
    /// instead of recomputing them from the scores.
    pub frozen: Option<&'t [Vec<Option<Thresholds>>]>,
    pub gradients: bool,
}

pub(crate) struct PassResult {
    /// Mean squared pricing error in context (scaled) units.
    pub loss: f64,
    pub grads: Option<StackParams>,
    /// `P x B` deep factor returns in context units.
    pub factors: Matrix,
    pub thresholds: Vec<Vec<Option<Thresholds>>>,
    /// Month-factor pairs skipped because fewer than two firms were
    /// eligible.
    pub degenerate: usize,
}

struct LegState {
    d_long: Vec<f64>,
    d_short: Vec<f64>,
    g_long: Vec<f64>,
    g_short: Vec<f64>,
}

struct MonthPass {
    factors: Vec<f64>,
    legs: Vec<Option<LegState>>,
    thresholds: Vec<Option<Thresholds>>,
    cache: Option<crate::net::ForwardCache>,
    degenerate: usize,
    firms: usize,
}

fn dropout_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn month_pass(
    network: &NetworkParams,
    data: &MonthData,
    t: usize,
    opts: &PassOptions<'_>,
    frozen: Option<&[Option<Thresholds>]>,
) -> Result<MonthPass> {
    let mode = match opts.dropout {
        Some(d) => Mode::Train { p_keep: d.p_keep },
        None => Mode::Eval,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.dropout.map_or(0, |d| dropout_seed(d.seed, t)));
    let (y, cache) = forward(&data.input, network, mode, &mut rng)?;
    let p = y.rows();
    let mut out = MonthPass {
        factors: vec![0.0; p],
        legs: Vec::with_capacity(p),
        thresholds: Vec::with_capacity(p),
        cache: opts.gradients.then_some(cache),
        degenerate: 0,
        firms: y.cols(),
    };
    let eligible_count = data.eligible.iter().filter(|e| **e).count();
    for k in 0..p {
        let scores = y.row(k);
        if eligible_count < 2 {
            out.degenerate += 1;
            out.legs.push(None);
            out.thresholds.push(None);
            continue;
        }
        if let Some(j) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite deep characteristic for firm {j} in month {t}")));
        }
        let hard_legs = || -> Result<(Vec<f64>, Vec<f64>)> {
            let u = sort_hard(scores, &opts.tau, &data.eligible)?.u;
            Ok((
                u.iter().map(|x| if *x > 0.0 { 1.0 } else { 0.0 }).collect(),
                u.iter().map(|x| if *x < 0.0 { 1.0 } else { 0.0 }).collect(),
            ))
        };
        let th = match frozen.and_then(|f| f[k]) {
            Some(th) => th,
            None => thresholds(scores, &opts.tau, &data.eligible)?,
        };
        out.thresholds.push(Some(th));
        let (value, leg) = match opts.sort {
            SortPass::Hard => {
                let (long, short) = hard_legs()?;
                (LegFactor::new(&long, &short, &data.market_equity, &data.returns)?.value, None)
            }
            SortPass::Soft { temperature } => {
                let sm = soft_membership(scores, &data.eligible, th, temperature);
                let lf = LegFactor::new(&sm.long, &sm.short, &data.market_equity, &data.returns)?;
                let (g_long, g_short) = lf.mass_gradients(&data.market_equity, &data.returns);
                let leg = LegState {
                    d_long: sm.d_long,
                    d_short: sm.d_short,
                    g_long,
                    g_short,
                };
                (lf.value, Some(leg))
            }
            SortPass::StraightThrough { temperature } => {
                let (long, short) = hard_legs()?;
                let lf = LegFactor::new(&long, &short, &data.market_equity, &data.returns)?;
                let sm = soft_membership(scores, &data.eligible, th, temperature);
                let (g_long, g_short) = lf.mass_gradients(&data.market_equity, &data.returns);
                let leg = LegState {
                    d_long: sm.d_long,
                    d_short: sm.d_short,
                    g_long,
                    g_short,
                };
                (lf.value, Some(leg))
            }
        };
        out.factors[k] = value;
        out.legs.push(if opts.gradients { leg } else { None });
    }
    Ok(out)
}

/// Loss of the stack over `months`, with gradients when requested.
pub(crate) fn evaluate(params: &StackParams, ctx: &Context<'_, '_>, months: &[usize], opts: &PassOptions<'_>) -> Result<PassResult> {
    if months.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if matches!(opts.sort, SortPass::Hard) && opts.gradients {
        return Err(Error::InvalidArgument("hard sorting is not differentiable".into()));
    }
    let p = params.num_deep();
    let b = months.len();
    let passes: Vec<MonthPass> = match &params.network {
        Some(net) => months
            .par_iter()
            .enumerate()
            .map(|(s, &t)| {
                let data = ctx.month(t)?;
                month_pass(net, &data, t, opts, opts.frozen.map(|f| f[s].as_slice()))
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let mut f = Matrix::zeros(p, b);
    for (s, mp) in passes.iter().enumerate() {
        for k in 0..p {
            f[(k, s)] = mp.factors[k];
        }
    }
    let mut r = ctx.prep.portfolio_panel(months, ctx.log);
    r.scale(1.0 / ctx.scale);
    let mut g = ctx.prep.benchmark_panel(ctx.benchmark, months, ctx.log)?;
    g.scale(1.0 / ctx.scale);

    let spec = params.condition_spec();
    let x = stack_factors(&f, &g)?;
    let mut r_hat = params.coeffs.predict_panel(&f, &g)?;
    if let Some(spec) = &spec {
        r_hat.add_scaled(&relu_pairs_panel(&x, spec, &params.pairs)?, 1.0)?;
    }
    let nt = r.as_slice().len() as f64;
    let mut d = r_hat;
    let mut sse = 0.0;
    for (dv, rv) in d.as_mut_slice().iter_mut().zip(r.as_slice()) {
        let e = rv - *dv;
        sse += e * e;
        *dv = -2.0 * e / nt;
    }
    let loss = sse / nt;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss over months {}..={}", months[0], months[b - 1])));
    }
    let thresholds = passes.iter().map(|mp| mp.thresholds.clone()).collect();
    let degenerate = passes.iter().map(|mp| mp.degenerate).sum();
    if !opts.gradients {
        return Ok(PassResult {
            loss,
            grads: None,
            factors: f,
            thresholds,
            degenerate,
        });
    }

    let mut grads = StackParams {
        network: params.network.as_ref().map(NetworkParams::zeros_like),
        coeffs: PricingCoeffs {
            beta: d.matmul_t(&f)?,
            gamma: d.matmul_t(&g)?,
        },
        directions: Matrix::zeros(params.directions.rows(), params.directions.cols()),
        pairs: PairCoeffs::zeros(params.pairs.plus.rows(), params.pairs.plus.cols()),
    };
    let mut df = params.coeffs.beta.t_matmul(&d)?;
    if let Some(spec) = &spec {
        let pg = relu_pairs_backward(&x, spec, &params.pairs, &d)?;
        grads.directions = pg.directions;
        grads.pairs = pg.head;
        for k in 0..p {
            for (a, v) in df.row_mut(k).iter_mut().zip(pg.input.row(k)) {
                *a += v;
            }
        }
    }

    if let (Some(net), Some(net_grads)) = (&params.network, grads.network.as_mut()) {
        let per_month: Vec<NetworkParams> = passes
            .par_iter()
            .enumerate()
            .map(|(s, mp)| {
                let m = mp.firms;
                let mut dy = Matrix::zeros(p, m);
                for k in 0..p {
                    if let Some(leg) = &mp.legs[k] {
                        let up = df[(k, s)];
                        for j in 0..m {
                            dy[(k, j)] = up * (leg.g_long[j] * leg.d_long[j] + leg.g_short[j] * leg.d_short[j]);
                        }
                    }
                }
                let cache = mp.cache.as_ref().expect("cache kept for gradients");
                Ok(backward(cache, net, &dy)?.0)
            })
            .collect::<Result<_>>()?;
        for gm in &per_month {
            for (acc, v) in net_grads.values_mut().zip(gm.values()) {
                *acc += v;
            }
        }
    }
    Ok(PassResult {
        loss,
        grads: Some(grads),
        factors: f,
        thresholds,
        degenerate,
    })
}
