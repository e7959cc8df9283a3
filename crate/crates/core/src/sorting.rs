//! Security sorting as an activation: quantile membership, value-weighted
//! long-short weights and factor returns, with a logistic relaxation that
//! lets gradients flow back to the deep characteristics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::stats::argsort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortMode {
    Hard,
    Soft,
    /// Hard memberships forward, logistic derivative backward.
    StraightThrough,
}

impl std::str::FromStr for SortMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(SortMode::Hard),
            "soft" => Ok(SortMode::Soft),
            "straight_through" => Ok(SortMode::StraightThrough),
            other => Err(Error::InvalidArgument(format!(
                "unknown sort mode {other:?}, expected hard, soft or straight_through"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortSpec {
    /// Upper quantile; each leg holds roughly `(1 - tau)` of eligible firms.
    pub tau: f64,
    pub temperature: f64,
    pub mode: SortMode,
}

impl Default for SortSpec {
    fn default() -> Self {
        SortSpec {
            tau: 0.8,
            temperature: 1.0,
            mode: SortMode::Soft,
        }
    }
}

impl SortSpec {
    pub fn new(tau: f64, temperature: f64, mode: SortMode) -> Result<Self> {
        let spec = SortSpec { tau, temperature, mode };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau must lie in [0.5, 1), got {}", self.tau)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Firms per leg: `max(1, round((1 - tau) M))`, capped at `M / 2`.
    pub fn leg_size(&self, eligible: usize) -> usize {
        let n = ((1.0 - self.tau) * eligible as f64).round() as usize;
        n.max(1).min(eligible / 2)
    }

    pub fn with_mode(mut self, mode: SortMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

/// Quantile membership `u` in `[-1, 1]` per firm.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub u: Vec<f64>,
}

impl Membership {
    pub fn long_count(&self) -> usize {
        self.u.iter().filter(|&&x| x > 0.0).count()
    }

    pub fn short_count(&self) -> usize {
        self.u.iter().filter(|&&x| x < 0.0).count()
    }
}

fn eligible_values(y: &[f64], mask: &[bool]) -> Result<(Vec<usize>, Vec<f64>)> {
    if y.len() != mask.len() {
        return Err(Error::dim("sort mask", y.len(), mask.len()));
    }
    let idx: Vec<usize> = (0..y.len()).filter(|&j| mask[j]).collect();
    if idx.len() < 2 {
        return Err(Error::DegenerateCrossSection(format!(
            "{} eligible firms, need at least 2",
            idx.len()
        )));
    }
    let values: Vec<f64> = idx.iter().map(|&j| y[j]).collect();
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite sort key for firm {}", idx[p])));
    }
    Ok((idx, values))
}

/// Hard univariate sort: the `n` lowest eligible firms get -1, the `n`
/// highest get +1, everyone else (and every masked firm) 0. Ties go to the
/// lower firm index first.
pub fn sort_hard(y: &[f64], spec: &SortSpec, mask: &[bool]) -> Result<Membership> {
    let (idx, values) = eligible_values(y, mask)?;
    let m = idx.len();
    let n = spec.leg_size(m);
    let order = argsort(&values);
    let mut u = vec![0.0; y.len()];
    for &p in &order[..n] {
        u[idx[p]] = -1.0;
    }
    for &p in &order[m - n..] {
        u[idx[p]] = 1.0;
    }
    Ok(Membership { u })
}

/// Cut-offs of the relaxed sort, placed halfway between the last member of
/// each leg and the first firm outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub lo: f64,
    pub hi: f64,
}

pub fn thresholds(y: &[f64], spec: &SortSpec, mask: &[bool]) -> Result<Thresholds> {
    let (_, mut values) = eligible_values(y, mask)?;
    let m = values.len();
    let n = spec.leg_size(m);
    values.sort_by(f64::total_cmp);
    Ok(Thresholds {
        lo: 0.5 * (values[n - 1] + values[n]),
        hi: 0.5 * (values[m - n - 1] + values[m - n]),
    })
}

/// Relaxed membership split into its two legs, with per-firm derivatives
/// of each leg mass with respect to the sort key.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMembership {
    pub long: Vec<f64>,
    pub short: Vec<f64>,
    pub d_long: Vec<f64>,
    pub d_short: Vec<f64>,
    pub thresholds: Thresholds,
}

impl SoftMembership {
    pub fn u(&self) -> Vec<f64> {
        self.long.iter().zip(&self.short).map(|(a, s)| a - s).collect()
    }

    /// Diagonal of `du/dy`.
    pub fn jacobian_diag(&self) -> Vec<f64> {
        self.d_long.iter().zip(&self.d_short).map(|(a, s)| a - s).collect()
    }
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic leg masses for fixed thresholds:
/// `long = sigma((y - hi) / temp)`, `short = sigma((lo - y) / temp)`.
pub fn soft_membership(y: &[f64], mask: &[bool], th: Thresholds, temperature: f64) -> SoftMembership {
    let m = y.len();
    let mut out = SoftMembership {
        long: vec![0.0; m],
        short: vec![0.0; m],
        d_long: vec![0.0; m],
        d_short: vec![0.0; m],
        thresholds: th,
    };
    for j in 0..m {
        if !mask[j] {
            continue;
        }
        let a = logistic((y[j] - th.hi) / temperature);
        let s = logistic((th.lo - y[j]) / temperature);
        out.long[j] = a;
        out.short[j] = s;
        out.d_long[j] = a * (1.0 - a) / temperature;
        out.d_short[j] = -s * (1.0 - s) / temperature;
    }
    out
}

/// Relaxed sort with thresholds taken from the hard ranking and held
/// constant for differentiation.
pub fn sort_soft(y: &[f64], spec: &SortSpec, mask: &[bool]) -> Result<SoftMembership> {
    spec.validate()?;
    let th = thresholds(y, spec, mask)?;
    Ok(soft_membership(y, mask, th, spec.temperature))
}

/// Value-weighted long-short weights from leg masses: the long leg sums to
/// +1 and the short leg to -1.
pub fn leg_weights(long: &[f64], short: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if long.len() != v.len() || short.len() != v.len() {
        return Err(Error::dim("leg_weights", v.len(), long.len().max(short.len())));
    }
    let a: f64 = long.iter().zip(v).map(|(l, v)| l * v).sum();
    let s: f64 = short.iter().zip(v).map(|(l, v)| l * v).sum();
    if !(a > 0.0 && s > 0.0) {
        return Err(Error::EmptyLeg);
    }
    Ok((0..v.len())
        .map(|j| long[j] * v[j] / a - short[j] * v[j] / s)
        .collect())
}

/// Portfolio weights from a membership vector and lagged market equity.
pub fn weights_h2(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::dim("weights_h2", u.len(), v.len()));
    }
    for (j, (&uj, &vj)) in u.iter().zip(v).enumerate() {
        if uj != 0.0 && !(vj > 0.0) {
            return Err(Error::InvalidArgument(format!("market equity of firm {j} must be positive")));
        }
    }
    let long: Vec<f64> = u.iter().map(|x| x.max(0.0)).collect();
    let short: Vec<f64> = u.iter().map(|x| (-x).max(0.0)).collect();
    leg_weights(&long, &short, v)
}

/// Factor returns `W r` for a P x M weight matrix.
pub fn factor_return_h3(w: &Matrix, r: &[f64]) -> Result<Vec<f64>> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("firm returns must be finite".into()));
    }
    w.matvec(r)
}

/// A long-short factor return with the pieces needed to differentiate it
/// with respect to the leg masses.
#[derive(Debug, Clone, PartialEq)]
pub struct LegFactor {
    pub value: f64,
    long_mass: f64,
    short_mass: f64,
    long_ret: f64,
    short_ret: f64,
}

impl LegFactor {
    pub fn new(long: &[f64], short: &[f64], v: &[f64], r: &[f64]) -> Result<LegFactor> {
        let m = v.len();
        if long.len() != m || short.len() != m || r.len() != m {
            return Err(Error::dim("LegFactor", m, r.len()));
        }
        let (mut a, mut s, mut ar, mut sr) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..m {
            a += long[j] * v[j];
            s += short[j] * v[j];
            ar += long[j] * v[j] * r[j];
            sr += short[j] * v[j] * r[j];
        }
        if !(a > 0.0 && s > 0.0) {
            return Err(Error::EmptyLeg);
        }
        let (long_ret, short_ret) = (ar / a, sr / s);
        Ok(LegFactor {
            value: long_ret - short_ret,
            long_mass: a,
            short_mass: s,
            long_ret,
            short_ret,
        })
    }

    /// Gradients of the factor return with respect to each firm's long and
    /// short mass.
    pub fn mass_gradients(&self, v: &[f64], r: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dl = v
            .iter()
            .zip(r)
            .map(|(v, r)| v * (r - self.long_ret) / self.long_mass)
            .collect();
        let ds = v
            .iter()
            .zip(r)
            .map(|(v, r)| -v * (r - self.short_ret) / self.short_mass)
            .collect();
        (dl, ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hard(y: &[f64]) -> Vec<f64> {
        sort_hard(y, &SortSpec::default(), &vec![true; y.len()]).unwrap().u
    }

    #[test]
    fn five_firm_example() {
        assert_eq!(hard(&[0.5, -1.2, 3.0, 0.1, 2.2]), vec![0.0, -1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn ten_firms_two_per_leg() {
        let y: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        let m = sort_hard(&y, &SortSpec::default(), &[true; 10]).unwrap();
        assert_eq!((m.long_count(), m.short_count()), (2, 2));
    }

    #[test]
    fn masked_firms_sit_out() {
        let y = [9.0, 1.0, 5.0, -3.0, 7.0];
        let mask = [false, true, true, false, true];
        let m = sort_hard(&y, &SortSpec::default(), &mask).unwrap();
        assert_eq!(m.u, vec![0.0, -1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            sort_hard(&y, &SortSpec::default(), &[true, false, false, false, false]),
            Err(Error::DegenerateCrossSection(_))
        ));
    }

    #[test]
    fn ties_broken_by_index() {
        let y = [1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(hard(&y), vec![-1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn spec_validation() {
        assert!(SortSpec::new(0.4, 1.0, SortMode::Hard).is_err());
        assert!(SortSpec::new(1.0, 1.0, SortMode::Hard).is_err());
        assert!(SortSpec::new(0.8, 0.0, SortMode::Soft).is_err());
        let s = SortSpec::new(0.5, 1.0, SortMode::Hard).unwrap();
        assert_eq!(s.leg_size(3), 1);
        assert_eq!(s.leg_size(2), 1);
    }

    #[test]
    fn logistic_midpoint_at_threshold() {
        let th = Thresholds { lo: -1.0, hi: 2.0 };
        let sm = soft_membership(&[2.0, -1.0], &[true, true], th, 0.3);
        assert_eq!(sm.long[0], 0.5);
        assert_eq!(sm.short[1], 0.5);
    }

    #[test]
    fn soft_approaches_hard() {
        let y = [0.5, -1.2, 3.0, 0.1, 2.2, -0.4, 1.7, 0.9, -2.5, 1.1];
        let spec = SortSpec::default().with_temperature(1e-6);
        let soft = sort_soft(&y, &spec, &[true; 10]).unwrap().u();
        let hard = hard(&y);
        let gap = soft.iter().zip(&hard).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-3, "gap {gap}");
    }

    #[test]
    fn soft_jacobian_matches_finite_differences() {
        let y = [0.5, -1.2, 3.0, 0.1, 2.2, -0.4, 1.7, 0.9, -2.5, 1.1];
        let mask = [true; 10];
        let spec = SortSpec::default().with_temperature(0.7);
        let base = sort_soft(&y, &spec, &mask).unwrap();
        let jac = base.jacobian_diag();
        let h = 1e-5;
        for j in 0..y.len() {
            let mut yp = y;
            let mut ym = y;
            yp[j] += h;
            ym[j] -= h;
            let up = soft_membership(&yp, &mask, base.thresholds, spec.temperature).u()[j];
            let um = soft_membership(&ym, &mask, base.thresholds, spec.temperature).u()[j];
            let fd = (up - um) / (2.0 * h);
            let rel = (fd - jac[j]).abs() / jac[j].abs().max(1e-12);
            assert!(rel < 1e-5, "firm {j}: analytic {} fd {fd}", jac[j]);
        }
    }

    #[test]
    fn h2_example() {
        let w = weights_h2(&[1.0, 0.0, -1.0, 1.0], &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, -1.0, 0.5]);
        let w = weights_h2(&[1.0, 1.0, -1.0, -1.0], &[3.0; 4]).unwrap();
        assert_eq!(w, vec![0.5, 0.5, -0.5, -0.5]);
        assert!(matches!(weights_h2(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::EmptyLeg)));
    }

    #[test]
    fn h3_example() {
        let w = Matrix::from_rows(&[vec![0.5, 0.0, -1.0, 0.5]]).unwrap();
        let f = factor_return_h3(&w, &[0.02, 0.01, 0.03, 0.04]).unwrap();
        assert!(f[0].abs() < 1e-15);
        assert_eq!(factor_return_h3(&w, &[0.0; 4]).unwrap(), vec![0.0]);
        assert!(factor_return_h3(&w, &[0.0; 3]).is_err());
    }

    #[test]
    fn leg_factor_matches_weights() {
        let y = [0.5, -1.2, 3.0, 0.1, 2.2, -0.4];
        let v = [1.0, 2.0, 0.5, 3.0, 1.5, 2.5];
        let r = [0.01, -0.02, 0.03, 0.0, 0.05, -0.01];
        let sm = sort_soft(&y, &SortSpec::default(), &[true; 6]).unwrap();
        let w = leg_weights(&sm.long, &sm.short, &v).unwrap();
        let direct: f64 = w.iter().zip(&r).map(|(a, b)| a * b).sum();
        let lf = LegFactor::new(&sm.long, &sm.short, &v, &r).unwrap();
        assert!((lf.value - direct).abs() < 1e-15);
    }

    fn sample_y() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (5usize..60).prop_flat_map(|m| {
            (
                proptest::collection::vec(-5.0f64..5.0, m),
                proptest::collection::vec(0.1f64..100.0, m),
            )
        })
    }

    proptest! {
        #[test]
        fn hard_legs_are_balanced((y, v) in sample_y(), tau in 0.5f64..0.95) {
            let spec = SortSpec { tau, ..SortSpec::default() };
            let m = sort_hard(&y, &spec, &vec![true; y.len()]).unwrap();
            let n = spec.leg_size(y.len());
            prop_assert_eq!(m.long_count(), n);
            prop_assert_eq!(m.short_count(), n);
            let w = weights_h2(&m.u, &v).unwrap();
            let pos: f64 = w.iter().filter(|x| **x > 0.0).sum();
            let neg: f64 = w.iter().filter(|x| **x < 0.0).sum();
            prop_assert!((pos - 1.0).abs() < 1e-12 && (neg + 1.0).abs() < 1e-12);
            prop_assert!(w.iter().sum::<f64>().abs() < 1e-12);
            for (wj, uj) in w.iter().zip(&m.u) {
                prop_assert!(*uj != 0.0 || *wj == 0.0);
            }
        }

        #[test]
        fn monotone_invariance((y, _v) in sample_y(), a in 0.1f64..3.0, b in -2.0f64..2.0) {
            let phi: Vec<f64> = y.iter().map(|x| a * x + b + x.powi(3) * 0.01).collect();
            prop_assert_eq!(hard(&y), hard(&phi));
        }

        #[test]
        fn masked_firm_changes_nothing((y, v) in sample_y(), extra in -10.0f64..10.0) {
            let spec = SortSpec::default();
            let base = sort_hard(&y, &spec, &vec![true; y.len()]).unwrap();
            let mut y2 = y.clone();
            y2.push(extra);
            let mut mask = vec![true; y.len()];
            mask.push(false);
            let with = sort_hard(&y2, &spec, &mask).unwrap();
            prop_assert_eq!(&with.u[..y.len()], &base.u[..]);
            prop_assert_eq!(with.u[y.len()], 0.0);
            let mut v2 = v.clone();
            v2.push(1.0);
            let w1 = weights_h2(&base.u, &v).unwrap();
            let w2 = weights_h2(&with.u, &v2).unwrap();
            prop_assert_eq!(&w2[..y.len()], &w1[..]);
        }

        #[test]
        fn soft_legs_sum_to_one((y, v) in sample_y(), temp in 0.05f64..5.0) {
            let spec = SortSpec::default().with_temperature(temp);
            let sm = sort_soft(&y, &spec, &vec![true; y.len()]).unwrap();
            prop_assert!(sm.u().iter().all(|u| (-1.0..=1.0).contains(u)));
            let w = leg_weights(&sm.long, &sm.short, &v).unwrap();
            let long: f64 = sm.long.iter().zip(&v).map(|(l, vv)| l * vv).sum::<f64>();
            let long_w: f64 = (0..v.len()).map(|j| sm.long[j] * v[j] / long).sum();
            prop_assert!((long_w - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
