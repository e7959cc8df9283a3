use crate::stats::argsort;

use super::{CrossSection, FirmPanel};

/// Maps every characteristic, month by month, to `(2 rank - m - 1) / (m - 1)`
/// over the `m` firms that observe it, so values lie in `[-1, 1]`.
/// Unobserved entries become 0. A characteristic with fewer than two
/// observations in a month is masked for that month.
pub fn rank_normalize(panel: &FirmPanel) -> FirmPanel {
    FirmPanel {
        char_names: panel.char_names.clone(),
        months: panel.months.iter().map(normalize_section).collect(),
    }
}

fn normalize_section(cs: &CrossSection) -> CrossSection {
    let m = cs.len();
    let mut out = cs.clone();
    for k in 0..cs.num_chars() {
        let idx: Vec<usize> = (0..m).filter(|&j| cs.is_observed(k, j)).collect();
        let row = out.chars.row_mut(k);
        if idx.len() < 2 {
            row.iter_mut().for_each(|v| *v = 0.0);
            out.observed[k * m..(k + 1) * m].iter_mut().for_each(|o| *o = false);
            continue;
        }
        let values: Vec<f64> = idx.iter().map(|&j| cs.chars[(k, j)]).collect();
        let order = argsort(&values);
        let denom = (idx.len() - 1) as f64;
        row.iter_mut().for_each(|v| *v = 0.0);
        for (r, &pos) in order.iter().enumerate() {
            row[idx[pos]] = (2.0 * r as f64 - denom) / denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn section(values: &[Option<f64>]) -> CrossSection {
        let m = values.len();
        let mut chars = Matrix::zeros(1, m);
        let mut observed = vec![false; m];
        for (j, v) in values.iter().enumerate() {
            if let Some(v) = v {
                chars[(0, j)] = *v;
                observed[j] = true;
            }
        }
        CrossSection {
            firm_ids: (0..m).map(|j| format!("f{j}")).collect(),
            returns: vec![0.0; m],
            market_equity: vec![1.0; m],
            chars,
            observed,
        }
    }

    fn panel(values: &[Option<f64>]) -> FirmPanel {
        FirmPanel {
            char_names: vec!["c1".into()],
            months: vec![section(values)],
        }
    }

    #[test]
    fn three_firms_map_to_unit_interval() {
        let p = rank_normalize(&panel(&[Some(10.0), Some(20.0), Some(30.0)]));
        assert_eq!(p.months[0].chars.row(0), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_values_are_zero_and_masked() {
        let p = rank_normalize(&panel(&[Some(5.0), None, Some(1.0)]));
        assert_eq!(p.months[0].chars.row(0), &[1.0, 0.0, -1.0]);
        assert_eq!(p.months[0].observed, vec![true, false, true]);
    }

    #[test]
    fn single_observation_is_masked() {
        let p = rank_normalize(&panel(&[None, Some(3.0), None]));
        assert_eq!(p.months[0].observed, vec![false, false, false]);
        assert_eq!(p.months[0].chars.row(0), &[0.0, 0.0, 0.0]);
    }

    fn opt_values() -> impl Strategy<Value = Vec<Option<f64>>> {
        proptest::collection::vec(proptest::option::weighted(0.85, -100.0f64..100.0), 1..40)
    }

    proptest! {
        #[test]
        fn idempotent(values in opt_values()) {
            let once = rank_normalize(&panel(&values));
            let twice = rank_normalize(&once);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn invariant_to_monotone_maps(values in opt_values(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            // strictly increasing, nonlinear
            let phi = |x: f64| a * x + b + (x / 50.0).powi(3);
            let mapped: Vec<Option<f64>> = values.iter().map(|v| v.map(phi)).collect();
            let lhs = rank_normalize(&panel(&values)).months[0].chars.clone();
            let rhs = rank_normalize(&panel(&mapped)).months[0].chars.clone();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn values_in_range(values in opt_values()) {
            let p = rank_normalize(&panel(&values));
            prop_assert!(p.months[0].chars.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
