use std::collections::BTreeMap;

use ndarray::Array2;
use pmquant::metrics::{density_histogram, evaluate, interval_metrics, masked_mae, paired_scatter, prediction_quantile, RegionLabels};
use pmquant::{Error, QuantileTriple};
use proptest::collection::vec;
use proptest::prelude::*;

fn grid(v: &[f64], cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((v.len() / cols, cols), v.to_vec()).unwrap()
}

#[test]
fn mae_examples() {
    let t = grid(&[0.0, 0.0], 2);
    let all = Array2::from_elem((1, 2), true);
    assert_eq!(masked_mae(t.view(), t.view(), all.view()).unwrap(), 0.0);
    assert_eq!(masked_mae(grid(&[1.0, -1.0], 2).view(), t.view(), all.view()).unwrap(), 1.0);
    let first = grid(&[1.0, 0.0], 2).mapv(|v| v > 0.5);
    assert_eq!(masked_mae(grid(&[1.0, -3.0], 2).view(), t.view(), first.view()).unwrap(), 1.0);
    let none = Array2::from_elem((1, 2), false);
    assert!(matches!(masked_mae(t.view(), t.view(), none.view()), Err(Error::EmptySample(_))));
}

#[test]
fn interval_examples() {
    let c = |v: f64| Array2::from_elem((3, 3), v);
    let all = Array2::from_elem((3, 3), true);
    let m = interval_metrics(&QuantileTriple::new(c(0.0), c(1.0), c(2.0)).unwrap(), c(1.0).view(), all.view()).unwrap();
    assert_eq!((m.coverage, m.median_width), (1.0, 2.0));
    let m = interval_metrics(&QuantileTriple::new(c(1.0), c(1.0), c(1.0)).unwrap(), c(1.0).view(), all.view()).unwrap();
    assert_eq!((m.coverage, m.median_width), (1.0, 0.0));
    let m = interval_metrics(&QuantileTriple::new(c(1.0), c(0.5), c(0.0)).unwrap(), c(0.5).view(), all.view()).unwrap();
    assert_eq!((m.crossing_rate, m.coverage), (1.0, 0.0));
}

#[test]
fn quantile_examples() {
    let ten = grid(&(1..=10).map(f64::from).collect::<Vec<_>>(), 5);
    let all = Array2::from_elem((2, 5), true);
    assert_eq!(prediction_quantile(ten.view(), all.view(), 0.5).unwrap(), 5.0);
    assert_eq!(prediction_quantile(ten.view(), all.view(), 0.9).unwrap(), 9.0);
    let c = Array2::from_elem((2, 5), 7.5);
    for q in [0.01, 0.5, 0.99] {
        assert_eq!(prediction_quantile(c.view(), all.view(), q).unwrap(), 7.5);
    }
    assert!(matches!(prediction_quantile(c.view(), all.view(), 1.0), Err(Error::Domain(_))));
}

#[test]
fn scatter_examples() {
    let a = grid(&[1.0, 2.0, 3.0, 4.0], 2);
    let mask = grid(&[1.0, 1.0, 0.0, 1.0], 2).mapv(|v| v > 0.5);
    let rows = paired_scatter(a.view(), a.view(), None, mask.view()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.value_a == r.value_b && r.region == RegionLabels::UNLABELED));
    let regions = RegionLabels {
        labels: Array2::from_shape_vec((2, 2), vec![0, 1, 2, 2]).unwrap(),
        names: BTreeMap::from([(1, "coast".to_string())]),
    };
    let rows = paired_scatter(a.view(), a.view(), Some(&regions), mask.view()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.region.as_str()).collect();
    assert_eq!(names, ["unlabeled", "coast", "region-2"]);
    let b = Array2::<f64>::zeros((3, 2));
    assert!(matches!(paired_scatter(a.view(), b.view(), None, mask.view()), Err(Error::Shape(_))));
}

#[test]
fn density_integrates_to_one() {
    let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
    let bins = density_histogram(&values, -5.0, 5.0, 20).unwrap();
    let total: f64 = bins.iter().map(|b| b.density * (b.hi - b.lo)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

fn triple_strategy(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)> {
    (vec(-10.0f64..10.0, n), vec(-10.0f64..10.0, n), vec(0.0f64..5.0, n), vec(-12.0f64..12.0, n), vec(any::<bool>(), n))
}

proptest! {
    #[test]
    fn fractions_partition_on_uncrossed_triples((lo, med, width, y, mask) in triple_strategy(36)) {
        prop_assume!(mask.iter().any(|m| *m));
        let up: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let t = QuantileTriple::new(grid(&lo, 6), grid(&med, 6), grid(&up, 6)).unwrap();
        let mask = Array2::from_shape_vec((6, 6), mask).unwrap();
        let r = evaluate(&t, grid(&y, 6).view(), mask.view()).unwrap();
        prop_assert_eq!(r.crossing_rate, 0.0);
        let below_lower = 1.0 - r.frac_above_lower;
        let above_upper = 1.0 - r.frac_below_upper;
        prop_assert!((r.interval_coverage + below_lower + above_upper - 1.0).abs() < 1e-12);
        prop_assert!(r.frac_above_lower >= r.interval_coverage && r.frac_below_upper >= r.interval_coverage);
        prop_assert!(r.median_interval_width >= 0.0);
        for f in [r.interval_coverage, r.frac_above_lower, r.frac_below_upper] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn metrics_ignore_masked_values(
        (lo, med, up, y, mask) in triple_strategy(36),
        junk in vec(-1e9f64..1e9, 4 * 36),
    ) {
        prop_assume!(mask.iter().any(|m| *m));
        let m = Array2::from_shape_vec((6, 6), mask.clone()).unwrap();
        let scramble = |v: &[f64], k: usize| -> Vec<f64> {
            v.iter().enumerate().map(|(i, x)| if mask[i] { *x } else { junk[k * 36 + i] }).collect()
        };
        let t1 = QuantileTriple::new(grid(&lo, 6), grid(&med, 6), grid(&up, 6)).unwrap();
        let t2 = QuantileTriple::new(grid(&scramble(&lo, 0), 6), grid(&scramble(&med, 1), 6), grid(&scramble(&up, 2), 6)).unwrap();
        let (y1, y2) = (grid(&y, 6), grid(&scramble(&y, 3), 6));
        let a = evaluate(&t1, y1.view(), m.view()).unwrap();
        let b = evaluate(&t2, y2.view(), m.view()).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let qa = prediction_quantile(t1.median.view(), m.view(), 0.9).unwrap();
        let qb = prediction_quantile(t2.median.view(), m.view(), 0.9).unwrap();
        prop_assert_eq!(qa.to_bits(), qb.to_bits());
    }

    #[test]
    fn quantile_matches_full_sort(values in vec(-1e3f64..1e3, 1..10_000), q in 0.001f64..0.999) {
        let n = values.len();
        let raster = Array2::from_shape_vec((1, n), values.clone()).unwrap();
        let mask = Array2::from_elem((1, n), true);
        let mut sorted = values;
        sorted.sort_by(f64::total_cmp);
        // Smallest value whose empirical CDF reaches q.
        let oracle = *sorted.iter().enumerate().find(|(i, _)| (*i + 1) as f64 >= q * n as f64 - 1e-9).unwrap().1;
        prop_assert_eq!(prediction_quantile(raster.view(), mask.view(), q).unwrap(), oracle);
    }
}
