use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_vif::cv::{self, CvSpec, Metric};
use robust_vif::sim::{self, Contamination, SimulationSpec};
use robust_vif::{Dataset, Method, SelectorConfig, StandardizeMode};

#[test]
fn thirty_rows_ten_folds_three_each() {
    let folds = cv::fold_assignment(30, 10, 5).unwrap();
    let mut sizes = [0; 10];
    for f in folds {
        sizes[f] += 1;
    }
    assert_eq!(sizes, [3; 10]);
}

#[test]
fn folds_depend_on_seed_only() {
    let a = cv::fold_assignment(103, 7, 9).unwrap();
    assert_eq!(a, cv::fold_assignment(103, 7, 9).unwrap());
    assert_ne!(a, cv::fold_assignment(103, 7, 10).unwrap());
    let mut sizes = [0; 7];
    for f in &a {
        sizes[*f] += 1;
    }
    assert!(sizes.iter().all(|&s| s == 14 || s == 15), "{sizes:?}");
    assert!(cv::fold_assignment(5, 1, 0).is_err());
    assert!(cv::fold_assignment(5, 6, 0).is_err());
}

#[test]
fn noiseless_data_predicts_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = DMatrix::from_fn(120, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(120, |i, _| 5.0 + 3.0 * x[(i, 1)] - 2.0 * x[(i, 2)]);
    let data = Dataset::unnamed(x, y).unwrap();
    let cfg = SelectorConfig::default();
    for method in [Method::Classical, Method::Robust] {
        let spec = CvSpec { folds: 5, ..CvSpec::default() };
        let report = cv::cross_validate(&data, method, &cfg, &spec).unwrap();
        assert_eq!(report.fold_metrics.len(), 5);
        assert!(report.fold_metrics.iter().all(|m| m.abs() < 1e-8), "{method}: {:?}", report.fold_metrics);
    }
}

fn contaminated_sim_data() -> Dataset {
    let spec = SimulationSpec {
        n: 400,
        p: 30,
        contamination: Contamination::Both,
        ..SimulationSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let generated = sim::generate(&spec, &mut rng).unwrap();
    let (train, _) = sim::contaminate(
        &generated.train,
        &generated.layout,
        spec.contamination,
        spec.contamination_rate,
        spec.row_selection,
        generated.sigma,
        &mut rng,
    );
    train
}

#[test]
fn robust_beats_classical_mape_on_contaminated_data() {
    let data = contaminated_sim_data();
    let cfg = SelectorConfig::default();
    let spec = CvSpec::default();
    let robust = cv::cross_validate(&data, Method::Robust, &cfg, &spec).unwrap();
    let classical = cv::cross_validate(&data, Method::Classical, &cfg, &spec).unwrap();
    let (r, c) = (robust.median_metric().unwrap(), classical.median_metric().unwrap());
    assert!(r < c, "robust {r} vs classical {c}");
}

#[test]
fn mape_unchanged_by_standardization_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = DMatrix::from_fn(80, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(80, |i, _| 1.0 + 4.0 * x[(i, 0)]);
    let data = Dataset::unnamed(x, y).unwrap();
    let cfg = SelectorConfig::default();
    for standardize in [StandardizeMode::Classical, StandardizeMode::Robust] {
        let spec = CvSpec {
            folds: 4,
            metric: Metric::Mse,
            standardize,
            ..CvSpec::default()
        };
        let report = cv::cross_validate(&data, Method::Classical, &cfg, &spec).unwrap();
        assert!(report.median_metric().unwrap() < 1e-16, "{standardize}");
    }
}

#[test]
fn dominating_column_selected_in_every_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(300, 12, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(300, |i, _| 1.2 * x[(i, 7)] + rng.sample::<f64, _>(StandardNormal));
    let names: Vec<String> = (0..12).map(|j| format!("v{j}")).collect();
    let data = Dataset::new(x, y, names, "y").unwrap();
    let cfg = SelectorConfig::default();
    for method in [Method::Robust, Method::Classical] {
        let report = cv::order_stability(&data, method, &cfg, StandardizeMode::Classical, 40, 0).unwrap();
        assert_eq!(report.size_histogram.iter().sum::<usize>(), 40);
        assert_eq!(report.counts[0], ("v7".to_string(), 40));
    }
}
