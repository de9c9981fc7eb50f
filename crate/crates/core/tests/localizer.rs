use fpaug::dataset::{Coordinate, Fingerprint, FingerprintDataset, NormalizationParams};
use fpaug::localizer::{evaluate, fit_localizer, LocalizationReport, LocalizerParams, LocalizerVariant};
use proptest::prelude::*;

fn dataset(rows: &[(Vec<f64>, (f64, f64))]) -> FingerprintDataset {
    let samples = rows
        .iter()
        .map(|(rss, (x, y))| Fingerprint::new(rss.clone(), Coordinate::new(*x, *y).unwrap()))
        .collect();
    FingerprintDataset::new(samples, rows[0].0.len(), NormalizationParams::default()).unwrap()
}

fn knn(k: usize) -> LocalizerParams {
    LocalizerParams { variant: LocalizerVariant::Knn, k, ..Default::default() }
}

fn rss() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..=1.0], 4)
}

fn rows(min: usize) -> impl Strategy<Value = Vec<(Vec<f64>, (f64, f64))>> {
    proptest::collection::vec((rss(), (-30.0f64..30.0, -30.0f64..30.0)), min..20)
}

proptest! {
    #[test]
    fn knn_is_translation_equivariant(
        train in rows(5),
        test in rows(1),
        shift in (-100.0f64..100.0, -100.0f64..100.0),
        k in 1usize..=5,
    ) {
        let moved = |r: &[(Vec<f64>, (f64, f64))]| -> Vec<(Vec<f64>, (f64, f64))> {
            r.iter().map(|(v, (x, y))| (v.clone(), (x + shift.0, y + shift.1))).collect()
        };
        let a = fit_localizer(&dataset(&train), &knn(k), 0).unwrap();
        let b = fit_localizer(&dataset(&moved(&train)), &knn(k), 0).unwrap();
        for (v, _) in &test {
            let p = a.predict(v).unwrap();
            let q = b.predict(v).unwrap();
            prop_assert!((q.x - p.x - shift.0).abs() < 1e-9 && (q.y - p.y - shift.1).abs() < 1e-9);
        }
        let ra = evaluate(&a, &dataset(&test)).unwrap();
        let rb = evaluate(&b, &dataset(&moved(&test))).unwrap();
        for (e, f) in ra.per_sample_errors.iter().zip(&rb.per_sample_errors) {
            prop_assert!((e - f).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicates_do_not_change_one_nn(train in rows(1), test in rows(1), dup in any::<proptest::sample::Index>()) {
        let a = fit_localizer(&dataset(&train), &knn(1), 0).unwrap();
        let mut doubled = train.clone();
        doubled.push(train[dup.index(train.len())].clone());
        let b = fit_localizer(&dataset(&doubled), &knn(1), 0).unwrap();
        for (v, _) in test.iter().chain(&train) {
            prop_assert_eq!(a.predict(v).unwrap(), b.predict(v).unwrap());
        }
    }

    #[test]
    fn report_is_consistent(errors in proptest::collection::vec(0.0f64..50.0, 1..40)) {
        let report = LocalizationReport::from_errors(errors.clone()).unwrap();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        prop_assert!((report.mean_error_m - mean).abs() < 1e-9);
        prop_assert!((report.median_error_m - median).abs() < 1e-9);
        prop_assert!(report.error_cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        prop_assert_eq!(report.error_cdf.last().unwrap().1, 1.0);
        for &(e, f) in &report.error_cdf {
            let below = sorted.iter().filter(|&&v| v <= e).count() as f64 / n as f64;
            prop_assert!((f - below).abs() < 1e-12);
        }
    }
}

#[test]
fn stored_fingerprints_map_to_their_own_location() {
    let train = vec![
        (vec![0.9, 0.1, 0.0], (0.0, 0.0)),
        (vec![0.1, 0.9, 0.0], (5.0, 0.0)),
        (vec![0.0, 0.4, 0.8], (5.0, 5.0)),
    ];
    let d = dataset(&train);
    let model = fit_localizer(&d, &knn(1), 0).unwrap();
    let report = evaluate(&model, &d).unwrap();
    assert_eq!(report.mean_error_m, 0.0);
    assert_eq!(report.median_error_m, 0.0);
    assert!(fit_localizer(&d, &knn(4), 0).is_err());
}

#[test]
fn feedforward_fit_is_seeded() {
    let train: Vec<_> = (0..12)
        .map(|i| (vec![0.1 + 0.07 * i as f64, 1.0 - 0.07 * i as f64], (i as f64, 0.5 * i as f64)))
        .collect();
    let d = dataset(&train);
    let params = LocalizerParams { variant: LocalizerVariant::Feedforward, epochs: 50, ..Default::default() };
    let a = evaluate(&fit_localizer(&d, &params, 3).unwrap(), &d).unwrap();
    let b = evaluate(&fit_localizer(&d, &params, 3).unwrap(), &d).unwrap();
    assert_eq!(a, b);
    let c = evaluate(&fit_localizer(&d, &params, 4).unwrap(), &d).unwrap();
    assert_ne!(a.per_sample_errors, c.per_sample_errors);
}
