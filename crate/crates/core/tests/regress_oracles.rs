use gscore_core::regress::{fit_regression, suite_gscores};
use gscore_core::{
    compute_gscore, evaluate_suite, gen_suite, predict, train, tune_tau, Distance, FitMethod,
    GscoreConfig, MetaSuite, ScoreSet, SuiteSpec, TargetMetric,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves the 2x2 normal equations with Cramer's rule.
fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = sxx * n - sx * sx;
    let theta1 = (sxy * n - sx * sy) / det;
    let theta0 = (sxx * sy - sx * sxy) / det;
    (theta1, theta0)
}

#[test]
fn ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let points: Vec<(f64, f64)> = (0..150)
            .map(|_| {
                let g: f64 = rng.random_range(0.0..0.5);
                (g, 0.9 - 1.3 * g + rng.random_range(-0.05..0.05))
            })
            .collect();
        let fit = fit_regression(&points).unwrap();
        let (t1, t0) = normal_equations(&points);
        assert!((fit.theta1 - t1).abs() <= 1e-10, "{} vs {t1}", fit.theta1);
        assert!((fit.theta0 - t0).abs() <= 1e-10, "{} vs {t0}", fit.theta0);
        let mse = points
            .iter()
            .map(|&(x, y)| (y - t1 * x - t0).powi(2))
            .sum::<f64>()
            / 150.0;
        assert!((fit.train_loss - mse).abs() <= 1e-12);
    }
}

fn small_spec(seed: u64) -> SuiteSpec {
    SuiteSpec {
        seed,
        n_train: 40,
        n_test: 10,
        size_range: (300, 400),
        ..SuiteSpec::default()
    }
}

#[test]
fn tuned_ude_tau_on_balanced_suite() {
    let spec = SuiteSpec {
        n_test: 0,
        ..SuiteSpec::default()
    };
    let (train_suite, _) = gen_suite(&spec).unwrap();
    let val = gscore_core::fit::fit_val_gaussian(&spec.gen_val().unwrap()).unwrap();
    let cfg = GscoreConfig::new(FitMethod::Ude, Distance::Wasserstein);
    let tuned = tune_tau(&train_suite, Some(&val), &cfg, TargetMetric::FPR95).unwrap();
    let tau = tuned.tau.unwrap();
    assert!((0.9..1.0).contains(&tau), "tau = {tau}");

    let best = tuned.model.fit.train_loss;
    for &(t, loss) in &tuned.scan {
        if let Some(l) = loss {
            assert!(best <= l, "tau {t}: {l} < {best}");
        }
    }
}

#[test]
fn gmm_tuning_reuses_the_mixture() {
    let spec = small_spec(3);
    let (train_suite, _) = gen_suite(&spec).unwrap();
    let cfg = GscoreConfig::new(FitMethod::Gmm, Distance::Wasserstein);
    let tuned = tune_tau(&train_suite, None, &cfg, TargetMetric::Auroc).unwrap();
    // Retraining from scratch at the chosen tau must give the same model.
    let direct = train(
        &train_suite,
        None,
        &cfg.with_tau(tuned.tau),
        TargetMetric::Auroc,
    )
    .unwrap();
    assert_eq!(direct.fit, tuned.model.fit);
}

#[test]
fn predict_in_percent_units() {
    let model = train_example();
    let mut m = model.clone();
    m.fit.theta1 = -0.5;
    m.fit.theta0 = 1.0;
    // -50 * 0.5 + 100 = 75 percent.
    let set = ScoreSet::new("p", vec![0.1, 0.2, 0.8, 0.9]).unwrap();
    let g = compute_gscore(&set, None, &m.cfg).unwrap().value;
    let p = predict(&m, &set, None).unwrap();
    assert!((p.value - (1.0 - 0.5 * g).clamp(0.0, 1.0)).abs() < 1e-15);
    assert!((100.0 * m.fit.apply(0.5) - 75.0).abs() < 1e-12);
    assert_eq!(m.fit.apply(0.0), m.fit.theta0);
}

fn train_example() -> gscore_core::RegressionModel {
    let (train_suite, _) = gen_suite(&small_spec(5)).unwrap();
    train(
        &train_suite,
        None,
        &GscoreConfig::new(FitMethod::Kmeans, Distance::L2),
        TargetMetric::Auroc,
    )
    .unwrap()
}

#[test]
fn evaluation_rejects_leakage() {
    let spec = small_spec(7);
    let (train_suite, test_suite) = gen_suite(&spec).unwrap();
    let cfg = GscoreConfig::new(FitMethod::Kmeans, Distance::L2);
    let model = train(&train_suite, None, &cfg, TargetMetric::FPR95).unwrap();

    let err = evaluate_suite(&model, &train_suite, None).unwrap_err();
    assert_eq!(err.code(), "E_LEAKAGE");

    let mut mixed: Vec<ScoreSet> = test_suite.sets().to_vec();
    mixed.push(train_suite.sets()[0].clone());
    let err = evaluate_suite(&model, &MetaSuite::new(mixed).unwrap(), None).unwrap_err();
    assert_eq!(err.code(), "E_LEAKAGE");

    let report = evaluate_suite(&model, &test_suite, None).unwrap();
    assert_eq!(report.records.len(), test_suite.len());
    let sq: f64 = report
        .records
        .iter()
        .map(|r| (r.predicted_pct - r.truth_pct.unwrap()).powi(2))
        .sum();
    let rmse = (sq / report.records.len() as f64).sqrt();
    assert!((report.rmse_pct.unwrap() - rmse).abs() < 1e-12);
    for r in &report.records {
        assert!((0.0..=100.0).contains(&r.predicted_pct));
    }
}

#[test]
fn parallel_gscores_equal_sequential() {
    let spec = small_spec(9);
    let (train_suite, _) = gen_suite(&spec).unwrap();
    let val = gscore_core::fit::fit_val_gaussian(&spec.gen_val().unwrap()).unwrap();
    let cfgs = [
        GscoreConfig::new(FitMethod::Kmeans, Distance::L2),
        GscoreConfig::new(FitMethod::Gmm, Distance::KlIndOod).with_tau(Some(0.7)),
        GscoreConfig::new(FitMethod::Ude, Distance::Wasserstein).with_tau(Some(0.95)),
    ];
    for cfg in cfgs {
        let par = suite_gscores(&train_suite, Some(&val), &cfg).unwrap();
        let seq: Vec<_> = train_suite
            .sets()
            .iter()
            .map(|s| compute_gscore(s, Some(&val), &cfg).unwrap())
            .collect();
        assert_eq!(par, seq);
    }
}

#[test]
fn ude_model_without_val_is_a_config_error() {
    let spec = small_spec(11);
    let (train_suite, test_suite) = gen_suite(&spec).unwrap();
    let val = gscore_core::fit::fit_val_gaussian(&spec.gen_val().unwrap()).unwrap();
    let cfg = GscoreConfig::new(FitMethod::Ude, Distance::Wasserstein).with_tau(Some(0.9));
    let mut model = train(&train_suite, Some(&val), &cfg, TargetMetric::Auroc).unwrap();
    assert!(predict(&model, &test_suite.sets()[0], None).is_ok());
    model.val = None;
    let err = predict(&model, &test_suite.sets()[0], None).unwrap_err();
    assert_eq!(err.code(), "E_CONFIG");
}
