use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use farmakit::farma::{self, FarmaModel};
use farmakit::fnspace::BasisSpec;
use farmakit::forecast::{self, BoundConfig, ForecastConfig};
use farmakit::fpca;
use farmakit::hsop::KernelOperator;
use farmakit::ingest::{self, Ingested, PreprocessOptions, SynthConfig};
use farmakit::varma::{self, Autocovariances};

fn diag_op(v: &[f64], b: &Arc<BasisSpec>) -> KernelOperator {
    KernelOperator::from_diagonal(v, b).unwrap()
}

fn far1(b: &Arc<BasisSpec>) -> FarmaModel {
    let mut phi = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, -0.4, 0.3, 0.2, 0.1]));
    phi[(0, 3)] = 0.2;
    phi[(2, 1)] = -0.15;
    FarmaModel::new(
        vec![KernelOperator::new(phi, b).unwrap()],
        vec![],
        diag_op(&[2.0, 1.0, 0.6, 0.3, 0.1], b),
    )
    .unwrap()
}

#[test]
fn error_decomposition_holds_per_path() {
    let b = BasisSpec::fourier_uniform(5, 32).unwrap();
    let model = far1(&b);
    let eig = fpca::eigendecompose(&model.covariance().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sim = farma::simulate(&model, 31, 100, &mut rng).unwrap();
    let past = sim.series.slice(0..30);
    let target = &sim.series.samples()[30];
    let gammas = model.autocovariances(31).unwrap();
    for d in 1..=5 {
        let vd = eig.vectors().columns(0, d);
        let ac = Autocovariances::new(gammas.iter().map(|g| vd.transpose() * g * vd).collect()).unwrap();
        let pred = forecast::algorithm1_with_autocov(&past, &eig, d, &ac, 1).unwrap();
        let lhs = target.sub(&pred).unwrap().norm_squared();
        let x = eig.vectors().transpose() * target.coeffs();
        let s = fpca::project_sample(&pred, &eig, d).unwrap();
        let head: f64 = (0..d).map(|l| (x[l] - s[l]).powi(2)).sum();
        let tail: f64 = (d..5).map(|l| x[l].powi(2)).sum();
        assert!((lhs - head - tail).abs() < 1e-10, "d = {d}");
    }
}

#[test]
fn predictor_gap_vanishes_at_full_dimension() {
    let b = BasisSpec::fourier_uniform(5, 32).unwrap();
    let model = far1(&b);
    let config = BoundConfig { d_values: (1..=5).collect(), n: 20, reps: 400, seed: 3, burn_in: 100 };
    let reports = forecast::bound_experiment(&model, &config).unwrap();
    // not monotone in general: the d-dimensional predictor is not nested in the (d+1)-dimensional one
    assert!(reports[0].predictor_gap > 1e-3);
    let last = reports.last().unwrap();
    assert!(last.predictor_gap < 0.01 * last.sigma2);
    for r in &reports {
        assert!(r.empirical_mse <= r.sigma2 + r.gamma + 3.0 * r.se);
    }
}

#[test]
fn nilpotent_moving_average_is_autoregressive() {
    let b = BasisSpec::fourier_uniform(3, 16).unwrap();
    let mut th = DMatrix::zeros(3, 3);
    th[(0, 1)] = 0.8;
    th[(0, 2)] = -0.5;
    let ma = FarmaModel::new(vec![], vec![KernelOperator::new(th.clone(), &b).unwrap()], diag_op(&[1.0, 0.7, 0.4], &b)).unwrap();
    let ar = forecast::nilpotent_ma_as_ar(&ma).unwrap();
    let g_ma = ma.autocovariances(3).unwrap();
    let g_ar = ar.autocovariances(3).unwrap();
    for h in 0..=3 {
        assert!((&g_ma[h] - &g_ar[h]).amax() < 1e-12);
    }
    assert!((&g_ma[1] - &th * &g_ma[0]).amax() < 1e-12);
    assert!(g_ma[2].amax() < 1e-15);

    let ac = Autocovariances::new(ma.autocovariances(8).unwrap()).unwrap();
    let w = varma::brute_force_weights(&ac, 6, 1).unwrap();
    for (i, c) in w.coefficients.iter().enumerate() {
        let expect = if i == 5 { th.clone() } else { DMatrix::zeros(3, 3) };
        assert!((c - expect).amax() < 1e-10, "coefficient {i}");
    }
    let not_nil = FarmaModel::new(vec![], vec![diag_op(&[0.5, 0.0, 0.0], &b)], diag_op(&[1.0, 1.0, 1.0], &b)).unwrap();
    assert!(forecast::nilpotent_ma_as_ar(&not_nil).is_err());
}

#[test]
fn rolling_cv_is_deterministic_across_thread_counts() {
    let b = BasisSpec::fourier_uniform(7, 32).unwrap();
    let model = FarmaModel::new(
        vec![diag_op(&[0.6, 0.5, 0.4, 0.2, 0.1, 0.1, 0.1], &b)],
        vec![diag_op(&[0.3, 0.2, 0.2, 0.1, 0.0, 0.0, 0.0], &b)],
        diag_op(&[3.0, 2.0, 1.0, 0.5, 0.05, 0.05, 0.05], &b),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = farma::simulate(&model, 80, 100, &mut rng).unwrap().series;
    let mut config = ForecastConfig { d_grid: vec![2, 3], holdout: 5, ..ForecastConfig::default() };
    config.threads = Some(1);
    let a = forecast::rolling_cv(&s, None, &config).unwrap();
    config.threads = Some(4);
    let b2 = forecast::rolling_cv(&s, None, &config).unwrap();
    assert_eq!(a.rows.len(), 14);
    for (x, y) in a.rows.iter().zip(&b2.rows) {
        assert_eq!((x.d, x.p, x.q), (y.d, y.p, y.q));
        assert_eq!(x.rmse.to_bits(), y.rmse.to_bits());
        assert_eq!(x.mae.to_bits(), y.mae.to_bits());
    }
    let best = a.best_by_rmse().unwrap();
    assert!(a.rows.iter().all(|r| r.rmse.is_nan() || r.rmse >= best.rmse));

    let eig = fpca::eigendecompose(&fpca::estimate_covariance(&s).unwrap()).unwrap();
    let frozen = forecast::rolling_cv(&s, Some(&eig), &config).unwrap();
    assert_eq!(frozen.rows.len(), 14);
}

#[test]
fn duplicate_grid_cells_give_identical_rows() {
    let b = BasisSpec::fourier_uniform(5, 32).unwrap();
    let model = far1(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = farma::simulate(&model, 60, 100, &mut rng).unwrap().series;
    let config = ForecastConfig {
        d_grid: vec![2, 2],
        order_grid: vec![(1, 0), (1, 0)],
        holdout: 4,
        ..ForecastConfig::default()
    };
    let t = forecast::rolling_cv(&s, None, &config).unwrap();
    let first = &t.rows[0];
    assert!(t.rows.iter().all(|r| r == first));
}

#[test]
fn algorithm1_white_noise_predicts_zero() {
    let b = BasisSpec::fourier_uniform(5, 32).unwrap();
    let model = FarmaModel::new(vec![], vec![], diag_op(&[2.0, 1.0, 0.5, 0.2, 0.1], &b)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = farma::simulate(&model, 50, 0, &mut rng).unwrap().series;
    let eig = fpca::eigendecompose(&fpca::estimate_covariance(&s).unwrap()).unwrap();
    let out = forecast::algorithm1(&s, &eig, 3, 0, 0, 1).unwrap();
    assert!(out.forecast.norm() < 1e-12);
}

#[test]
fn algorithm1_matches_scalar_autoregression() {
    // all variation along one eigenfunction: the prediction is φ̂ · last score · ν₁
    let b = BasisSpec::fourier_uniform(3, 32).unwrap();
    let model = FarmaModel::new(vec![diag_op(&[0.7, 0.0, 0.0], &b)], vec![], diag_op(&[1.0, 0.0, 0.0], &b)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = farma::simulate(&model, 200, 100, &mut rng).unwrap().series;
    let eig = fpca::eigendecompose(&fpca::estimate_covariance(&s).unwrap()).unwrap();
    let out = forecast::algorithm1(&s, &eig, 1, 1, 0, 1).unwrap();
    let x: Vec<f64> = s.samples().iter().map(|v| v.coeffs()[0]).collect();
    let g0: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let g1: f64 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / x.len() as f64;
    let expect = g1 / g0 * x.last().unwrap();
    assert!((out.forecast.coeffs()[0] - expect).abs() < 1e-10);
    assert!(out.forecast.coeffs().rows(1, 2).amax() < 1e-12);
}

#[test]
fn weekday_offsets_are_recovered_and_removed() {
    let b = BasisSpec::fourier_uniform(5, 48).unwrap();
    let quiet = FarmaModel::new(vec![], vec![], KernelOperator::zero(&b)).unwrap();
    let mut config = SynthConfig::new(NaiveDate::from_ymd_opt(2014, 1, 6).unwrap(), 21);
    config.level = vec![80.0, 0.0, 5.0];
    config.weekday_offsets = [1.0, -2.0, 0.5, 3.0, -1.5, 10.0, 12.0];
    config.burn_in = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records = ingest::synth_raw_days(&quiet, &config, &mut rng).unwrap();
    let data = Ingested { records, dropped: vec![] };
    let (series, report) = ingest::preprocess(&data, PreprocessOptions::default(), &b).unwrap();
    assert_eq!(report.kept, 15);
    assert_eq!(report.dropped_weekend, 6);
    for wm in &report.weekday_means {
        let off = config.weekday_offsets[wm.weekday.num_days_from_monday() as usize];
        let c = wm.mean.coeffs();
        assert!((c[0] - 80.0 - off).abs() < 1e-6);
        assert!((c[2] - 5.0).abs() < 1e-6);
    }
    assert!(series.samples().iter().all(|x| x.norm() < 1e-9));
}

#[test]
fn weekday_means_vanish_after_subtraction() {
    let b = BasisSpec::fourier_uniform(5, 48).unwrap();
    let model = FarmaModel::new(vec![diag_op(&[0.5; 5], &b)], vec![], diag_op(&[1.0, 0.5, 0.3, 0.2, 0.1], &b)).unwrap();
    let mut config = SynthConfig::new(NaiveDate::from_ymd_opt(2014, 1, 1).unwrap(), 40);
    config.measurement_sd = 0.3;
    config.missing_rate = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records = ingest::synth_raw_days(&model, &config, &mut rng).unwrap();
    let data = Ingested { records, dropped: vec![] };
    let opts = PreprocessOptions { weekday_mean: true, weekdays_only: false };
    let (series, report) = ingest::preprocess(&data, opts, &b).unwrap();
    assert_eq!(report.kept, 40);
    assert!(report.interpolated_values > 0);
    for wd in 0..7 {
        let idx: Vec<usize> = report
            .dates
            .iter()
            .enumerate()
            .filter(|(_, d)| d.weekday().num_days_from_monday() == wd)
            .map(|(i, _)| i)
            .collect();
        let mut m = DVector::zeros(5);
        for &i in &idx {
            m += series.samples()[i].coeffs();
        }
        assert!((m / idx.len() as f64).amax() < 1e-9);
    }
}
