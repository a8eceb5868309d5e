use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use farmakit::farma::FarmaModel;
use farmakit::fnspace::{inner_product, smooth_to_basis, BasisSpec, FunctionSample};
use farmakit::fpca::{self, EigenSystem};
use farmakit::hsop::{check_contraction, hs_norm, op_norm, KernelOperator};
use farmakit::ingest::{ingest_reader, interpolate, write_raw_csv, IngestConfig, RawDayRecord};
use farmakit::io;

fn basis(k: usize, grid: usize) -> Arc<BasisSpec> {
    BasisSpec::fourier_uniform(k, grid).unwrap()
}

fn matrix(k: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, k * k).prop_map(move |v| DMatrix::from_row_slice(k, k, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval_is_exact(c in prop::collection::vec(-1e3f64..1e3, 9)) {
        let b = basis(9, 32);
        let f = FunctionSample::from_slice(&c, &b).unwrap();
        prop_assert_eq!(inner_product(&f, &f).unwrap(), f.norm_squared());
    }

    #[test]
    fn smoothing_is_idempotent(raw in prop::collection::vec(-10.0f64..10.0, 40)) {
        let b = basis(7, 40);
        let once = smooth_to_basis(&raw, &b).unwrap();
        let twice = smooth_to_basis(once.eval_grid().as_slice(), &b).unwrap();
        prop_assert!((once.coeffs() - twice.coeffs()).amax() < 1e-9);
    }

    #[test]
    fn smoothing_reproduces_basis_combinations(c in prop::collection::vec(-5.0f64..5.0, 7)) {
        let b = basis(7, 50);
        let f = FunctionSample::from_slice(&c, &b).unwrap();
        let grid = f.eval_grid();
        let back = smooth_to_basis(grid.as_slice(), &b).unwrap();
        prop_assert!((back.eval_grid() - grid).amax() < 1e-9);
    }

    #[test]
    fn operator_norm_below_hilbert_schmidt(a in matrix(5, 3.0), c in matrix(5, 3.0)) {
        prop_assert!(op_norm(&a) <= hs_norm(&a) * (1.0 + 1e-12));
        let ab = &a * &c;
        prop_assert!(op_norm(&ab) <= op_norm(&a) * op_norm(&c) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn shrinking_keeps_certificates(a in matrix(4, 1.0), s in 0.05f64..1.0) {
        if let Some(cert) = check_contraction(&a, 64) {
            let shrunk = check_contraction(&(&a * s), 64).expect("shrunk operator must stay certified");
            prop_assert!(shrunk.j0 <= cert.j0);
        }
    }

    #[test]
    fn cpv_is_monotone(mut lam in prop::collection::vec(0.0f64..5.0, 1..12)) {
        lam.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(lam.iter().sum::<f64>() > 0.0);
        let mut prev = 0.0;
        for d in 1..=lam.len() {
            let c = fpca::cpv(&lam, d);
            prop_assert!(c + 1e-15 >= prev);
            prev = c;
        }
        prop_assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_file_round_trips(phi in matrix(3, 0.3), theta in matrix(3, 2.0), a in matrix(3, 2.0)) {
        let b = basis(3, 16);
        let model = FarmaModel::new(
            vec![KernelOperator::new(phi, &b).unwrap()],
            vec![KernelOperator::new(theta, &b).unwrap()],
            KernelOperator::new(&a * a.transpose(), &b).unwrap(),
        ).unwrap();
        let text = io::model_to_string(&model).unwrap();
        let back = io::model_from_str(&text).unwrap();
        prop_assert_eq!(back.phis()[0].mat(), model.phis()[0].mat());
        prop_assert_eq!(back.thetas()[0].mat(), model.thetas()[0].mat());
        prop_assert_eq!(back.noise_cov().mat(), model.noise_cov().mat());
        prop_assert_eq!(back.basis().grid().len(), 16);
    }

    #[test]
    fn ingest_round_trip(
        days in prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.9, -1e6f64..1e6), 24),
            1..4,
        )
    ) {
        let start = chrono::NaiveDate::from_ymd_opt(2014, 3, 3).unwrap();
        let records: Vec<RawDayRecord> = days
            .iter()
            .enumerate()
            .filter(|(_, obs)| obs.iter().filter(|v| v.is_none()).count() * 5 <= obs.len() && obs.iter().any(|v| v.is_some()))
            .map(|(i, obs)| {
                let (values, missing) = interpolate(obs);
                RawDayRecord { date: start + chrono::Duration::days(i as i64), values, missing }
            })
            .collect();
        prop_assume!(!records.is_empty());
        let mut buf = Vec::new();
        write_raw_csv(&records, &mut buf).unwrap();
        let config = IngestConfig { grid_size: 24, max_missing_fraction: 0.2 };
        let back = ingest_reader(buf.as_slice(), &config).unwrap();
        prop_assert!(back.dropped.is_empty());
        prop_assert_eq!(back.records, records);
    }

    #[test]
    fn truncation_error_decreases(c in prop::collection::vec(-3.0f64..3.0, 6), a in matrix(6, 1.0)) {
        let b = basis(6, 24);
        let (vals, vecs) = farmakit::linalg::sorted_symmetric_eigen(&(&a * a.transpose()));
        let eig = EigenSystem::new(vals.iter().map(|v| v.max(0.0)).collect(), vecs, &b).unwrap();
        let x = FunctionSample::from_slice(&c, &b).unwrap();
        let mut prev = f64::INFINITY;
        for d in 1..=6 {
            let err = x.sub(&fpca::karhunen_loeve_truncate(&x, &eig, d).unwrap()).unwrap().norm();
            prop_assert!(err <= prev + 1e-12);
            prev = err;
        }
        prop_assert!(prev < 1e-10);
    }
}
