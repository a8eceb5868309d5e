use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};

use farmakit::farma::FarmaModel;
use farmakit::fnspace::BasisSpec;
use farmakit::hsop::KernelOperator;
use farmakit::io;

fn farmakit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_farmakit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = farmakit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_model(dir: &Path) -> String {
    write_model_with(dir, &[0.3, 0.2, 0.1, 0.0, 0.0])
}

fn write_model_with(dir: &Path, ma: &[f64]) -> String {
    let b = BasisSpec::fourier_uniform(5, 48).unwrap();
    let d = |v: &[f64]| KernelOperator::new(DMatrix::from_diagonal(&DVector::from_column_slice(v)), &b).unwrap();
    let model = FarmaModel::new(
        vec![d(&[0.5, 0.4, 0.3, 0.2, 0.1])],
        if ma.iter().all(|v| *v == 0.0) { vec![] } else { vec![d(ma)] },
        d(&[2.0, 1.0, 0.5, 0.2, 0.1]),
    )
    .unwrap();
    let path = dir.join("model.toml");
    io::save_model(&model, &path).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let series = s(&dir.path().join("series.csv"));
    let fc = s(&dir.path().join("fc.csv"));
    ok(&["simulate", "--model", &model, "--n", "200", "--seed", "1", "--out", &series]);
    let loaded = io::load_series(&series).unwrap();
    assert_eq!(loaded.len(), 200);
    let out = ok(&["predict", "--series", &series, "--d", "3", "--p", "1", "--q", "1", "--h", "2", "--out", &fc, "--backtest", "5"]);
    assert!(out.lines().any(|l| l.starts_with("model rmse=")));
    let f = io::load_series(&fc).unwrap();
    assert_eq!(f.len(), 1);
    assert_eq!(f.start(), 202);

    let varma = s(&dir.path().join("varma.csv"));
    ok(&["fit", "--series", &series, "--d", "2", "--p", "1", "--q", "0", "--out", &varma]);
    assert!(std::fs::read_to_string(&varma).unwrap().starts_with("#d=2"));
}

#[test]
fn simulate_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let run = |name: &str, seed: &str| {
        let p = s(&dir.path().join(name));
        ok(&["simulate", "--model", &model, "--n", "30", "--seed", seed, "--out", &p]);
        std::fs::read_to_string(p).unwrap()
    };
    assert_eq!(run("a.csv", "7"), run("b.csv", "7"));
    assert_ne!(run("a.csv", "7"), run("c.csv", "8"));
}

#[test]
fn errors_are_reported_and_exit_nonzero() {
    let out = farmakit(&["simulate", "--no-such-flag"]);
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "#basis=fourier,K=3,grid=16\nday,coeff_index,value\n1,0,abc\n").unwrap();
    let out = farmakit(&["predict", "--series", &s(&bad), "--d", "2", "--p", "1", "--q", "0", "--out", &s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));

    let out = farmakit(&["simulate", "--model", &s(&dir.path().join("missing.toml")), "--n", "5", "--out", &s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bounds_rows_respect_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model_with(dir.path(), &[0.0; 5]);
    let out = s(&dir.path().join("bounds.csv"));
    ok(&["bounds", "--model", &model, "--reps", "300", "--n", "20", "--seed", "4", "--threads", "2", "--out", &out]);
    let rows = io::read_bounds(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(r.empirical_mse <= r.sigma2 + r.gamma + 3.0 * r.se, "d = {}", r.d);
    }
}

#[test]
fn cv_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let series = s(&dir.path().join("series.csv"));
    let table = s(&dir.path().join("table.csv"));
    ok(&["simulate", "--model", &model, "--n", "60", "--seed", "3", "--out", &series]);
    ok(&["cv", "--series", &series, "--d", "2..3", "--orders", "(1,0),(1,1)", "--holdout", "4", "--threads", "2", "--out", &table]);
    let rows = io::read_table(std::fs::File::open(&table).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);

    for (kind, input) in [("eigenfunctions", &series), ("forecast", &series), ("cv", &table)] {
        let svg = dir.path().join(format!("{kind}.svg"));
        ok(&["plotdata", "--in", input, "--kind", kind, "--d", "2", "--out", &s(&svg)]);
        let text = std::fs::read_to_string(svg).unwrap();
        assert!(text.starts_with("<svg") && text.contains("polyline"));
    }
}

#[test]
fn synth_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let raw = s(&dir.path().join("raw.csv"));
    let series = s(&dir.path().join("series.csv"));
    ok(&[
        "synth", "--model", &model, "--days", "14", "--start", "2014-01-06", "--seed", "5", "--level", "60",
        "--weekday-offsets", "1,2,3,4,5,-10,-20", "--measurement-sd", "0.5", "--missing-rate", "0.05", "--out", &raw,
    ]);
    let report = ok(&["ingest", "--raw", &raw, "--grid", "48", "--basis-size", "5", "--out", &series]);
    assert!(!report.is_empty());
    let loaded = io::load_series(&series).unwrap();
    assert_eq!(loaded.len(), 10);
    assert_eq!(loaded.basis().size(), 5);
}
