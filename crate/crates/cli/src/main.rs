use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use farmakit::fnspace::{BasisSpec, FunctionSeries};
use farmakit::forecast::{self, Baseline, BoundConfig, ForecastConfig, MaeKind};
use farmakit::ingest::{self, IngestConfig, PreprocessOptions, SynthConfig};
use farmakit::{farma, fpca, io, varma};

mod svg;

#[derive(Parser)]
#[command(name = "farmakit", version, about = "Functional ARMA simulation, fitting and prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a functional ARMA series from a model file.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = farma::DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a VARMA(p, q) model to the first d FPC scores.
    Fit {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict h steps ahead through the scores.
    Predict {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate rolling predictions of the last N samples and
        /// compare against last-value and mean baselines.
        #[arg(long)]
        backtest: Option<usize>,
    },
    /// Rolling cross-validation over d and (p, q).
    Cv {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value = "2..6")]
        d: String,
        #[arg(long, default_value = "(1,0),(2,0),(0,1),(0,2),(1,1),(2,1),(1,2)")]
        orders: String,
        #[arg(long, default_value_t = 10)]
        holdout: usize,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[arg(long, value_enum, default_value_t = MaeArg::Integrated)]
        mae: MaeArg,
        /// Use the eigenbasis of the whole series at every origin.
        #[arg(long)]
        freeze_eigen: bool,
        #[arg(long, default_value_t = 0.8)]
        cpv: f64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo check of the prediction error bound for a FAR(p) model.
    Bounds {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "1..K")]
        d_range: String,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = farma::DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a CSV produced by the other subcommands as an SVG line plot.
    Plotdata {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Number of eigenfunctions to draw.
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read per-minute measurements and produce a smoothed, mean-corrected series.
    Ingest {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long, default_value_t = 1440)]
        grid: usize,
        #[arg(long = "basis-size", default_value_t = farmakit::fnspace::DEFAULT_BASIS_SIZE)]
        basis_size: usize,
        #[arg(long)]
        keep_weekends: bool,
        #[arg(long)]
        no_weekday_mean: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate per-minute measurements whose daily curves follow a model.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value = "2014-01-06")]
        start: NaiveDate,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        level: f64,
        /// Seven comma-separated offsets, Monday first.
        #[arg(long)]
        weekday_offsets: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        measurement_sd: f64,
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MaeArg {
    Integrated,
    Pointwise,
}

impl From<MaeArg> for MaeKind {
    fn from(m: MaeArg) -> Self {
        match m {
            MaeArg::Integrated => MaeKind::Integrated,
            MaeArg::Pointwise => MaeKind::PointwiseMean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Eigenfunctions,
    Forecast,
    Cv,
}

/// `a..b` (inclusive), `a`, or `a,b,c`. `K` in a range stands for `k_max`.
fn parse_range(s: &str, k_max: Option<usize>) -> Result<Vec<usize>> {
    let num = |t: &str| -> Result<usize> {
        let t = t.trim();
        if t == "K" {
            return k_max.ok_or_else(|| anyhow!("'K' is not available here"));
        }
        t.parse().with_context(|| format!("bad integer {t:?}"))
    };
    let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            bail!("empty range {s:?}");
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if v.is_empty() {
        bail!("empty range {s:?}");
    }
    Ok(v)
}

/// `(p,q),(p,q),...`
fn parse_orders(s: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for part in s.split(')') {
        let part = part.trim().trim_start_matches(',').trim();
        if part.is_empty() {
            continue;
        }
        let inner = part
            .strip_prefix('(')
            .ok_or_else(|| anyhow!("orders must look like (p,q),(p,q): {s:?}"))?;
        let (p, q) = inner
            .split_once(',')
            .ok_or_else(|| anyhow!("order {part:?} needs two entries"))?;
        out.push((
            p.trim().parse().with_context(|| format!("bad p in {part:?}"))?,
            q.trim().parse().with_context(|| format!("bad q in {part:?}"))?,
        ));
    }
    if out.is_empty() {
        bail!("no orders given");
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load_series(path: &Path) -> Result<FunctionSeries> {
    io::load_series(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<farma::FarmaModel> {
    io::load_model(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { model, n, seed, burn_in, out } => {
            let m = load_model(&model)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sim = farma::simulate(&m, n, burn_in, &mut rng)?;
            let mut w = create(&out)?;
            io::write_series(&sim.series, &mut w)?;
            w.flush()?;
        }
        Cmd::Fit { series, d, p, q, out } => {
            let s = load_series(&series)?;
            let eig = fpca::eigendecompose(&fpca::estimate_covariance(&s)?)?;
            let scores = fpca::compute_scores(&s, &eig, d)?;
            let m = varma::fit_varma(scores.matrix(), p, q)?;
            let diag = m.diagnostics();
            if diag.short_sample {
                eprintln!("warning: {} samples is short for d = {d}, p + q = {}", diag.n, p + q);
            }
            if !diag.stationary {
                eprintln!("warning: fitted model is not stationary (spectral radius {:.4})", diag.spectral_radius);
            }
            let mut w = create(&out)?;
            io::write_varma(&m, &mut w)?;
            w.flush()?;
        }
        Cmd::Predict { series, d, p, q, h, out, backtest } => {
            let s = load_series(&series)?;
            let eig = fpca::eigendecompose(&fpca::estimate_covariance(&s)?)?;
            let res = forecast::algorithm1(&s, &eig, d, p, q, h)?;
            let label = s.start() + s.len() as i64 - 1 + h as i64;
            let f = FunctionSeries::new(s.basis(), label, vec![res.forecast])?;
            let mut w = create(&out)?;
            io::write_series(&f, &mut w)?;
            w.flush()?;
            if let Some(k) = backtest {
                let config = ForecastConfig {
                    d_grid: vec![d],
                    order_grid: vec![(p, q)],
                    horizon: h,
                    holdout: k,
                    ..ForecastConfig::default()
                };
                let table = forecast::rolling_cv(&s, None, &config)?;
                let row = &table.rows[0];
                if let Some(msg) = &row.failure {
                    bail!("backtest failed: {msg}");
                }
                let last = forecast::baseline_cv(&s, k, h, Baseline::LastValue, config.mae_kind)?;
                let mean = forecast::baseline_cv(&s, k, h, Baseline::Mean, config.mae_kind)?;
                println!("model rmse={} mae={}", row.rmse, row.mae);
                println!("last_value rmse={} mae={}", last.rmse, last.mae);
                println!("mean rmse={} mae={}", mean.rmse, mean.mae);
            }
        }
        Cmd::Cv { series, d, orders, holdout, h, mae, freeze_eigen, cpv, threads, out } => {
            let s = load_series(&series)?;
            let config = ForecastConfig {
                d_grid: parse_range(&d, Some(s.basis().size()))?,
                order_grid: parse_orders(&orders)?,
                horizon: h,
                holdout,
                cpv_threshold: cpv,
                mae_kind: mae.into(),
                threads,
            };
            let frozen = if freeze_eigen {
                Some(fpca::eigendecompose(&fpca::estimate_covariance(&s)?)?)
            } else {
                None
            };
            let table = forecast::rolling_cv(&s, frozen.as_ref(), &config)?;
            for r in table.rows.iter().filter(|r| r.failure.is_some()) {
                eprintln!("cell d={} p={} q={} failed: {}", r.d, r.p, r.q, r.failure.as_deref().unwrap_or(""));
            }
            let mut w = create(&out)?;
            io::write_table(&table, &mut w)?;
            w.flush()?;
            if let Some(dc) = table.cpv_d {
                println!("cpv d={dc}");
            }
            if let Some(b) = table.best_by_rmse() {
                println!("best rmse d={} p={} q={} rmse={}", b.d, b.p, b.q, b.rmse);
            }
            if let Some(b) = table.best_by_mae() {
                println!("best mae d={} p={} q={} mae={}", b.d, b.p, b.q, b.mae);
            }
        }
        Cmd::Bounds { model, d_range, reps, n, seed, burn_in, threads, out } => {
            let m = load_model(&model)?;
            let config = BoundConfig {
                d_values: parse_range(&d_range, Some(m.basis().size()))?,
                n,
                reps,
                seed,
                burn_in,
            };
            let reports = forecast::run_parallel(threads, || forecast::bound_experiment(&m, &config))??;
            let mut w = create(&out)?;
            io::write_bounds(&reports, &mut w)?;
            w.flush()?;
        }
        Cmd::Plotdata { input, kind, d, out } => {
            let chart = match kind {
                PlotKind::Eigenfunctions => {
                    let s = load_series(&input)?;
                    let eig = fpca::eigendecompose(&fpca::estimate_covariance(&s)?)?;
                    let lines = (0..d.min(eig.len()))
                        .map(|j| -> Result<svg::Line> {
                            let f = eig.eigenfunction(j)?;
                            Ok(curve(format!("ν{} (λ={:.3})", j + 1, eig.eigenvalues()[j]), s.basis(), f.eval_grid().as_slice()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    svg::line_chart("Eigenfunctions", "t", "value", &lines)
                }
                PlotKind::Forecast => {
                    let s = load_series(&input)?;
                    let lines: Vec<_> = s
                        .samples()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| curve(format!("day {}", s.index_of(i)), s.basis(), x.eval_grid().as_slice()))
                        .collect();
                    svg::line_chart("Functional samples", "t", "value", &lines)
                }
                PlotKind::Cv => {
                    let f = File::open(&input).with_context(|| format!("reading {}", input.display()))?;
                    let rows = io::read_table(f)?;
                    let mut orders: Vec<(usize, usize)> = rows.iter().map(|r| (r.p, r.q)).collect();
                    orders.sort();
                    orders.dedup();
                    let lines: Vec<_> = orders
                        .iter()
                        .map(|&(p, q)| {
                            let mut pts: Vec<(f64, f64)> = rows
                                .iter()
                                .filter(|r| r.p == p && r.q == q)
                                .map(|r| (r.d as f64, r.rmse))
                                .collect();
                            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                            svg::Line { label: format!("ARMA({p},{q})"), points: pts }
                        })
                        .collect();
                    svg::line_chart("Cross-validated RMSE", "d", "RMSE", &lines)
                }
            };
            std::fs::write(&out, chart).with_context(|| format!("cannot write {}", out.display()))?;
        }
        Cmd::Ingest { raw, grid, basis_size, keep_weekends, no_weekday_mean, out } => {
            let config = IngestConfig { grid_size: grid, ..IngestConfig::default() };
            let data = ingest::ingest(&raw, &config).with_context(|| format!("reading {}", raw.display()))?;
            let basis = BasisSpec::fourier_uniform(basis_size, grid)?;
            let opts = PreprocessOptions {
                weekday_mean: !no_weekday_mean,
                weekdays_only: !keep_weekends,
            };
            let (series, report) = ingest::preprocess(&data, opts, &basis)?;
            let mut w = create(&out)?;
            io::write_series(&series, &mut w)?;
            w.flush()?;
            println!(
                "days input={} kept={} dropped_missing={} dropped_weekend={} interpolated_values={}",
                report.input_days, report.kept, report.dropped_missing, report.dropped_weekend, report.interpolated_values
            );
            for d in &data.dropped {
                println!("dropped {} ({} missing)", d.date, d.missing);
            }
            println!(
                "variance drift: window={} variances={:?} max_ratio={:.3}",
                report.drift.window, report.drift.window_variances, report.drift.max_ratio
            );
        }
        Cmd::Synth { model, days, start, seed, level, weekday_offsets, measurement_sd, missing_rate, out } => {
            let m = load_model(&model)?;
            let mut config = SynthConfig::new(start, days);
            config.level = vec![level];
            config.measurement_sd = measurement_sd;
            config.missing_rate = missing_rate;
            if let Some(s) = weekday_offsets {
                let v: Vec<f64> = s
                    .split(',')
                    .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad offset {t:?}")))
                    .collect::<Result<_>>()?;
                config.weekday_offsets = v
                    .try_into()
                    .map_err(|_| anyhow!("--weekday-offsets needs exactly seven values"))?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records = ingest::synth_raw_days(&m, &config, &mut rng)?;
            let mut w = create(&out)?;
            ingest::write_raw_csv(&records, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn curve(label: String, basis: &BasisSpec, values: &[f64]) -> svg::Line {
    svg::Line {
        label,
        points: basis.grid().iter().copied().zip(values.iter().copied()).collect(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
