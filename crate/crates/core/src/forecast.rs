//! Functional prediction through the scores: the end-to-end predictor,
//! error metrics, rolling cross-validation over `(d, p, q)`, the functional
//! best linear predictor for FAR(p), and Monte Carlo checks of the error
//! bounds.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::farma::{self, FarmaModel};
use crate::fnspace::{check_same_basis, FunctionSample, FunctionSeries};
use crate::fpca::{self, EigenSystem};
use crate::hsop::{op_norm, KernelOperator};
use crate::linalg;
use crate::varma::{self, Autocovariances, VarmaModel};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FARMAKIT_THREADS";

/// Result of [`algorithm1`].
#[derive(Clone, Debug)]
pub struct Algorithm1Output {
    pub forecast: FunctionSample,
    pub score_forecast: DVector<f64>,
    pub model: VarmaModel,
}

/// Predict `X_{n+h}` from a (mean-corrected) series: project onto the first
/// `d` eigenfunctions, fit a VARMA(p, q) to the scores, predict the scores
/// with the Innovations algorithm under the fitted model, and map back.
pub fn algorithm1(
    series: &FunctionSeries,
    eig: &EigenSystem,
    d: usize,
    p: usize,
    q: usize,
    h: usize,
) -> Result<Algorithm1Output> {
    let scores = fpca::compute_scores(series, eig, d)?;
    let model = varma::fit_varma(scores.matrix(), p, q)?;
    let s = model.predict(scores.matrix(), h)?;
    let forecast = fpca::reconstruct(&s, eig)?;
    Ok(Algorithm1Output {
        forecast,
        score_forecast: s,
        model,
    })
}

/// As [`algorithm1`], with the score autocovariances supplied directly.
pub fn algorithm1_with_autocov(
    series: &FunctionSeries,
    eig: &EigenSystem,
    d: usize,
    ac: &Autocovariances,
    h: usize,
) -> Result<FunctionSample> {
    let scores = fpca::compute_scores(series, eig, d)?;
    let pred = varma::innovations_predict(ac, scores.matrix(), h)?;
    fpca::reconstruct(&pred.value, eig)
}

/// `Σ_{j≤p} φ_j X_{n+1-j}`, the functional best linear predictor of a FAR(p)
/// process one step ahead.
pub fn functional_blp_far(model: &FarmaModel, series: &FunctionSeries, h: usize) -> Result<FunctionSample> {
    if model.q() != 0 {
        return Err(Error::Unsupported(
            "closed-form functional predictor is only available for q = 0".into(),
        ));
    }
    if h != 1 {
        return Err(Error::Unsupported(
            "closed-form functional predictor is only available for h = 1".into(),
        ));
    }
    check_same_basis(model.basis(), series.basis())?;
    let n = series.len();
    let p = model.p();
    if n < p.max(1) {
        return Err(Error::InsufficientData { needed: p.max(1), got: n });
    }
    let mut c = DVector::zeros(model.basis().size());
    for (j, phi) in model.phis().iter().enumerate() {
        c += phi.mat() * series.samples()[n - 1 - j].coeffs();
    }
    FunctionSample::new(c, model.basis())
}

/// The additive term `γ_{d;n;h}` of the prediction error bound.
#[derive(Clone, Debug)]
pub struct GammaBound {
    /// `Σ_{l>d} λ_l (4 g + 1)`.
    pub gamma: f64,
    /// `Σ_{l>d} λ_l (4 g² + 1)`, the form that the Cauchy-Schwarz chain
    /// actually produces; coincides with `gamma` at `g ∈ {0, 1}`.
    pub gamma_squared: f64,
    /// `4 (Σ‖g_{ni}‖_L)² (Σ_{l>d} √λ_l)² + Σ_{l>d} λ_l`.
    pub gamma_operator: f64,
    /// `g = Σ_i (Σ_{l>d} ‖g_{ni} ν_l‖²)^{1/2}`.
    pub g: f64,
    /// `(Σ_{l>d} ‖g_{ni} ν_l‖²)^{1/2}` per `i`.
    pub g_norms: Vec<f64>,
    pub tail_eigen_sum: f64,
}

/// Bound term for a FAR(p) model at `h = 1`, where the functional predictor
/// has `g_{ni} = φ_i` for `i ≤ p` and `g_{ni} = 0` otherwise.
pub fn gamma_bound(model: &FarmaModel, eig: &EigenSystem, d: usize, n: usize, h: usize) -> Result<GammaBound> {
    if model.q() != 0 || h != 1 {
        return Err(Error::Unsupported(
            "the bound term is only available for FAR(p) models and h = 1".into(),
        ));
    }
    check_same_basis(model.basis(), eig.basis())?;
    let k = model.basis().size();
    if eig.len() != k {
        return Err(Error::Dimension(format!(
            "need all {k} eigenpairs, eigensystem has {}",
            eig.len()
        )));
    }
    if d == 0 || d > k {
        return Err(Error::InvalidArgument(format!("d = {d} must lie in 1..={k}")));
    }
    if n < model.p() {
        return Err(Error::InsufficientData { needed: model.p(), got: n });
    }
    let v = eig.vectors();
    let lam = eig.eigenvalues();
    // empty float sums are -0.0
    let tail: f64 = lam[d..].iter().sum::<f64>() + 0.0;
    let sqrt_tail: f64 = lam[d..].iter().map(|l| l.sqrt()).sum();
    let g_norms: Vec<f64> = model
        .phis()
        .iter()
        .map(|phi| {
            (d..k)
                .map(|l| (phi.mat() * v.column(l)).norm_squared())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let g: f64 = g_norms.iter().sum();
    let op_sum: f64 = model.phis().iter().map(op_norm).sum();
    Ok(GammaBound {
        gamma: tail * (4.0 * g + 1.0),
        gamma_squared: tail * (4.0 * g * g + 1.0),
        gamma_operator: 4.0 * op_sum * op_sum * sqrt_tail * sqrt_tail + tail,
        g,
        g_norms,
        tail_eigen_sum: tail,
    })
}

/// How the mean absolute error integrates over the day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaeKind {
    /// `∫|X − X̂|` by the periodic trapezoid rule on the grid.
    #[default]
    Integrated,
    /// Mean of `|X − X̂|` over grid points.
    PointwiseMean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
}

pub fn error_metrics(actual: &FunctionSeries, predicted: &FunctionSeries, kind: MaeKind) -> Result<ErrorMetrics> {
    error_metrics_samples(actual.samples(), predicted.samples(), kind)
}

/// `RMSE = sqrt(mean ‖X − X̂‖²)`, `MAE = mean ∫|X − X̂|`.
pub fn error_metrics_samples(
    actual: &[FunctionSample],
    predicted: &[FunctionSample],
    kind: MaeKind,
) -> Result<ErrorMetrics> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} actual samples vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    for (a, p) in actual.iter().zip(predicted) {
        let e = a.sub(p)?;
        se += e.norm_squared();
        ae += match kind {
            MaeKind::Integrated => e.integrated_abs(),
            MaeKind::PointwiseMean => e.pointwise_mean_abs(),
        };
    }
    let n = actual.len() as f64;
    Ok(ErrorMetrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
    })
}

/// Settings for [`rolling_cv`].
#[derive(Clone, Debug)]
pub struct ForecastConfig {
    pub d_grid: Vec<usize>,
    pub order_grid: Vec<(usize, usize)>,
    pub horizon: usize,
    pub holdout: usize,
    pub cpv_threshold: f64,
    pub mae_kind: MaeKind,
    /// Upper bound on worker threads; `FARMAKIT_THREADS` caps it further.
    pub threads: Option<usize>,
}

/// The seven orders compared in the traffic study.
pub const DEFAULT_ORDERS: [(usize, usize); 7] = [(1, 0), (2, 0), (0, 1), (0, 2), (1, 1), (2, 1), (1, 2)];

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            d_grid: (2..=6).collect(),
            order_grid: DEFAULT_ORDERS.to_vec(),
            horizon: 1,
            holdout: 10,
            cpv_threshold: 0.8,
            mae_kind: MaeKind::Integrated,
            threads: None,
        }
    }
}

/// One `(d, p, q)` cell of the error table. Failed cells carry NaN errors and
/// the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub rmse: f64,
    pub mae: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub holdout: usize,
    /// Truncation level chosen by the CPV rule on the full-sample spectrum.
    pub cpv_d: Option<usize>,
}

impl ErrorTable {
    fn best_by(&self, key: impl Fn(&ErrorRow) -> f64) -> Option<&ErrorRow> {
        self.rows
            .iter()
            .filter(|r| r.failure.is_none() && key(r).is_finite())
            .min_by(|a, b| {
                key(a)
                    .total_cmp(&key(b))
                    .then((a.p + a.q).cmp(&(b.p + b.q)))
                    .then(a.d.cmp(&b.d))
            })
    }

    /// Cell with the smallest RMSE; ties go to smaller `p + q`, then smaller `d`.
    pub fn best_by_rmse(&self) -> Option<&ErrorRow> {
        self.best_by(|r| r.rmse)
    }

    pub fn best_by_mae(&self) -> Option<&ErrorRow> {
        self.best_by(|r| r.mae)
    }

    pub fn get(&self, d: usize, p: usize, q: usize) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.d == d && r.p == p && r.q == q)
    }
}

/// Number of worker threads allowed by the config and `FARMAKIT_THREADS`.
pub fn thread_cap(requested: Option<usize>) -> Option<usize> {
    let env = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0);
    match (requested.filter(|n| *n > 0), env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Run `f` inside a pool limited by [`thread_cap`], or on the global pool.
pub fn run_parallel<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match thread_cap(threads) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn validate_config(series: &FunctionSeries, config: &ForecastConfig) -> Result<()> {
    if config.d_grid.is_empty() || config.order_grid.is_empty() {
        return Err(Error::InvalidArgument("d and order grids must be nonempty".into()));
    }
    if config.holdout == 0 || config.horizon == 0 {
        return Err(Error::InvalidArgument("holdout and horizon must be at least 1".into()));
    }
    let n = series.len();
    if config.holdout + config.horizon + 1 >= n {
        return Err(Error::InsufficientData {
            needed: config.holdout + config.horizon + 2,
            got: n,
        });
    }
    Ok(())
}

/// Rolling-origin evaluation: for each of the last `holdout` samples, predict
/// it `horizon` steps ahead from everything before, for every `(d, p, q)`.
///
/// With `frozen` set, that eigensystem is used throughout; otherwise the
/// eigenbasis is re-estimated on each training window.
pub fn rolling_cv(series: &FunctionSeries, frozen: Option<&EigenSystem>, config: &ForecastConfig) -> Result<ErrorTable> {
    validate_config(series, config)?;
    let n = series.len();
    let h = config.horizon;
    let targets: Vec<usize> = (n - config.holdout..n).collect();

    let eigs: Vec<Arc<EigenSystem>> = match frozen {
        Some(e) => {
            check_same_basis(series.basis(), e.basis())?;
            vec![Arc::new(e.clone()); targets.len()]
        }
        None => targets
            .iter()
            .map(|&t| {
                let train = series.slice(0..t + 1 - h);
                fpca::eigendecompose(&fpca::estimate_covariance(&train)?).map(Arc::new)
            })
            .collect::<Result<_>>()?,
    };
    let full_eig = match frozen {
        Some(e) => e.clone(),
        None => fpca::eigendecompose(&fpca::estimate_covariance(series)?)?,
    };
    let cpv_d = fpca::cpv_select(full_eig.eigenvalues(), config.cpv_threshold).ok();

    let cells: Vec<(usize, usize, usize)> = config
        .d_grid
        .iter()
        .flat_map(|&d| config.order_grid.iter().map(move |&(p, q)| (d, p, q)))
        .collect();

    let eval_cell = |&(d, p, q): &(usize, usize, usize)| -> ErrorRow {
        let run = || -> Result<ErrorMetrics> {
            let mut actual = Vec::with_capacity(targets.len());
            let mut predicted = Vec::with_capacity(targets.len());
            for (i, &t) in targets.iter().enumerate() {
                let train = series.slice(0..t + 1 - h);
                let out = algorithm1(&train, &eigs[i], d, p, q, h)?;
                actual.push(series.samples()[t].clone());
                predicted.push(out.forecast);
            }
            error_metrics_samples(&actual, &predicted, config.mae_kind)
        };
        match run() {
            Ok(m) => ErrorRow {
                d,
                p,
                q,
                rmse: m.rmse,
                mae: m.mae,
                failure: None,
            },
            Err(e) => ErrorRow {
                d,
                p,
                q,
                rmse: f64::NAN,
                mae: f64::NAN,
                failure: Some(e.to_string()),
            },
        }
    };

    // par_iter().map().collect() preserves the input order, so the merge is
    // deterministic regardless of scheduling.
    let rows = run_parallel(config.threads, || cells.par_iter().map(eval_cell).collect::<Vec<_>>())?;
    Ok(ErrorTable {
        rows,
        holdout: config.holdout,
        cpv_d,
    })
}

/// Naive comparators for the rolling evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// `X̂_{n+h} = X_n`.
    LastValue,
    /// Mean of the training window.
    Mean,
}

pub fn baseline_cv(series: &FunctionSeries, holdout: usize, horizon: usize, baseline: Baseline, kind: MaeKind) -> Result<ErrorMetrics> {
    let config = ForecastConfig {
        holdout,
        horizon,
        ..ForecastConfig::default()
    };
    validate_config(series, &config)?;
    let n = series.len();
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    for t in n - holdout..n {
        let train = series.slice(0..t + 1 - horizon);
        let pred = match baseline {
            Baseline::LastValue => train.samples().last().expect("nonempty").clone(),
            Baseline::Mean => train.mean(),
        };
        actual.push(series.samples()[t].clone());
        predicted.push(pred);
    }
    error_metrics_samples(&actual, &predicted, kind)
}

/// Settings for [`bound_experiment`].
#[derive(Clone, Debug)]
pub struct BoundConfig {
    pub d_values: Vec<usize>,
    /// Number of observed samples used by the predictor.
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub burn_in: usize,
}

/// Monte Carlo check of `E‖X_{n+1} − X̂_{n+1}‖² ≤ σ² + γ` for one `d`.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub d: usize,
    /// `σ²_{n,1} = trace(C_ε)`.
    pub sigma2: f64,
    pub gamma: f64,
    pub gamma_squared: f64,
    pub gamma_operator: f64,
    pub empirical_mse: f64,
    /// Monte Carlo standard error of `empirical_mse`.
    pub se: f64,
    pub tail_eigen_sum: f64,
    pub g_norms: Vec<f64>,
    /// Mean of `‖𝐗̂_{n+1} − 𝐗̂^G_{n+1}‖²`, the gap between the score predictor
    /// and the scores of the functional predictor.
    pub predictor_gap: f64,
    pub predictor_gap_se: f64,
}

/// Simulate `reps` independent paths of a FAR(p) model and compare the
/// score-based predictor (true eigenpairs, true score autocovariances) with
/// the bound. Every `d` sees the same paths.
pub fn bound_experiment(model: &FarmaModel, config: &BoundConfig) -> Result<Vec<BoundReport>> {
    if model.q() != 0 {
        return Err(Error::Unsupported("bound experiments need a FAR(p) model".into()));
    }
    if config.reps < 2 || config.n == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least 2 replications".into()));
    }
    let k = model.basis().size();
    let cx = model.covariance()?;
    let eig = fpca::eigendecompose(&cx)?;
    let gammas = model.autocovariances(config.n)?;
    let v = eig.vectors().clone();
    let n = config.n;

    struct Setup {
        d: usize,
        weights: varma::PredictorWeights,
        bound: GammaBound,
    }
    let setups: Vec<Setup> = config
        .d_values
        .iter()
        .map(|&d| {
            if d == 0 || d > k {
                return Err(Error::InvalidArgument(format!("d = {d} must lie in 1..={k}")));
            }
            let vd = v.columns(0, d);
            let ac = Autocovariances::new(gammas.iter().map(|g| vd.transpose() * g * vd).collect())?;
            let weights = varma::brute_force_weights(&ac, n, 1)
                .or_else(|_| {
                    varma::durbin_levinson_predict(&ac, &DMatrix::zeros(n, d), 1).map(|p| p.weights)
                })?;
            Ok(Setup {
                d,
                weights,
                bound: gamma_bound(model, &eig, d, n, 1)?,
            })
        })
        .collect::<Result<_>>()?;

    // per replication: squared errors and gaps for each d
    let per_rep: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let sim = farma::simulate(model, n + 1, config.burn_in, &mut rng)?;
            let coeffs = sim.series.coefficient_matrix();
            let past = coeffs.rows(0, n).into_owned();
            let target = coeffs.row(n).transpose();
            let blp = functional_blp_far(model, &sim.series.slice(0..n), 1)?;
            let mut errs = Vec::with_capacity(setups.len());
            let mut gaps = Vec::with_capacity(setups.len());
            for s in &setups {
                let vd = v.columns(0, s.d);
                let scores = &past * vd;
                let pred = s.weights.apply(&scores)?;
                let func = vd * &pred;
                errs.push((&target - func).norm_squared());
                gaps.push((&pred - vd.transpose() * blp.coeffs()).norm_squared());
            }
            Ok((errs, gaps))
        })
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;

    let sigma2 = model.noise_variance();
    let reps = config.reps as f64;
    let mean_se = |vals: Vec<f64>| -> (f64, f64) {
        let m = vals.iter().sum::<f64>() / reps;
        let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1.0);
        (m, (var / reps).sqrt())
    };
    Ok(setups
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (mse, se) = mean_se(per_rep.iter().map(|r| r.0[i]).collect());
            let (gap, gap_se) = mean_se(per_rep.iter().map(|r| r.1[i]).collect());
            BoundReport {
                d: s.d,
                sigma2,
                gamma: s.bound.gamma,
                gamma_squared: s.bound.gamma_squared,
                gamma_operator: s.bound.gamma_operator,
                empirical_mse: mse,
                se,
                tail_eigen_sum: s.bound.tail_eigen_sum,
                g_norms: s.bound.g_norms.clone(),
                predictor_gap: gap,
                predictor_gap_se: gap_se,
            }
        })
        .collect())
}

/// `(I + θ²)⁻¹ θ C_{X_0}`: the lag-one covariance of an FMA(1) process whose
/// self-adjoint `θ` commutes with `C_ε`, expressed through `C_{X_0}`.
pub fn fma1_lag_one_from_cx0(theta: &DMatrix<f64>, cx0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = theta.nrows();
    let a = DMatrix::<f64>::identity(k, k) + theta * theta;
    let lu = a.lu();
    lu.solve(&(theta * cx0))
        .ok_or_else(|| Error::Singular("I + θ² is singular".into()))
}

/// [`fma1_lag_one_from_cx0`] for a model, after checking its premises:
/// `q = 1`, `p = 0`, `θ` self-adjoint and commuting with `C_ε`.
pub fn fma1_lag_one_covariance(model: &FarmaModel) -> Result<DMatrix<f64>> {
    if model.p() != 0 || model.q() != 1 {
        return Err(Error::Unsupported("needs an FMA(1) model".into()));
    }
    let th = model.thetas()[0].mat();
    let ce = model.noise_cov().mat();
    let scale = th.amax().max(1.0) * ce.amax().max(1.0);
    if linalg::asymmetry(th) > 1e-10 * scale || (th * ce - ce * th).amax() > 1e-10 * scale {
        return Err(Error::InvalidArgument(
            "θ must be self-adjoint and commute with C_ε".into(),
        ));
    }
    let cx0 = ce + th * ce * th.transpose();
    fma1_lag_one_from_cx0(th, &cx0)
}

/// Nilpotent moving-average operators of index two turn an FMA(1) process
/// into a FAR(1) process with the same operator: `X_n = θ X_{n-1} + ε_n`.
/// Returns that FAR(1) model, or an error if `θ² ≠ 0`.
pub fn nilpotent_ma_as_ar(model: &FarmaModel) -> Result<FarmaModel> {
    if model.p() != 0 || model.q() != 1 {
        return Err(Error::Unsupported("needs an FMA(1) model".into()));
    }
    let th = &model.thetas()[0];
    let sq = th.pow(2);
    if sq.mat().amax() > 1e-12 * th.mat().amax().max(1.0) {
        return Err(Error::InvalidArgument("θ² does not vanish".into()));
    }
    FarmaModel::new(
        vec![KernelOperator::new(th.mat().clone(), model.basis())?],
        vec![],
        model.noise_cov().clone(),
    )
}
