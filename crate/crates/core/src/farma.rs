//! Functional ARMA(p, q) models: definition, simulation, the explicit causal
//! solution, and the projection onto the first `d` principal directions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fnspace::{check_same_basis, BasisSpec, FunctionSample, FunctionSeries};
use crate::fpca::EigenSystem;
use crate::hsop::{
    check_contraction, op_norm, state_space_lift, ContractionCertificate, KernelOperator,
    DEFAULT_CONTRACTION_DEPTH,
};
use crate::linalg;
use crate::varma;

/// Default number of discarded warm-up steps in [`simulate`].
pub const DEFAULT_BURN_IN: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseKind {
    /// Independent Gaussian innovations with covariance `C_ε`.
    #[default]
    GaussianSwn,
}

/// `X_n = Σ φ_i X_{n-i} + ε_n + Σ θ_j ε_{n-j}` on the truncated space.
#[derive(Clone, Debug)]
pub struct FarmaModel {
    basis: Arc<BasisSpec>,
    phis: Vec<KernelOperator>,
    thetas: Vec<KernelOperator>,
    noise_cov: KernelOperator,
    noise_kind: NoiseKind,
    certificate: Option<ContractionCertificate>,
}

impl FarmaModel {
    pub fn new(
        phis: Vec<KernelOperator>,
        thetas: Vec<KernelOperator>,
        noise_cov: KernelOperator,
    ) -> Result<Self> {
        let basis = Arc::clone(noise_cov.basis());
        for op in phis.iter().chain(&thetas) {
            check_same_basis(&basis, op.basis())?;
        }
        linalg::check_symmetric(noise_cov.mat())?;
        // validates positive semidefiniteness
        linalg::psd_sqrt(noise_cov.mat())?;
        let certificate = if phis.is_empty() {
            Some(ContractionCertificate {
                j0: 1,
                norm: 0.0,
                max_lower_power_norm: 1.0,
            })
        } else {
            let (phi_tilde, _) = state_space_lift(&phis, &thetas)?;
            check_contraction(&phi_tilde, DEFAULT_CONTRACTION_DEPTH)
        };
        Ok(Self {
            basis,
            phis,
            thetas,
            noise_cov,
            noise_kind: NoiseKind::GaussianSwn,
            certificate,
        })
    }

    pub fn p(&self) -> usize {
        self.phis.len()
    }

    pub fn q(&self) -> usize {
        self.thetas.len()
    }

    pub fn basis(&self) -> &Arc<BasisSpec> {
        &self.basis
    }

    pub fn phis(&self) -> &[KernelOperator] {
        &self.phis
    }

    pub fn thetas(&self) -> &[KernelOperator] {
        &self.thetas
    }

    pub fn noise_cov(&self) -> &KernelOperator {
        &self.noise_cov
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind
    }

    /// `σ²_ε = E‖ε‖² = trace(C_ε)`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_cov.trace()
    }

    pub fn certificate(&self) -> Option<&ContractionCertificate> {
        self.certificate.as_ref()
    }

    fn require_certificate(&self) -> Result<&ContractionCertificate> {
        self.certificate.as_ref().ok_or_else(|| {
            Error::NotCausal(
                "no j0 ≤ 64 with ‖φ̃^j0‖ < 1; run check_contraction on the lifted \
                 autoregressive operator with a larger depth or choose smaller operators"
                    .into(),
            )
        })
    }

    /// Autocovariance operators `C_{X_h, X_0} = E[X_h ⊗ X_0]`, `h = 0..=max_lag`,
    /// as coordinate matrices.
    pub fn autocovariances(&self, max_lag: usize) -> Result<Vec<DMatrix<f64>>> {
        self.require_certificate()?;
        let phis: Vec<_> = self.phis.iter().map(|o| o.mat().clone()).collect();
        let thetas: Vec<_> = self.thetas.iter().map(|o| o.mat().clone()).collect();
        linalg::arma_autocovariances(&phis, &thetas, self.noise_cov.mat(), max_lag)
    }

    /// Covariance operator `C_X` of the stationary solution.
    pub fn covariance(&self) -> Result<KernelOperator> {
        let g = self.autocovariances(0)?;
        KernelOperator::new(linalg::symmetrize(&g[0]), &self.basis)
    }
}

/// Output of [`simulate`]: the observed series (time labels `1..=n`) and the
/// full innovation sequence including warm-up (labels `1-burn_in..=n`).
#[derive(Clone, Debug)]
pub struct Simulation {
    pub series: FunctionSeries,
    pub noise: FunctionSeries,
}

/// Draw `n` innovations with covariance `C_ε`.
pub fn draw_noise<R: Rng + ?Sized>(
    noise_cov: &KernelOperator,
    n: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let root = linalg::psd_sqrt(noise_cov.mat())?;
    let k = root.nrows();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut *rng));
            &root * z
        })
        .collect())
}

/// Run the ARMA recursion from a zero state for `burn_in + n` steps and keep
/// the last `n`.
pub fn simulate<R: Rng + ?Sized>(
    model: &FarmaModel,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Simulation> {
    model.require_certificate()?;
    let total = n + burn_in;
    let eps = draw_noise(&model.noise_cov, total, rng)?;
    let xs = run_recursion(model, &eps);
    let b = &model.basis;
    let to_samples = |v: &[DVector<f64>]| -> Result<Vec<FunctionSample>> {
        v.iter().map(|c| FunctionSample::new(c.clone(), b)).collect()
    };
    let series = FunctionSeries::new(b, 1, to_samples(&xs[burn_in..])?)?;
    let noise = FunctionSeries::new(b, 1 - burn_in as i64, to_samples(&eps)?)?;
    Ok(Simulation { series, noise })
}

/// The recursion with zero pre-sample values, driven by `eps`.
fn run_recursion(model: &FarmaModel, eps: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(eps.len());
    for t in 0..eps.len() {
        let mut x = eps[t].clone();
        for (i, phi) in model.phis.iter().enumerate() {
            if t > i {
                x += phi.mat() * &xs[t - 1 - i];
            }
        }
        for (j, theta) in model.thetas.iter().enumerate() {
            if t > j {
                x += theta.mat() * &eps[t - 1 - j];
            }
        }
        xs.push(x);
    }
    xs
}

/// Truncated causal representation `X_n = Σ_{j≤J} C_j ε_{n-j}` for `p = 1`,
/// with `C_j = Σ_{k≤min(j,q)} φ^{j-k} θ_k` (`θ_0 = I`), i.e.
/// `C_j = φ^{j-q} β(φ, θ)` once `j ≥ q`.
///
/// Output carries the same time labels as `noise`; innovations before the
/// first one supplied are taken as zero.
pub fn causal_solution(model: &FarmaModel, noise: &FunctionSeries, j_trunc: usize) -> Result<FunctionSeries> {
    if model.p() != 1 {
        return Err(Error::Unsupported(format!(
            "causal_solution needs p = 1 (got p = {}); use causal_solution_lifted",
            model.p()
        )));
    }
    model.require_certificate()?;
    if j_trunc < model.q() {
        return Err(Error::InvalidArgument(format!(
            "truncation J = {j_trunc} must be at least q = {}",
            model.q()
        )));
    }
    check_same_basis(&model.basis, noise.basis())?;
    let phi = model.phis[0].mat();
    let k = phi.nrows();
    let mut thetas = vec![DMatrix::identity(k, k)];
    thetas.extend(model.thetas.iter().map(|t| t.mat().clone()));
    let q = model.q();

    // β(φ, θ) = Σ_{k≤q} φ^{q-k} θ_k
    let mut coeffs: Vec<DMatrix<f64>> = Vec::with_capacity(j_trunc + 1);
    for j in 0..q {
        let mut c = DMatrix::zeros(k, k);
        for (kk, th) in thetas.iter().enumerate().take(j + 1) {
            c += linalg::mat_pow(phi, (j - kk) as u32) * th;
        }
        coeffs.push(c);
    }
    let mut beta = DMatrix::zeros(k, k);
    for (kk, th) in thetas.iter().enumerate() {
        beta += linalg::mat_pow(phi, (q - kk) as u32) * th;
    }
    let mut c = beta;
    for _ in q..=j_trunc {
        coeffs.push(c.clone());
        c = phi * c;
    }
    apply_filter(&coeffs, noise, &model.basis, |m| m.clone())
}

/// Truncated causal representation for general `p`, via the lifted AR(1) form
/// on `H^p`: the filter coefficients are the top-left blocks of
/// `Σ φ̃^{j-k} θ̃_k`.
pub fn causal_solution_lifted(
    model: &FarmaModel,
    noise: &FunctionSeries,
    j_trunc: usize,
) -> Result<FunctionSeries> {
    model.require_certificate()?;
    check_same_basis(&model.basis, noise.basis())?;
    if model.p() == 0 {
        let k = model.basis.size();
        let mut coeffs = vec![DMatrix::identity(k, k)];
        coeffs.extend(model.thetas.iter().map(|t| t.mat().clone()));
        coeffs.truncate(j_trunc + 1);
        return apply_filter(&coeffs, noise, &model.basis, |m| m.clone());
    }
    let (phi_t, theta_t) = state_space_lift(&model.phis, &model.thetas)?;
    let pt = phi_t.to_dense();
    let n = pt.nrows();
    let k = model.basis.size();
    let mut thetas = vec![{
        let mut e = DMatrix::zeros(n, n);
        e.view_mut((0, 0), (k, k)).fill_with_identity();
        e
    }];
    thetas.extend(theta_t.iter().map(|t| t.to_dense()));
    // ψ̃_j = Σ_{k≤min(j,q)} φ̃ ψ̃ recursion: ψ̃_j = φ̃ ψ̃_{j-1} + θ̃_j
    let mut coeffs = Vec::with_capacity(j_trunc + 1);
    let mut prev = thetas[0].clone();
    coeffs.push(prev.clone());
    for j in 1..=j_trunc {
        let mut c = &pt * &prev;
        if j < thetas.len() {
            c += &thetas[j];
        }
        coeffs.push(c.clone());
        prev = c;
    }
    apply_filter(&coeffs, noise, &model.basis, |m| m.view((0, 0), (k, k)).into_owned())
}

fn apply_filter(
    coeffs: &[DMatrix<f64>],
    noise: &FunctionSeries,
    basis: &Arc<BasisSpec>,
    block: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<FunctionSeries> {
    let c: Vec<DMatrix<f64>> = coeffs.iter().map(block).collect();
    let eps = noise.samples();
    let mut out = Vec::with_capacity(eps.len());
    for t in 0..eps.len() {
        let mut x = DVector::zeros(basis.size());
        for (j, cj) in c.iter().enumerate() {
            if j > t {
                break;
            }
            x += cj * eps[t - j].coeffs();
        }
        out.push(FunctionSample::new(x, basis)?);
    }
    FunctionSeries::new(basis, noise.start(), out)
}

/// Operators conjugated into the eigenbasis and split into the leading
/// `d × d` blocks and the `d × (K-d)` tail blocks.
#[derive(Clone, Debug)]
pub struct ProjectedModel {
    pub d: usize,
    pub phis: Vec<DMatrix<f64>>,
    pub thetas: Vec<DMatrix<f64>>,
    pub phis_tail: Vec<DMatrix<f64>>,
    pub thetas_tail: Vec<DMatrix<f64>>,
    /// Covariance of the leading noise scores `𝐄_n`.
    pub noise_cov: DMatrix<f64>,
    /// `C_ε` in eigen-coordinates (all `K` directions).
    pub noise_cov_full: DMatrix<f64>,
}

fn full_eigen(eig: &EigenSystem, model: &FarmaModel) -> Result<()> {
    check_same_basis(&model.basis, eig.basis())?;
    if eig.len() != model.basis.size() {
        return Err(Error::Dimension(format!(
            "projection needs all {} eigenfunctions, eigensystem has {}",
            model.basis.size(),
            eig.len()
        )));
    }
    Ok(())
}

pub fn project_model(model: &FarmaModel, eig: &EigenSystem, d: usize) -> Result<ProjectedModel> {
    full_eigen(eig, model)?;
    let k = model.basis.size();
    if d == 0 || d > k {
        return Err(Error::InvalidArgument(format!("d = {d} must lie in 1..={k}")));
    }
    let v = eig.vectors();
    let conj = |m: &DMatrix<f64>| v.transpose() * m * v;
    let head = |m: &DMatrix<f64>| m.view((0, 0), (d, d)).into_owned();
    let tail = |m: &DMatrix<f64>| m.view((0, d), (d, k - d)).into_owned();
    let phis_c: Vec<_> = model.phis.iter().map(|o| conj(o.mat())).collect();
    let thetas_c: Vec<_> = model.thetas.iter().map(|o| conj(o.mat())).collect();
    let noise_full = linalg::symmetrize(&conj(model.noise_cov.mat()));
    Ok(ProjectedModel {
        d,
        phis: phis_c.iter().map(head).collect(),
        thetas: thetas_c.iter().map(head).collect(),
        phis_tail: phis_c.iter().map(tail).collect(),
        thetas_tail: thetas_c.iter().map(tail).collect(),
        noise_cov: head(&noise_full),
        noise_cov_full: noise_full,
    })
}

/// `Δ_{n-1} = Σ Φ_i^∞ 𝐗^∞_{n-i} + Σ Θ_j^∞ 𝐄^∞_{n-j}`.
///
/// Rows of `tail_scores` and `tail_noise` are time-aligned; `n` is the row of
/// the current time point.
pub fn delta_term(
    pm: &ProjectedModel,
    tail_scores: &DMatrix<f64>,
    tail_noise: &DMatrix<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    let p = pm.phis.len();
    let q = pm.thetas.len();
    let need = p.max(q);
    if n < need {
        return Err(Error::InsufficientData { needed: need, got: n });
    }
    let rows = |used: usize, m: &DMatrix<f64>| used == 0 || n - 1 < m.nrows();
    if !rows(p, tail_scores) || !rows(q, tail_noise) {
        return Err(Error::InsufficientData {
            needed: n,
            got: tail_scores.nrows().min(tail_noise.nrows()),
        });
    }
    let mut out = DVector::zeros(pm.d);
    for (i, m) in pm.phis_tail.iter().enumerate() {
        out += m * tail_scores.row(n - 1 - i).transpose();
    }
    for (j, m) in pm.thetas_tail.iter().enumerate() {
        out += m * tail_noise.row(n - 1 - j).transpose();
    }
    Ok(out)
}

/// Upper bound on `E‖Δ_{n-1}‖²`:
/// `c · (Σ‖φ_i‖² Σ_{l>d} λ_l + Σ‖θ_j‖² Σ_{l>d} ⟨C_ε ν_l, ν_l⟩)` with
/// `c = max(2, p + q)` from Cauchy-Schwarz over the `p + q` summands.
pub fn delta_bound(model: &FarmaModel, eig: &EigenSystem, d: usize) -> Result<f64> {
    let pm = project_model(model, eig, d)?;
    let k = model.basis.size();
    let lam_tail = eig.tail_sum(d);
    let noise_tail: f64 = (d..k).map(|l| pm.noise_cov_full[(l, l)]).sum::<f64>() + 0.0;
    let phi2: f64 = model.phis.iter().map(|o| op_norm(o).powi(2)).sum();
    let theta2: f64 = model.thetas.iter().map(|o| op_norm(o).powi(2)).sum();
    let c = (model.p() + model.q()).max(2) as f64;
    Ok(c * (phi2 * lam_tail + theta2 * noise_tail))
}

/// Outcome of [`exactness_check`].
#[derive(Clone, Debug)]
pub struct ExactnessReport {
    /// The leading scores follow an exact vector ARMA(p, q) recursion: every
    /// coupling block `Φ_i^∞ = P_{A_d} φ_i P_{A_d^⊥}` vanishes.
    pub exact: bool,
    /// `‖P_{A_d^⊥} φ_i P_{A_d^⊥}‖_F` per lag.
    pub compression_norms: Vec<f64>,
    /// `‖P_{A_d} φ_i P_{A_d^⊥}‖_F` per lag.
    pub coupling_norms: Vec<f64>,
    /// All compressions below tolerance.
    pub compression_vanishes: bool,
}

pub const EXACTNESS_TOLERANCE: f64 = 1e-10;

/// Checks whether the first `d` scores form an exact vector ARMA(p, q)
/// process. The compressions onto the orthogonal complement are reported as
/// well, but on their own they do not decide exactness: with a nonzero
/// coupling block the head reads the tail, which then feeds back as extra
/// autoregressive and moving-average terms.
pub fn exactness_check(model: &FarmaModel, eig: &EigenSystem, d: usize) -> Result<ExactnessReport> {
    full_eigen(eig, model)?;
    let k = model.basis.size();
    if d == 0 || d > k {
        return Err(Error::InvalidArgument(format!("d = {d} must lie in 1..={k}")));
    }
    let v = eig.vectors();
    let mut compression = Vec::new();
    let mut coupling = Vec::new();
    for phi in &model.phis {
        let c = v.transpose() * phi.mat() * v;
        compression.push(c.view((d, d), (k - d, k - d)).norm());
        coupling.push(c.view((0, d), (d, k - d)).norm());
    }
    let compression_vanishes = compression.iter().all(|n| *n < EXACTNESS_TOLERANCE);
    let exact = coupling.iter().all(|n| *n < EXACTNESS_TOLERANCE);
    Ok(ExactnessReport {
        exact,
        compression_norms: compression,
        coupling_norms: coupling,
        compression_vanishes,
    })
}

/// Residual process `𝐑_n = 𝐗_n − Σ Φ_i 𝐗_{n-i}` of the leading scores, rows
/// `p..N` of `head_scores`.
pub fn score_residuals(pm: &ProjectedModel, head_scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = pm.phis.len();
    let n = head_scores.nrows();
    if head_scores.ncols() != pm.d {
        return Err(Error::Dimension(format!(
            "scores have {} columns, projected model has d = {}",
            head_scores.ncols(),
            pm.d
        )));
    }
    if n <= p {
        return Err(Error::InsufficientData { needed: p + 1, got: n });
    }
    let mut r = DMatrix::zeros(n - p, pm.d);
    for t in p..n {
        let mut x = head_scores.row(t).transpose();
        for (i, m) in pm.phis.iter().enumerate() {
            x -= m * head_scores.row(t - 1 - i).transpose();
        }
        r.set_row(t - p, &x.transpose());
    }
    Ok(r)
}

/// Sample autocovariance at one lag with its Bartlett standard error under an
/// MA(q) hypothesis.
#[derive(Clone, Copy, Debug)]
pub struct LagDiagnostic {
    pub lag: usize,
    /// Frobenius norm of the sample autocovariance.
    pub norm: f64,
    /// `sqrt(Σ_{a,b} var Ĉ_h(a,b))` with
    /// `var Ĉ_h(a,b) ≈ (1/N) Σ_{|k|≤q} Ĉ_k(a,a) Ĉ_k(b,b)`.
    pub se: f64,
}

/// Lagged autocovariances of `residuals` beyond the MA order `q`, each with
/// its standard error under the hypothesis that they vanish.
pub fn ma_cutoff_diagnostics(residuals: &DMatrix<f64>, q: usize, lags: &[usize]) -> Result<Vec<LagDiagnostic>> {
    let max_lag = lags.iter().copied().max().unwrap_or(0).max(q);
    let ac = varma::sample_autocov(residuals, max_lag)?;
    let n = residuals.nrows() as f64;
    let d = residuals.ncols();
    let mut var_sum = 0.0;
    for a in 0..d {
        for b in 0..d {
            let mut v = ac.get(0)[(a, a)] * ac.get(0)[(b, b)];
            for k in 1..=q {
                v += 2.0 * ac.get(k as isize)[(a, a)] * ac.get(k as isize)[(b, b)];
            }
            var_sum += v.max(0.0) / n;
        }
    }
    let se = var_sum.sqrt();
    Ok(lags
        .iter()
        .map(|&h| LagDiagnostic {
            lag: h,
            norm: ac.get(h as isize).norm(),
            se,
        })
        .collect())
}
