//! Vector ARMA models on score space: autocovariances, fitting, and best
//! linear prediction (Durbin-Levinson, Innovations, and a direct solve).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// `Γ(h) = E[X_{t+h} X_tᵀ]` for `h = 0..=max_lag`; negative lags are
/// `Γ(-h) = Γ(h)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Autocovariances {
    lags: Vec<DMatrix<f64>>,
}

impl Autocovariances {
    pub fn new(lags: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = lags.first() else {
            return Err(Error::InvalidArgument("need at least the lag-0 autocovariance".into()));
        };
        let d = first.nrows();
        if lags.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::Dimension("autocovariance matrices must all be d×d".into()));
        }
        if lags.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("autocovariances must be finite".into()));
        }
        Ok(Self { lags })
    }

    pub fn dim(&self) -> usize {
        self.lags[0].nrows()
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    /// `Γ(h)`; lags beyond `max_lag` are zero.
    pub fn get(&self, h: isize) -> DMatrix<f64> {
        let a = h.unsigned_abs();
        match self.lags.get(a) {
            Some(m) if h >= 0 => m.clone(),
            Some(m) => m.transpose(),
            None => DMatrix::zeros(self.dim(), self.dim()),
        }
    }

    fn require(&self, lag: usize) -> Result<()> {
        if self.max_lag() < lag {
            return Err(Error::InsufficientData {
                needed: lag,
                got: self.max_lag(),
            });
        }
        Ok(())
    }
}

/// `Ĉ_h = (1/N) Σ_n 𝐗_{n+h} 𝐗_nᵀ` for rows of `scores`.
pub fn sample_autocov(scores: &DMatrix<f64>, max_lag: usize) -> Result<Autocovariances> {
    let n = scores.nrows();
    if n <= max_lag {
        return Err(Error::InsufficientData {
            needed: max_lag + 1,
            got: n,
        });
    }
    let d = scores.ncols();
    let lags = (0..=max_lag)
        .map(|h| {
            let a = scores.rows(h, n - h);
            let b = scores.rows(0, n - h);
            if d == 0 {
                DMatrix::zeros(0, 0)
            } else {
                a.transpose() * b / n as f64
            }
        })
        .collect();
    Autocovariances::new(lags)
}

/// Spectral radius of the companion matrix of `(Φ_1, ..., Φ_p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationarityCheck {
    pub spectral_radius: f64,
    pub stationary: bool,
}

pub fn companion_matrix(phis: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phis.len();
    if p == 0 {
        return DMatrix::zeros(0, 0);
    }
    let d = phis[0].nrows();
    let mut c = DMatrix::zeros(d * p, d * p);
    for (i, m) in phis.iter().enumerate() {
        c.view_mut((0, i * d), (d, d)).copy_from(m);
    }
    if p > 1 {
        c.view_mut((d, 0), (d * (p - 1), d * (p - 1))).fill_with_identity();
    }
    c
}

pub fn companion_stationary(phis: &[DMatrix<f64>]) -> StationarityCheck {
    let r = linalg::spectral_radius(&companion_matrix(phis));
    StationarityCheck {
        spectral_radius: r,
        stationary: r < 1.0,
    }
}

/// Facts recorded while fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitDiagnostics {
    pub stationary: bool,
    pub spectral_radius: f64,
    /// Number of observations used.
    pub n: usize,
    /// `N < 10·d·(p+q)`: fewer observations than the usual rule of thumb.
    pub short_sample: bool,
    /// Long autoregression order used by Hannan-Rissanen (0 for pure AR).
    pub long_ar_order: usize,
}

/// `𝐗_t = Σ Φ_i 𝐗_{t-i} + 𝐄_t + Σ Θ_j 𝐄_{t-j}` with `Cov(𝐄) = Σ`.
#[derive(Clone, Debug)]
pub struct VarmaModel {
    phis: Vec<DMatrix<f64>>,
    thetas: Vec<DMatrix<f64>>,
    sigma: DMatrix<f64>,
    diagnostics: FitDiagnostics,
}

impl VarmaModel {
    pub fn new(phis: Vec<DMatrix<f64>>, thetas: Vec<DMatrix<f64>>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if phis.iter().chain(&thetas).any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::Dimension(format!("all coefficient matrices must be {d}×{d}")));
        }
        linalg::check_symmetric(&sigma)?;
        linalg::psd_sqrt(&sigma)?;
        let st = companion_stationary(&phis);
        Ok(Self {
            phis,
            thetas,
            sigma: linalg::symmetrize(&sigma),
            diagnostics: FitDiagnostics {
                stationary: st.stationary,
                spectral_radius: st.spectral_radius,
                n: 0,
                short_sample: false,
                long_ar_order: 0,
            },
        })
    }

    pub fn d(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn p(&self) -> usize {
        self.phis.len()
    }

    pub fn q(&self) -> usize {
        self.thetas.len()
    }

    pub fn phis(&self) -> &[DMatrix<f64>] {
        &self.phis
    }

    pub fn thetas(&self) -> &[DMatrix<f64>] {
        &self.thetas
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn is_stationary(&self) -> bool {
        self.diagnostics.stationary
    }

    fn require_stationary(&self) -> Result<()> {
        if !self.diagnostics.stationary {
            return Err(Error::NotCausal(format!(
                "VARMA model is not stationary (companion spectral radius {:.4})",
                self.diagnostics.spectral_radius
            )));
        }
        Ok(())
    }

    /// Model-implied autocovariances up to `max_lag`.
    pub fn autocovariances(&self, max_lag: usize) -> Result<Autocovariances> {
        self.require_stationary()?;
        Autocovariances::new(linalg::arma_autocovariances(
            &self.phis,
            &self.thetas,
            &self.sigma,
            max_lag,
        )?)
    }

    /// `P_n 𝐗_{n+h}` given rows `𝐗_1..𝐗_n` of `scores`, by the Innovations
    /// algorithm applied to the transformed process
    /// `W_t = 𝐗_t` (`t ≤ m`), `W_t = Φ(B)𝐗_t` (`t > m`), `m = max(p, q)`,
    /// whose autocovariances are banded. Cost is linear in `n`.
    pub fn predict(&self, scores: &DMatrix<f64>, h: usize) -> Result<DVector<f64>> {
        self.require_stationary()?;
        let n = scores.nrows();
        let d = self.d();
        if h == 0 {
            return Err(Error::InvalidArgument("horizon h must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if scores.ncols() != d {
            return Err(Error::Dimension(format!(
                "scores have {} columns, model has d = {d}",
                scores.ncols()
            )));
        }
        let (p, q) = (self.p(), self.q());
        let m = p.max(q);
        let gamma = self.autocovariances(2 * m + 1)?;
        let zero = DMatrix::<f64>::zeros(d, d);

        // MA part autocovariance of W beyond m: Σ_r Θ_{r+h} Σ Θ_rᵀ, Θ_0 = I
        let ma_cov = |lag: usize| -> DMatrix<f64> {
            if lag > q {
                return zero.clone();
            }
            let th = |r: usize| -> DMatrix<f64> {
                if r == 0 {
                    DMatrix::identity(d, d)
                } else {
                    self.thetas[r - 1].clone()
                }
            };
            let mut acc = zero.clone();
            for r in 0..=(q - lag) {
                acc += th(r + lag) * &self.sigma * th(r).transpose();
            }
            acc
        };
        let mixed = |i: usize, j: usize| -> DMatrix<f64> {
            // i > m ≥ j
            if i > 2 * m {
                return zero.clone();
            }
            let mut g = gamma.get(i as isize - j as isize);
            for (r, phi) in self.phis.iter().enumerate() {
                g -= phi * gamma.get(i as isize - (r + 1) as isize - j as isize);
            }
            g
        };
        let kappa = |i: usize, j: usize| -> DMatrix<f64> {
            if i <= m && j <= m {
                gamma.get(i as isize - j as isize)
            } else if j <= m {
                mixed(i, j)
            } else if i <= m {
                mixed(j, i).transpose()
            } else if i >= j {
                ma_cov(i - j)
            } else {
                ma_cov(j - i).transpose()
            }
        };

        let total = n + h - 1;
        // theta[k][j-1] = Θ_{k,j}; None stands for zero
        let mut theta: Vec<Vec<Option<DMatrix<f64>>>> = vec![Vec::new(); total + 1];
        let mut v: Vec<DMatrix<f64>> = Vec::with_capacity(total + 1);
        v.push(kappa(1, 1));
        let get = |theta: &Vec<Vec<Option<DMatrix<f64>>>>, k: usize, j: usize| -> Option<DMatrix<f64>> {
            theta[k].get(j - 1).cloned().flatten()
        };
        for k in 1..=total {
            theta[k] = vec![None; k];
            let lo = if k >= m { k.saturating_sub(q) } else { 0 };
            for l in lo..k {
                let mut num = kappa(k + 1, l + 1);
                for i in lo..l {
                    if let (Some(a), Some(b)) = (get(&theta, k, k - i), get(&theta, l, l - i)) {
                        num -= a * &v[i] * b.transpose();
                    }
                }
                theta[k][k - l - 1] = Some(linalg::right_solve_spd(&num, &v[l], "innovation covariance")?);
            }
            let mut vk = kappa(k + 1, k + 1);
            for l in lo..k {
                if let Some(a) = get(&theta, k, k - l) {
                    vk -= &a * &v[l] * a.transpose();
                }
            }
            v.push(linalg::symmetrize(&vk));
        }

        let x = |t: usize| -> DVector<f64> { scores.row(t - 1).transpose() };
        // one-step predictions X̂_1..X̂_n
        let mut xhat: Vec<DVector<f64>> = vec![DVector::zeros(d); n + 1];
        for k in 1..n {
            let mut pred = DVector::zeros(d);
            if k >= m {
                for (r, phi) in self.phis.iter().enumerate() {
                    pred += phi * x(k - r);
                }
            }
            let jmax = if k < m { k } else { q.min(k) };
            for j in 1..=jmax {
                if let Some(t) = get(&theta, k, j) {
                    pred += t * (x(k + 1 - j) - &xhat[k + 1 - j]);
                }
            }
            xhat[k + 1] = pred;
        }
        let innov = |t: usize| x(t) - &xhat[t];

        let mut future: Vec<DVector<f64>> = Vec::with_capacity(h);
        for s in 1..=h {
            let t = n + s;
            let k = t - 1;
            let mut pred = DVector::zeros(d);
            if k >= m {
                for (r, phi) in self.phis.iter().enumerate() {
                    let src = t - r - 1;
                    let val = if src <= n { x(src) } else { future[src - n - 1].clone() };
                    pred += phi * val;
                }
            }
            let jmax = if k < m { k } else { q.min(k) };
            for j in s..=jmax {
                if let Some(th) = get(&theta, k, j) {
                    pred += th * innov(t - j);
                }
            }
            future.push(pred);
        }
        Ok(future.pop().expect("h ≥ 1"))
    }
}

/// Fit a VARMA(p, q) model to the rows of `scores`.
///
/// Pure autoregressions use the multivariate Yule-Walker equations on the
/// sample autocovariances. With a moving-average part the Hannan-Rissanen
/// two-stage regression is used: a long autoregression of order
/// `min(10, N/10)` supplies residual proxies, then `𝐗_t` is regressed on
/// lagged values and lagged residuals.
pub fn fit_varma(scores: &DMatrix<f64>, p: usize, q: usize) -> Result<VarmaModel> {
    let n = scores.nrows();
    let d = scores.ncols();
    if d == 0 {
        return Err(Error::InvalidArgument("scores have no columns".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let short_sample = n < 10 * d * (p + q);
    let (phis, thetas, sigma, long) = if q == 0 {
        let (phis, sigma) = yule_walker(scores, p)?;
        (phis, Vec::new(), sigma, 0)
    } else {
        hannan_rissanen(scores, p, q)?
    };
    let mut model = VarmaModel::new(phis, thetas, sigma)?;
    model.diagnostics.n = n;
    model.diagnostics.short_sample = short_sample;
    model.diagnostics.long_ar_order = long;
    Ok(model)
}

fn yule_walker(scores: &DMatrix<f64>, p: usize) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let ac = sample_autocov(scores, p)?;
    let d = ac.dim();
    let g0 = ac.get(0);
    linalg::cholesky(&g0, "lag-0 sample covariance is singular")
        .map_err(|_| Error::Singular("lag-0 sample covariance is singular".into()))?;
    if p == 0 {
        return Ok((Vec::new(), g0));
    }
    // [Φ_1..Φ_p] T = [Γ(1)..Γ(p)], T_{ik} = Γ(k - i)
    let t = block_toeplitz(&ac, p);
    let mut r = DMatrix::zeros(d, d * p);
    for k in 0..p {
        r.view_mut((0, k * d), (d, d)).copy_from(&ac.get(k as isize + 1));
    }
    let w = solve_right(&r, &t)?;
    let phis: Vec<DMatrix<f64>> = (0..p).map(|i| w.view((0, i * d), (d, d)).into_owned()).collect();
    let mut sigma = g0;
    for (i, phi) in phis.iter().enumerate() {
        sigma -= phi * ac.get(i as isize + 1).transpose();
    }
    Ok((phis, linalg::symmetrize(&sigma)))
}

type HrFit = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DMatrix<f64>, usize);

fn hannan_rissanen(scores: &DMatrix<f64>, p: usize, q: usize) -> Result<HrFit> {
    let n = scores.nrows();
    let d = scores.ncols();
    let m = (n / 10).clamp(1, 10);
    if n <= m + q + 1 {
        return Err(Error::InsufficientData { needed: m + q + 2, got: n });
    }
    let (long, _) = yule_walker(scores, m)?;
    // residual proxies ê_t for t = m..n-1 (0-based rows)
    let mut resid = DMatrix::zeros(n, d);
    for t in m..n {
        let mut e = scores.row(t).transpose();
        for (i, a) in long.iter().enumerate() {
            e -= a * scores.row(t - 1 - i).transpose();
        }
        resid.set_row(t, &e.transpose());
    }
    let t0 = p.max(m + q);
    let rows = n - t0;
    let cols = d * (p + q);
    if rows <= cols {
        return Err(Error::InsufficientData {
            needed: t0 + cols + 1,
            got: n,
        });
    }
    let mut z = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, d);
    for (r, t) in (t0..n).enumerate() {
        y.set_row(r, &scores.row(t));
        for i in 0..p {
            z.view_mut((r, i * d), (1, d)).copy_from(&scores.row(t - 1 - i));
        }
        for j in 0..q {
            z.view_mut((r, (p + j) * d), (1, d)).copy_from(&resid.row(t - 1 - j));
        }
    }
    let mut zz = z.transpose() * &z;
    let scale = (zz.trace() / cols as f64).max(1.0);
    let (vals, _) = linalg::sorted_symmetric_eigen(&zz);
    let max = vals.first().copied().unwrap_or(0.0);
    let min = vals.last().copied().unwrap_or(0.0);
    if !(max > 0.0) || min <= max * 1e-13 {
        return Err(Error::Singular(
            "Hannan-Rissanen regression design is singular".into(),
        ));
    }
    for i in 0..cols {
        zz[(i, i)] += 1e-10 * scale;
    }
    let zy = z.transpose() * &y;
    let ch = linalg::cholesky(&zz, "Hannan-Rissanen normal equations")?;
    let b = ch.solve(&zy).transpose(); // d × cols
    let phis = (0..p).map(|i| b.view((0, i * d), (d, d)).into_owned()).collect();
    let thetas = (0..q)
        .map(|j| b.view((0, (p + j) * d), (d, d)).into_owned())
        .collect();
    let e = &y - &z * b.transpose();
    let sigma = e.transpose() * &e / rows as f64;
    Ok((phis, thetas, linalg::symmetrize(&sigma), m))
}

/// `dn × dn` matrix with block `(i, k) = Γ(k - i)`.
fn block_toeplitz(ac: &Autocovariances, n: usize) -> DMatrix<f64> {
    let d = ac.dim();
    let mut t = DMatrix::zeros(d * n, d * n);
    for i in 0..n {
        for k in 0..n {
            t.view_mut((i * d, k * d), (d, d))
                .copy_from(&ac.get(k as isize - i as isize));
        }
    }
    t
}

/// `r · t⁻¹` for a symmetric positive definite `t`.
fn solve_right(r: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::right_solve_spd(r, t, "block Toeplitz system")
        .map_err(|_| Error::Singular("block Toeplitz system is not positive definite".into()))
}

/// Coefficients `A_1..A_n` with `𝐗̂_{n+h} = Σ A_i 𝐗_i` and the prediction
/// mean-squared-error matrix.
#[derive(Clone, Debug)]
pub struct PredictorWeights {
    pub h: usize,
    /// `coefficients[i]` multiplies `𝐗_{i+1}`.
    pub coefficients: Vec<DMatrix<f64>>,
    pub mse: DMatrix<f64>,
}

impl PredictorWeights {
    pub fn n(&self) -> usize {
        self.coefficients.len()
    }

    pub fn apply(&self, scores: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        if scores.nrows() != n {
            return Err(Error::Dimension(format!(
                "weights were built for {n} observations, got {}",
                scores.nrows()
            )));
        }
        let d = self.mse.nrows();
        let mut out = DVector::zeros(d);
        for (i, a) in self.coefficients.iter().enumerate() {
            out += a * scores.row(i).transpose();
        }
        Ok(out)
    }

    /// Relative residual of the normal equations
    /// `Σ_i A_i Γ(i - k) = Γ(n + h - k)`, `k = 1..n`.
    pub fn orthogonality_residual(&self, ac: &Autocovariances) -> f64 {
        let n = self.n() as isize;
        let h = self.h as isize;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = ac.get(0).norm();
        for k in 1..=n {
            let target = ac.get(n + h - k);
            scale = scale.max(target.norm());
            let mut lhs = DMatrix::zeros(target.nrows(), target.ncols());
            for (i, a) in self.coefficients.iter().enumerate() {
                lhs += a * ac.get(i as isize + 1 - k);
            }
            worst = worst.max((lhs - target).norm());
        }
        worst / scale.max(f64::MIN_POSITIVE)
    }
}

/// Predictor weights together with the resulting prediction.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub weights: PredictorWeights,
    pub value: DVector<f64>,
}

fn check_inputs(ac: &Autocovariances, scores: &DMatrix<f64>, h: usize) -> Result<(usize, usize)> {
    let n = scores.nrows();
    let d = ac.dim();
    if h == 0 {
        return Err(Error::InvalidArgument("horizon h must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if scores.ncols() != d {
        return Err(Error::Dimension(format!(
            "scores have {} columns, autocovariances are {d}×{d}",
            scores.ncols()
        )));
    }
    ac.require(n + h - 1)?;
    linalg::cholesky(&ac.get(0), "lag-0 autocovariance")?;
    Ok((n, d))
}

fn mse_from_weights(ac: &Autocovariances, coefficients: &[DMatrix<f64>], n: usize, h: usize) -> DMatrix<f64> {
    let mut mse = ac.get(0);
    for (i, a) in coefficients.iter().enumerate() {
        // E[X_{n+h} X_{i+1}ᵀ] = Γ(n + h - i - 1)
        mse -= a * ac.get((n + h - i - 1) as isize).transpose();
    }
    linalg::symmetrize(&mse)
}

fn finish(ac: &Autocovariances, scores: &DMatrix<f64>, coefficients: Vec<DMatrix<f64>>, h: usize) -> Result<Prediction> {
    let n = scores.nrows();
    let mse = mse_from_weights(ac, &coefficients, n, h);
    let weights = PredictorWeights { h, coefficients, mse };
    let value = weights.apply(scores)?;
    Ok(Prediction { weights, value })
}

/// Best linear predictor of `𝐗_{n+h}` from `𝐗_1..𝐗_n` by the multivariate
/// Innovations algorithm.
pub fn innovations_predict(ac: &Autocovariances, scores: &DMatrix<f64>, h: usize) -> Result<Prediction> {
    let (n, d) = check_inputs(ac, scores, h)?;
    let total = n + h - 1;
    // theta[m][j-1] = Θ_{m,j}
    let mut theta: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); total + 1];
    let mut v: Vec<DMatrix<f64>> = vec![ac.get(0)];
    for m in 1..=total {
        let mut row = vec![DMatrix::zeros(d, d); m];
        for k in 0..m {
            // Θ_{m,m-k} = (Γ(m-k) − Σ_{j<k} Θ_{m,m-j} V_j Θ_{k,k-j}ᵀ) V_k⁻¹
            let mut num = ac.get((m - k) as isize);
            for j in 0..k {
                num -= &row[m - j - 1] * &v[j] * theta[k][k - j - 1].transpose();
            }
            row[m - k - 1] = linalg::right_solve_spd(&num, &v[k], "innovation covariance")?;
        }
        let mut vm = ac.get(0);
        for j in 0..m {
            vm -= &row[m - j - 1] * &v[j] * row[m - j - 1].transpose();
        }
        v.push(linalg::symmetrize(&vm));
        theta[m] = row;
    }

    // w[t] expresses X̂_t (t = 1..n) as a linear map on X_1..X_n, stored as
    // n blocks of d×d.
    let zero_w = || vec![DMatrix::<f64>::zeros(d, d); n];
    let mut w: Vec<Vec<DMatrix<f64>>> = vec![zero_w(); n + 1];
    let innovation = |w: &Vec<Vec<DMatrix<f64>>>, t: usize| -> Vec<DMatrix<f64>> {
        let mut u: Vec<DMatrix<f64>> = w[t].iter().map(|b| -b).collect();
        u[t - 1] += DMatrix::<f64>::identity(d, d);
        u
    };
    for m in 1..n {
        let mut acc = zero_w();
        for j in 1..=m {
            let u = innovation(&w, m + 1 - j);
            for (a, b) in acc.iter_mut().zip(&u) {
                *a += &theta[m][j - 1] * b;
            }
        }
        w[m + 1] = acc;
    }
    let mut coeffs = zero_w();
    for j in h..=total {
        let u = innovation(&w, n + h - j);
        for (a, b) in coeffs.iter_mut().zip(&u) {
            *a += &theta[total][j - 1] * b;
        }
    }
    finish(ac, scores, coeffs, h)
}

/// Best linear predictor of `𝐗_{n+h}` from `𝐗_1..𝐗_n` by the multivariate
/// Durbin-Levinson (Whittle) recursion; `h > 1` iterates one-step
/// predictors with future values replaced by their predictions.
pub fn durbin_levinson_predict(ac: &Autocovariances, scores: &DMatrix<f64>, h: usize) -> Result<Prediction> {
    let (n, d) = check_inputs(ac, scores, h)?;
    let total = n + h - 1;
    let g0 = ac.get(0);
    // forward Φ_{m,j} and backward Φ̃_{m,j}, j = 1..m
    let mut fwd: Vec<DMatrix<f64>> = Vec::new();
    let mut bwd: Vec<DMatrix<f64>> = Vec::new();
    let mut v = g0.clone();
    let mut vt = g0.clone();
    let mut sets: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(h);
    for m in 1..=total {
        let mut delta = ac.get(m as isize);
        for (j, f) in fwd.iter().enumerate() {
            delta -= f * ac.get((m - j - 1) as isize);
        }
        let phi_mm = linalg::right_solve_spd(&delta, &vt, "backward prediction error covariance")?;
        let phit_mm = linalg::right_solve_spd(&delta.transpose(), &v, "forward prediction error covariance")?;
        let mut nf = Vec::with_capacity(m);
        let mut nb = Vec::with_capacity(m);
        for k in 1..m {
            nf.push(&fwd[k - 1] - &phi_mm * &bwd[m - k - 1]);
            nb.push(&bwd[k - 1] - &phit_mm * &fwd[m - k - 1]);
        }
        nf.push(phi_mm.clone());
        nb.push(phit_mm.clone());
        v = linalg::symmetrize(&(&v - &phi_mm * delta.transpose()));
        vt = linalg::symmetrize(&(&vt - &phit_mm * &delta));
        fwd = nf;
        bwd = nb;
        if m >= n {
            sets.push(fwd.clone());
        }
    }
    if n == 0 {
        unreachable!();
    }

    // weights of X̂_{n+s}, s = 1..h, on X_1..X_n
    let mut preds: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(h);
    for s in 1..=h {
        let set = &sets[s - 1]; // order n + s - 1
        let mut acc = vec![DMatrix::<f64>::zeros(d, d); n];
        for (j, phi) in set.iter().enumerate() {
            let src = n + s - 1 - j; // time index of Y_{n+s-(j+1)}
            if src <= n {
                acc[src - 1] += phi;
            } else {
                for (a, b) in acc.iter_mut().zip(&preds[src - n - 1]) {
                    *a += phi * b;
                }
            }
        }
        preds.push(acc);
    }
    let coeffs = preds.pop().expect("h ≥ 1");
    finish(ac, scores, coeffs, h)
}

/// Best linear predictor by solving the block Toeplitz normal equations
/// `[A_1..A_n] T = [Γ(n+h-1)..Γ(h)]` directly.
pub fn brute_force_weights(ac: &Autocovariances, n: usize, h: usize) -> Result<PredictorWeights> {
    if h == 0 || n == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1 and h ≥ 1".into()));
    }
    ac.require(n + h - 1)?;
    let d = ac.dim();
    // T_{ik} = E[X_i X_kᵀ] = Γ(i - k)
    let mut t = DMatrix::zeros(d * n, d * n);
    for i in 0..n {
        for k in 0..n {
            t.view_mut((i * d, k * d), (d, d))
                .copy_from(&ac.get(i as isize - k as isize));
        }
    }
    let mut r = DMatrix::zeros(d, d * n);
    for k in 0..n {
        r.view_mut((0, k * d), (d, d))
            .copy_from(&ac.get((n + h - k - 1) as isize));
    }
    let w = solve_right(&r, &t)?;
    let coefficients: Vec<DMatrix<f64>> = (0..n).map(|i| w.view((0, i * d), (d, d)).into_owned()).collect();
    let mse = mse_from_weights(ac, &coefficients, n, h);
    Ok(PredictorWeights { h, coefficients, mse })
}

pub fn brute_force_blp(ac: &Autocovariances, scores: &DMatrix<f64>, h: usize) -> Result<DVector<f64>> {
    let d = ac.dim();
    if scores.ncols() != d {
        return Err(Error::Dimension(format!(
            "scores have {} columns, autocovariances are {d}×{d}",
            scores.ncols()
        )));
    }
    brute_force_weights(ac, scores.nrows(), h)?.apply(scores)
}
