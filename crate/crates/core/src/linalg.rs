//! Dense matrix helpers shared by the operator, FPCA and VARMA code.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Largest absolute entry difference between `a` and `aᵀ`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Tolerance used when deciding whether a matrix is symmetric.
pub fn symmetry_tolerance(a: &DMatrix<f64>) -> f64 {
    1e-9 * a.amax().max(1.0)
}

pub fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = asymmetry(a);
    if asym > symmetry_tolerance(a) {
        return Err(Error::Asymmetric(asym));
    }
    Ok(())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenpairs of a symmetric matrix sorted by nonincreasing eigenvalue.
/// Equal eigenvalues keep the solver's order (stable sort).
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = symmetrize(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));
    let vals = idx.iter().map(|&i| eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Symmetric square root of a positive semidefinite matrix. Small negative
/// eigenvalues from rounding are clipped; clearly negative ones are an error.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    let (vals, vecs) = sorted_symmetric_eigen(a);
    let scale = vals.first().copied().unwrap_or(0.0).abs().max(1e-300);
    if let Some(min) = vals.last() {
        if *min < -1e-9 * scale.max(1.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min:e} is negative"
            )));
        }
    }
    let n = a.nrows();
    let mut d = DMatrix::zeros(n, n);
    for (i, v) in vals.iter().enumerate() {
        d[(i, i)] = v.max(0.0).sqrt();
    }
    Ok(&vecs * d * vecs.transpose())
}

/// Spectral radius via the real Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn mat_pow(a: &DMatrix<f64>, j: u32) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..j {
        out = &out * a;
    }
    out
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let s = symmetrize(a);
    Cholesky::new(s).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `b · a⁻¹` for symmetric positive definite `a`.
pub fn right_solve_spd(b: &DMatrix<f64>, a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let ch = cholesky(a, what)?;
    Ok(ch.solve(&b.transpose()).transpose())
}

/// Autocovariances `Γ(h) = E[X_{t+h} X_tᵀ]`, `h = 0..=max_lag`, of the causal
/// ARMA process `X_t = Σ φ_i X_{t-i} + ε_t + Σ θ_j ε_{t-j}` with
/// `Cov(ε) = sigma`, from its ψ-weights.
pub fn arma_autocovariances(
    phis: &[DMatrix<f64>],
    thetas: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
    max_lag: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let n = sigma.nrows();
    let psi = psi_weights(phis, thetas, n, 1e-15, 200_000)?;
    let mut out = Vec::with_capacity(max_lag + 1);
    let zero = DMatrix::zeros(n, n);
    // Γ(h) = Σ_j ψ_{j+h} Σ ψ_jᵀ
    let sp: Vec<DMatrix<f64>> = psi.iter().map(|p| sigma * p.transpose()).collect();
    for h in 0..=max_lag {
        let mut g = zero.clone();
        for j in 0..psi.len() {
            if j + h >= psi.len() {
                break;
            }
            g += &psi[j + h] * &sp[j];
        }
        out.push(g);
    }
    Ok(out)
}

/// Causal ψ-weights `ψ_0 = I`, `ψ_j = Σ φ_i ψ_{j-i} + θ_j`, truncated once the
/// autoregressive recursion has decayed below `tol` in every entry.
pub fn psi_weights(
    phis: &[DMatrix<f64>],
    thetas: &[DMatrix<f64>],
    n: usize,
    tol: f64,
    cap: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let p = phis.len();
    let q = thetas.len();
    let mut psi = vec![DMatrix::identity(n, n)];
    if p == 0 {
        psi.extend(thetas.iter().cloned());
        return Ok(psi);
    }
    let mut quiet = 0usize;
    let mut j = 1usize;
    loop {
        let mut m = if j <= q {
            thetas[j - 1].clone()
        } else {
            DMatrix::zeros(n, n)
        };
        for i in 1..=p.min(j) {
            m += &phis[i - 1] * &psi[j - i];
        }
        let small = m.amax() <= tol;
        psi.push(m);
        if j > q {
            if small {
                quiet += 1;
            } else {
                quiet = 0;
            }
            // p consecutive negligible weights beyond the MA part: the
            // recursion has died out.
            if quiet >= p {
                break;
            }
        }
        j += 1;
        if j > cap {
            return Err(Error::NotCausal(format!(
                "ψ-weights did not decay within {cap} lags"
            )));
        }
        if !psi[j - 1].amax().is_finite() {
            return Err(Error::NotCausal("ψ-weights diverged".into()));
        }
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_scalar_autocovariance_closed_form() {
        let phi = DMatrix::from_element(1, 1, 0.6);
        let sigma = DMatrix::from_element(1, 1, 2.0);
        let g = arma_autocovariances(&[phi], &[], &sigma, 3).unwrap();
        let g0 = 2.0 / (1.0 - 0.36);
        for (h, m) in g.iter().enumerate() {
            assert!((m[(0, 0)] - g0 * 0.6f64.powi(h as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn ma1_scalar_autocovariance_closed_form() {
        let th = DMatrix::from_element(1, 1, 0.5);
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let g = arma_autocovariances(&[], &[th], &sigma, 2).unwrap();
        assert!((g[0][(0, 0)] - 1.25).abs() < 1e-15);
        assert!((g[1][(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(g[2][(0, 0)], 0.0);
    }

    #[test]
    fn explosive_recursion_errors() {
        let phi = DMatrix::from_element(1, 1, 1.5);
        let sigma = DMatrix::from_element(1, 1, 1.0);
        assert!(arma_autocovariances(&[phi], &[], &sigma, 1).is_err());
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let s = psd_sqrt(&a).unwrap();
        assert!((&s * &s - &a).amax() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_sqrt(&bad).is_err());
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&a) - 0.5).abs() < 1e-12);
    }
}
