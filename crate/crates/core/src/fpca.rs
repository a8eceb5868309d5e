//! Covariance estimation, functional principal components and scores.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fnspace::{check_same_basis, BasisSpec, FunctionSample, FunctionSeries};
use crate::hsop::KernelOperator;
use crate::linalg;

/// Divisor used in the empirical covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CovarianceDivisor {
    /// `1/N`, appropriate for a known zero mean.
    #[default]
    N,
    NMinusOne,
}

/// Eigenpairs `(λ_j, ν_j)` of a covariance operator.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    /// Columns are the coordinate vectors of the eigenfunctions.
    vectors: DMatrix<f64>,
    basis: Arc<BasisSpec>,
}

impl EigenSystem {
    /// Build from explicit eigenpairs. Eigenvalues must be nonincreasing and
    /// nonnegative and the columns of `vectors` orthonormal.
    pub fn new(eigenvalues: Vec<f64>, vectors: DMatrix<f64>, basis: &Arc<BasisSpec>) -> Result<Self> {
        if vectors.nrows() != basis.size() || vectors.ncols() != eigenvalues.len() {
            return Err(Error::Dimension(format!(
                "eigenvector matrix is {}x{}, expected {}x{}",
                vectors.nrows(),
                vectors.ncols(),
                basis.size(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument("eigenvalues must be finite and nonnegative".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be nonincreasing".into()));
        }
        let gram = vectors.transpose() * &vectors;
        let m = vectors.ncols();
        if (gram - DMatrix::<f64>::identity(m, m)).amax() > 1e-9 {
            return Err(Error::InvalidArgument("eigenvectors are not orthonormal".into()));
        }
        Ok(Self {
            eigenvalues,
            vectors,
            basis: Arc::clone(basis),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `K × m` matrix whose columns are the eigenfunction coordinates.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn basis(&self) -> &Arc<BasisSpec> {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenfunction(&self, j: usize) -> Result<FunctionSample> {
        if j >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "eigenfunction index {j} out of range (have {})",
                self.len()
            )));
        }
        FunctionSample::new(self.vectors.column(j).into_owned(), &self.basis)
    }

    pub fn eigenfunctions(&self) -> Vec<FunctionSample> {
        (0..self.len())
            .map(|j| self.eigenfunction(j).expect("index in range"))
            .collect()
    }

    /// `Σ_{l≥d} λ_l` (0-based `d`, i.e. the tail after the first `d`).
    pub fn tail_sum(&self, d: usize) -> f64 {
        self.eigenvalues.iter().skip(d).sum::<f64>() + 0.0
    }

    fn check_d(&self, d: usize) -> Result<()> {
        if d == 0 || d > self.len() {
            return Err(Error::InvalidArgument(format!(
                "truncation level d = {d} must lie in 1..={}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// `(1/N) Σ c_n c_nᵀ` over the coefficient vectors.
pub fn estimate_covariance(series: &FunctionSeries) -> Result<KernelOperator> {
    estimate_covariance_with(series, CovarianceDivisor::N)
}

pub fn estimate_covariance_with(
    series: &FunctionSeries,
    divisor: CovarianceDivisor,
) -> Result<KernelOperator> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let c = series.coefficient_matrix();
    let denom = match divisor {
        CovarianceDivisor::N => n as f64,
        CovarianceDivisor::NMinusOne => (n - 1) as f64,
    };
    let cov = c.transpose() * &c / denom;
    KernelOperator::new(linalg::symmetrize(&cov), series.basis())
}

/// Full eigensystem of a symmetric positive semidefinite operator.
///
/// Eigenvalues are clipped at zero and sorted nonincreasing. Each eigenvector
/// is signed so that its largest-magnitude coordinate is positive.
pub fn eigendecompose(c: &KernelOperator) -> Result<EigenSystem> {
    let m = c.mat();
    linalg::check_symmetric(m)?;
    let (vals, mut vecs) = linalg::sorted_symmetric_eigen(m);
    for j in 0..vecs.ncols() {
        let mut best = 0usize;
        for i in 0..vecs.nrows() {
            // strict comparison keeps the first coordinate among near-equal maxima
            if vecs[(i, j)].abs() > vecs[(best, j)].abs() + 1e-12 {
                best = i;
            }
        }
        if vecs[(best, j)] < 0.0 {
            vecs.column_mut(j).neg_mut();
        }
    }
    let vals = vals.into_iter().map(|l| l.max(0.0)).collect();
    Ok(EigenSystem {
        eigenvalues: vals,
        vectors: vecs,
        basis: Arc::clone(c.basis()),
    })
}

/// Scores `𝐗_n = (⟨X_n, ν_1⟩, ..., ⟨X_n, ν_d⟩)` as rows of an `N × d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    scores: DMatrix<f64>,
}

impl ScoreSeries {
    pub fn new(scores: DMatrix<f64>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(Self { scores })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn d(&self) -> usize {
        self.scores.ncols()
    }

    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.nrows() == 0
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        self.scores.row(n).transpose()
    }
}

pub fn compute_scores(series: &FunctionSeries, eig: &EigenSystem, d: usize) -> Result<ScoreSeries> {
    eig.check_d(d)?;
    check_same_basis(series.basis(), &eig.basis)?;
    let v = eig.vectors.columns(0, d);
    ScoreSeries::new(series.coefficient_matrix() * v)
}

/// Scores of a single function on the first `d` eigenfunctions.
pub fn project_sample(x: &FunctionSample, eig: &EigenSystem, d: usize) -> Result<DVector<f64>> {
    eig.check_d(d)?;
    check_same_basis(x.basis(), &eig.basis)?;
    Ok(eig.vectors.columns(0, d).transpose() * x.coeffs())
}

/// `Σ_{j≤d} s_j ν_j`.
pub fn reconstruct(scores: &DVector<f64>, eig: &EigenSystem) -> Result<FunctionSample> {
    let d = scores.len();
    eig.check_d(d)?;
    FunctionSample::new(eig.vectors.columns(0, d) * scores, &eig.basis)
}

/// Cumulative proportion of variance explained by the first `d` components.
pub fn cpv(eigenvalues: &[f64], d: usize) -> f64 {
    let total: f64 = eigenvalues.iter().sum();
    eigenvalues.iter().take(d).sum::<f64>() / total
}

/// Smallest `d` whose cumulative proportion of variance reaches `threshold`.
pub fn cpv_select(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "CPV threshold {threshold} must lie in (0, 1]"
        )));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("eigenvalue spectrum is all zero".into()));
    }
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc / total >= threshold - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// `Σ_{j≤d} ⟨X, ν_j⟩ ν_j`.
pub fn karhunen_loeve_truncate(x: &FunctionSample, eig: &EigenSystem, d: usize) -> Result<FunctionSample> {
    let s = project_sample(x, eig, d)?;
    reconstruct(&s, eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn basis(k: usize) -> Arc<BasisSpec> {
        BasisSpec::fourier_uniform(k, 4 * k + 4).unwrap()
    }

    fn series_from(rows: Vec<Vec<f64>>, b: &Arc<BasisSpec>) -> FunctionSeries {
        let samples = rows
            .iter()
            .map(|r| FunctionSample::from_slice(r, b).unwrap())
            .collect();
        FunctionSeries::new(b, 1, samples).unwrap()
    }

    #[test]
    fn covariance_of_plus_minus_unit() {
        let b = basis(3);
        let s = series_from(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], &b);
        let c = estimate_covariance(&s).unwrap();
        let mut expect = DMatrix::zeros(3, 3);
        expect[(0, 0)] = 1.0;
        assert_eq!(*c.mat(), expect);

        let z = series_from(vec![vec![0.0; 3]; 4], &b);
        assert_eq!(*estimate_covariance(&z).unwrap().mat(), DMatrix::zeros(3, 3));
        let one = series_from(vec![vec![1.0; 3]], &b);
        assert!(matches!(
            estimate_covariance(&one),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn divisor_option() {
        let b = basis(1);
        let s = series_from(vec![vec![1.0], vec![-1.0]], &b);
        let c = estimate_covariance_with(&s, CovarianceDivisor::NMinusOne).unwrap();
        assert_eq!(c.mat()[(0, 0)], 2.0);
    }

    #[test]
    fn monte_carlo_eigenvalues_near_truth() {
        let b = basis(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let sd = [2.0, 1.0, 0.5];
        let rows = (0..500)
            .map(|_| {
                sd.iter()
                    .map(|s| { let z: f64 = StandardNormal.sample(&mut rng); s * z })
                    .collect::<Vec<f64>>()
            })
            .collect();
        let s = series_from(rows, &b);
        let eig = eigendecompose(&estimate_covariance(&s).unwrap()).unwrap();
        for (l, t) in eig.eigenvalues().iter().zip([4.0, 1.0, 0.25]) {
            assert!((l - t).abs() / t < 0.15, "{l} vs {t}");
        }
    }

    #[test]
    fn eigendecompose_diagonal_and_zero() {
        let b = basis(3);
        let c = KernelOperator::from_diagonal(&[1.0, 3.0, 2.0], &b).unwrap();
        let e = eigendecompose(&c).unwrap();
        assert_eq!(e.eigenvalues(), &[3.0, 2.0, 1.0]);
        let v = e.vectors();
        assert!((v[(1, 0)] - 1.0).abs() < 1e-14);
        assert!((v[(2, 1)] - 1.0).abs() < 1e-14);
        assert!((v[(0, 2)] - 1.0).abs() < 1e-14);

        let z = eigendecompose(&KernelOperator::zero(&b)).unwrap();
        assert!(z.eigenvalues().iter().all(|l| *l == 0.0));
    }

    #[test]
    fn eigendecompose_reconstructs_random_psd() {
        let b = basis(7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::<f64>::from_fn(7, 7, |_, _| StandardNormal.sample(&mut rng));
        let c: DMatrix<f64> = &a * a.transpose();
        let e = eigendecompose(&KernelOperator::new(c.clone(), &b).unwrap()).unwrap();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(e.eigenvalues()));
        let rec = e.vectors() * lam * e.vectors().transpose();
        assert!((rec - &c).norm() < 1e-9);
        assert!((e.eigenvalues().iter().sum::<f64>() - c.trace()).abs() < 1e-9);
        for j in 0..7 {
            let col = e.vectors().column(j);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn eigendecompose_rejects_asymmetry() {
        let b = basis(3);
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        let c = KernelOperator::new(m, &b).unwrap();
        assert!(matches!(eigendecompose(&c), Err(Error::Asymmetric(_))));
    }

    fn diag_eig(b: &Arc<BasisSpec>) -> EigenSystem {
        let k = b.size();
        let vals: Vec<f64> = (0..k).map(|j| 1.0 / (j + 1) as f64).collect();
        EigenSystem::new(vals, DMatrix::identity(k, k), b).unwrap()
    }

    #[test]
    fn scores_examples() {
        let b = basis(5);
        let e = diag_eig(&b);
        let s = series_from(vec![vec![2.0, 3.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 4.0, 0.0]], &b);
        let sc = compute_scores(&s, &e, 2).unwrap();
        assert_eq!(sc.row(0).as_slice(), &[2.0, 3.0]);
        assert_eq!(sc.row(1).as_slice(), &[0.0, 0.0]);
        assert!(compute_scores(&s, &e, 0).is_err());
        assert!(compute_scores(&s, &e, 6).is_err());
    }

    #[test]
    fn truncation_error_is_tail_score_norm() {
        let b = basis(7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::<f64>::from_fn(7, 7, |_, _| StandardNormal.sample(&mut rng));
        let e = eigendecompose(&KernelOperator::new(&a * a.transpose(), &b).unwrap()).unwrap();
        let x = FunctionSample::new(
            DVector::<f64>::from_fn(7, |_, _| StandardNormal.sample(&mut rng)),
            &b,
        )
        .unwrap();
        for d in 1..=7 {
            let t = karhunen_loeve_truncate(&x, &e, d).unwrap();
            let err2 = x.sub(&t).unwrap().norm_squared();
            let full = project_sample(&x, &e, 7).unwrap();
            let tail: f64 = full.iter().skip(d).map(|s| s * s).sum();
            assert!((err2 - tail).abs() < 1e-10);
        }
        let full = karhunen_loeve_truncate(&x, &e, 7).unwrap();
        assert!((full.coeffs() - x.coeffs()).amax() < 1e-12);
        let nu3 = e.eigenfunction(2).unwrap();
        assert!(karhunen_loeve_truncate(&nu3, &e, 2).unwrap().norm() < 1e-12);
    }

    #[test]
    fn cpv_examples() {
        assert_eq!(cpv_select(&[4.0, 3.0, 2.0, 1.0], 0.8).unwrap(), 3);
        assert_eq!(cpv_select(&[4.0, 3.0, 2.0, 1.0], 0.9).unwrap(), 3);
        assert_eq!(cpv_select(&[1.0, 0.0, 0.0], 0.3).unwrap(), 1);
        assert_eq!(cpv_select(&[1.0, 0.0, 0.0], 1.0).unwrap(), 1);
        assert!(cpv_select(&[0.0, 0.0], 0.5).is_err());
        assert!(cpv_select(&[1.0], 0.0).is_err());
    }
}
