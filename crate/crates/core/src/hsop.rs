//! Bounded operators on the basis-truncated space, stored as coordinate
//! matrices, plus the contraction checks used to certify causality.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fnspace::{check_same_basis, BasisSpec, FunctionSample};
use crate::linalg;

/// Default search depth for [`check_contraction`].
pub const DEFAULT_CONTRACTION_DEPTH: usize = 64;

/// A bounded operator Ψ with coordinate matrix `(A)_{lk} = ⟨Ψ ν_k, ν_l⟩`.
#[derive(Clone, Debug)]
pub struct KernelOperator {
    mat: DMatrix<f64>,
    basis: Arc<BasisSpec>,
}

impl PartialEq for KernelOperator {
    fn eq(&self, other: &Self) -> bool {
        *self.basis == *other.basis && self.mat == other.mat
    }
}

impl KernelOperator {
    pub fn new(mat: DMatrix<f64>, basis: &Arc<BasisSpec>) -> Result<Self> {
        let k = basis.size();
        if mat.nrows() != k || mat.ncols() != k {
            return Err(Error::Dimension(format!(
                "operator matrix is {}x{}, basis has size {k}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("operator entries must be finite".into()));
        }
        Ok(Self {
            mat,
            basis: Arc::clone(basis),
        })
    }

    pub fn zero(basis: &Arc<BasisSpec>) -> Self {
        let k = basis.size();
        Self {
            mat: DMatrix::zeros(k, k),
            basis: Arc::clone(basis),
        }
    }

    pub fn identity(basis: &Arc<BasisSpec>) -> Self {
        let k = basis.size();
        Self {
            mat: DMatrix::identity(k, k),
            basis: Arc::clone(basis),
        }
    }

    pub fn from_diagonal(diag: &[f64], basis: &Arc<BasisSpec>) -> Result<Self> {
        if diag.len() != basis.size() {
            return Err(Error::Dimension(format!(
                "diagonal has {} entries, basis has size {}",
                diag.len(),
                basis.size()
            )));
        }
        let mut m = DMatrix::zeros(diag.len(), diag.len());
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = *v;
        }
        Self::new(m, basis)
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn basis(&self) -> &Arc<BasisSpec> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn apply(&self, x: &FunctionSample) -> Result<FunctionSample> {
        check_same_basis(&self.basis, x.basis())?;
        FunctionSample::new(&self.mat * x.coeffs(), &self.basis)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &KernelOperator) -> Result<KernelOperator> {
        check_same_basis(&self.basis, &other.basis)?;
        Ok(Self {
            mat: &self.mat * &other.mat,
            basis: Arc::clone(&self.basis),
        })
    }

    pub fn pow(&self, j: u32) -> KernelOperator {
        Self {
            mat: linalg::mat_pow(&self.mat, j),
            basis: Arc::clone(&self.basis),
        }
    }

    pub fn scale(&self, a: f64) -> KernelOperator {
        Self {
            mat: &self.mat * a,
            basis: Arc::clone(&self.basis),
        }
    }

    pub fn adjoint(&self) -> KernelOperator {
        Self {
            mat: self.mat.transpose(),
            basis: Arc::clone(&self.basis),
        }
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }
}

/// An operator on `H^p` given as a `p × p` array of blocks.
#[derive(Clone, Debug)]
pub struct StackedOperator {
    p: usize,
    blocks: Vec<KernelOperator>,
}

impl StackedOperator {
    /// `blocks` in row-major order.
    pub fn new(p: usize, blocks: Vec<KernelOperator>) -> Result<Self> {
        if p == 0 || blocks.len() != p * p {
            return Err(Error::Dimension(format!(
                "stacked operator of order {p} needs {} blocks, got {}",
                p * p,
                blocks.len()
            )));
        }
        for b in &blocks[1..] {
            check_same_basis(blocks[0].basis(), b.basis())?;
        }
        Ok(Self { p, blocks })
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn block(&self, i: usize, j: usize) -> &KernelOperator {
        &self.blocks[i * self.p + j]
    }

    pub fn basis(&self) -> &Arc<BasisSpec> {
        self.blocks[0].basis()
    }

    /// Dense `pK × pK` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.blocks[0].dim();
        let mut m = DMatrix::zeros(self.p * k, self.p * k);
        for i in 0..self.p {
            for j in 0..self.p {
                m.view_mut((i * k, j * k), (k, k))
                    .copy_from(self.block(i, j).mat());
            }
        }
        m
    }
}

/// Anything with a dense coordinate matrix.
pub trait DenseOperator {
    fn dense(&self) -> DMatrix<f64>;
}

impl DenseOperator for KernelOperator {
    fn dense(&self) -> DMatrix<f64> {
        self.mat.clone()
    }
}

impl DenseOperator for StackedOperator {
    fn dense(&self) -> DMatrix<f64> {
        self.to_dense()
    }
}

impl DenseOperator for DMatrix<f64> {
    fn dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// Largest singular value of the coordinate matrix.
pub fn op_norm<A: DenseOperator + ?Sized>(a: &A) -> f64 {
    linalg::spectral_norm(&a.dense())
}

/// Frobenius norm of the coordinate matrix.
pub fn hs_norm<A: DenseOperator + ?Sized>(a: &A) -> f64 {
    a.dense().norm()
}

/// The lifted operators of the state-space form on `H^p`: `φ̃` with first
/// block row `(φ_1, ..., φ_p)` and identities on the sub-diagonal, and `θ̃_j`
/// with `θ_j` in the top-left block.
pub fn state_space_lift(
    phis: &[KernelOperator],
    thetas: &[KernelOperator],
) -> Result<(StackedOperator, Vec<StackedOperator>)> {
    let p = phis.len();
    if p == 0 {
        return Err(Error::InvalidArgument(
            "state-space lift needs at least one autoregressive operator".into(),
        ));
    }
    let basis = phis[0].basis();
    for t in thetas {
        check_same_basis(basis, t.basis())?;
    }
    let zero = KernelOperator::zero(basis);
    let id = KernelOperator::identity(basis);
    let mut blocks = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            blocks.push(if i == 0 {
                phis[j].clone()
            } else if j + 1 == i {
                id.clone()
            } else {
                zero.clone()
            });
        }
    }
    let phi_tilde = StackedOperator::new(p, blocks)?;
    let theta_tildes = thetas
        .iter()
        .map(|t| {
            let mut b = vec![zero.clone(); p * p];
            b[0] = t.clone();
            StackedOperator::new(p, b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((phi_tilde, theta_tildes))
}

/// Witness that `‖A^{j0}‖ < 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionCertificate {
    pub j0: usize,
    /// `‖A^{j0}‖`.
    pub norm: f64,
    /// `max_{1≤j<j0} ‖A^j‖` (1 when `j0 = 1`), used in geometric tail bounds.
    pub max_lower_power_norm: f64,
}

impl ContractionCertificate {
    /// Constants `(a, b)` with `‖A^j‖ ≤ a·b^j` for all `j ≥ 0`.
    pub fn geometric_constants(&self) -> (f64, f64) {
        // j = m·j0 + r gives ‖A^j‖ ≤ M·‖A^{j0}‖^m ≤ M·b^{j-r} ≤ (M / b^{j0-1})·b^j.
        let b = self.norm.powf(1.0 / self.j0 as f64).max(1e-3);
        let a = self.max_lower_power_norm.max(1.0) / b.powi(self.j0 as i32 - 1);
        (a, b)
    }
}

/// Smallest `j0 ≤ j_max` with `‖A^{j0}‖ < 1`.
pub fn check_contraction<A: DenseOperator + ?Sized>(
    a: &A,
    j_max: usize,
) -> Option<ContractionCertificate> {
    let m = a.dense();
    let mut power = m.clone();
    let mut max_lower: f64 = 1.0;
    for j in 1..=j_max {
        let n = linalg::spectral_norm(&power);
        if !n.is_finite() {
            return None;
        }
        if n < 1.0 {
            return Some(ContractionCertificate {
                j0: j,
                norm: n,
                max_lower_power_norm: max_lower,
            });
        }
        max_lower = max_lower.max(n);
        power = &power * &m;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(k: usize) -> Arc<BasisSpec> {
        BasisSpec::fourier_uniform(k, 4 * k + 4).unwrap()
    }

    fn random(k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn op_norm_examples() {
        let b = basis(5);
        assert_eq!(op_norm(&KernelOperator::zero(&b)), 0.0);
        let d = KernelOperator::from_diagonal(&[0.9, 0.5, 0.0, 0.0, 0.0], &b).unwrap();
        assert!((op_norm(&d) - 0.9).abs() < 1e-14);
    }

    #[test]
    fn op_norm_matches_power_iteration() {
        let a = random(8, 11);
        let ata = a.transpose() * &a;
        let mut v = nalgebra::DVector::from_element(8, 1.0);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = &ata * &v;
            lambda = w.norm();
            v = w / lambda;
        }
        assert!((op_norm(&a) - lambda.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn hs_norm_examples() {
        let b = basis(3);
        let _ = b;
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((hs_norm(&id) - 2.0).abs() < 1e-15);
        let u = nalgebra::DVector::from_column_slice(&[0.6, 0.8, 0.0]);
        let v = nalgebra::DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        assert!((hs_norm(&(&u * v.transpose())) - 1.0).abs() < 1e-15);
        let a = random(6, 5);
        let oracle = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((hs_norm(&a) - oracle).abs() < 1e-12);
    }

    #[test]
    fn lift_structure() {
        let b = basis(3);
        let z = KernelOperator::zero(&b);
        let (pt, _) = state_space_lift(&[z.clone(), z.clone()], &[]).unwrap();
        let mut expect = DMatrix::zeros(6, 6);
        expect.view_mut((3, 0), (3, 3)).fill_with_identity();
        assert_eq!(pt.to_dense(), expect);

        let phi = KernelOperator::new(random(3, 1), &b).unwrap();
        let (pt, _) = state_space_lift(std::slice::from_ref(&phi), &[]).unwrap();
        assert_eq!(pt.to_dense(), *phi.mat());

        let phis: Vec<_> = (0..3)
            .map(|s| KernelOperator::new(random(3, 20 + s), &b).unwrap())
            .collect();
        let th = KernelOperator::new(random(3, 9), &b).unwrap();
        let (pt, tt) = state_space_lift(&phis, std::slice::from_ref(&th)).unwrap();
        let dense = pt.to_dense();
        for r in 0..9 {
            for c in 0..9 {
                let (bi, bj, i, j) = (r / 3, c / 3, r % 3, c % 3);
                let want = if bi == 0 {
                    phis[bj].mat()[(i, j)]
                } else if bj + 1 == bi && i == j {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(dense[(r, c)], want);
                let want_t = if bi == 0 && bj == 0 { th.mat()[(i, j)] } else { 0.0 };
                assert_eq!(tt[0].to_dense()[(r, c)], want_t);
            }
        }
        assert!(state_space_lift(&[], &[]).is_err());
    }

    #[test]
    fn contraction_examples() {
        let half = DMatrix::<f64>::identity(4, 4) * 0.5;
        assert_eq!(check_contraction(&half, 64).unwrap().j0, 1);
        let mut nil = DMatrix::<f64>::zeros(3, 3);
        nil[(0, 1)] = 1.2;
        assert!((op_norm(&nil) - 1.2).abs() < 1e-14);
        assert_eq!(check_contraction(&nil, 64).unwrap().j0, 2);
        let grow = DMatrix::<f64>::identity(3, 3) * 1.01;
        assert!(check_contraction(&grow, 64).is_none());
        assert!(check_contraction(&grow, 500).is_none());
    }

    #[test]
    fn geometric_constants_dominate_powers() {
        let mut a = DMatrix::<f64>::zeros(3, 3);
        a[(0, 1)] = 1.5;
        a[(1, 1)] = 0.3;
        a[(2, 2)] = 0.6;
        let cert = check_contraction(&a, 64).unwrap();
        let (ca, cb) = cert.geometric_constants();
        assert!(cb < 1.0);
        for j in 0..40 {
            let n = op_norm(&linalg::mat_pow(&a, j));
            assert!(n <= ca * cb.powi(j as i32) * (1.0 + 1e-9), "j={j}");
        }
    }
}
