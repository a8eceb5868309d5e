//! Functions on `[0, 1]` represented by their coordinates in a finite
//! orthonormal Fourier basis.
//!
//! Everything downstream (covariance operators, scores, model operators) works
//! on coefficient vectors. The continuum is only touched when raw samples are
//! smoothed onto the basis and when a function is evaluated at a point.

use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default number of basis functions: constant plus 15 sine/cosine pairs.
pub const DEFAULT_BASIS_SIZE: usize = 31;

/// Default number of grid points, one per minute of the day.
pub const DEFAULT_GRID_SIZE: usize = 1440;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Fourier,
}

impl BasisKind {
    pub fn name(&self) -> &'static str {
        match self {
            BasisKind::Fourier => "fourier",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fourier" => Ok(BasisKind::Fourier),
            other => Err(Error::InvalidArgument(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// A finite orthonormal basis of `L²[0,1]` together with the sample grid used
/// for smoothing and evaluation.
///
/// Fourier functions are ordered constant first, then `√2 sin(2πkt)`,
/// `√2 cos(2πkt)` for `k = 1, 2, ...`.
#[derive(Debug)]
pub struct BasisSpec {
    kind: BasisKind,
    size: usize,
    grid: Vec<f64>,
    design: OnceLock<DMatrix<f64>>,
    projector: OnceLock<Option<DMatrix<f64>>>,
}

impl PartialEq for BasisSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.size == other.size && self.grid == other.grid
    }
}

impl BasisSpec {
    pub fn fourier(size: usize, grid: Vec<f64>) -> Result<Arc<Self>> {
        if size == 0 {
            return Err(Error::InvalidArgument("basis size must be at least 1".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidArgument("grid must not be empty".into()));
        }
        if grid.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > 1.0) {
            return Err(Error::InvalidArgument("grid points must lie in [0, 1]".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        Ok(Arc::new(Self {
            kind: BasisKind::Fourier,
            size,
            grid,
            design: OnceLock::new(),
            projector: OnceLock::new(),
        }))
    }

    /// Fourier basis on the periodic grid `j / grid_size`, `j = 0..grid_size`.
    pub fn fourier_uniform(size: usize, grid_size: usize) -> Result<Arc<Self>> {
        Self::fourier(size, uniform_grid(grid_size))
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Value of the `j`-th basis function (0-based) at `t`.
    pub fn basis_value(&self, j: usize, t: f64) -> f64 {
        fourier_value(j, t)
    }

    /// Basis functions evaluated on the grid: a `grid × K` matrix.
    pub fn design(&self) -> &DMatrix<f64> {
        self.design.get_or_init(|| {
            DMatrix::from_fn(self.grid.len(), self.size, |i, j| fourier_value(j, self.grid[i]))
        })
    }

    /// Least-squares projector `(BᵀB)⁻¹Bᵀ`, or `None` when the design is rank
    /// deficient.
    fn projector(&self) -> Option<&DMatrix<f64>> {
        self.projector
            .get_or_init(|| {
                let b = self.design();
                if b.nrows() < b.ncols() {
                    return None;
                }
                let svd = b.clone().svd(true, true);
                let sv = &svd.singular_values;
                let max = sv.max();
                let min = sv.min();
                if !(max > 0.0) || min <= max * 1e-10 {
                    return None;
                }
                svd.pseudo_inverse(0.0).ok()
            })
            .as_ref()
    }

    /// Exact Gram matrix `∫ b_i b_j` computed from product-to-sum identities.
    pub fn analytic_gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| trig_product_integral(i, j))
    }

    pub fn zero(self: &Arc<Self>) -> FunctionSample {
        FunctionSample {
            coeffs: DVector::zeros(self.size),
            basis: Arc::clone(self),
        }
    }
}

/// Periodic uniform grid `j / n`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / n as f64).collect()
}

/// Frequency and phase of a Fourier basis index: (k, is_sine).
fn fourier_index(j: usize) -> (usize, bool) {
    if j == 0 {
        (0, false)
    } else {
        ((j + 1) / 2, j % 2 == 1)
    }
}

fn fourier_value(j: usize, t: f64) -> f64 {
    match fourier_index(j) {
        (0, _) => 1.0,
        (k, true) => SQRT_2 * (2.0 * PI * k as f64 * t).sin(),
        (k, false) => SQRT_2 * (2.0 * PI * k as f64 * t).cos(),
    }
}

/// ∫₀¹ cos(2πmt) dt for integer m.
fn cos_integral(m: i64) -> f64 {
    if m == 0 {
        1.0
    } else {
        0.0
    }
}

fn trig_product_integral(i: usize, j: usize) -> f64 {
    let (ki, si) = fourier_index(i);
    let (kj, sj) = fourier_index(j);
    let scale = |k: usize| if k == 0 { 1.0 } else { SQRT_2 };
    let c = scale(ki) * scale(kj);
    let (a, b) = (ki as i64, kj as i64);
    // ∫ sin(2πmt) over a full period vanishes for every integer m, so the
    // mixed products contribute nothing.
    let v = match (si, sj) {
        (false, false) => 0.5 * (cos_integral(a - b) + cos_integral(a + b)),
        (true, true) => 0.5 * (cos_integral(a - b) - cos_integral(a + b)),
        _ => 0.0,
    };
    c * v
}

fn same_basis(a: &Arc<BasisSpec>, b: &Arc<BasisSpec>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn check_same_basis(a: &Arc<BasisSpec>, b: &Arc<BasisSpec>) -> Result<()> {
    if same_basis(a, b) {
        Ok(())
    } else {
        Err(Error::BasisMismatch(format!(
            "{} basis of size {} (grid {}) vs {} basis of size {} (grid {})",
            a.kind.name(),
            a.size,
            a.grid.len(),
            b.kind.name(),
            b.size,
            b.grid.len()
        )))
    }
}

/// An element of `L²[0,1]` given by its basis coordinates.
#[derive(Clone, Debug)]
pub struct FunctionSample {
    coeffs: DVector<f64>,
    basis: Arc<BasisSpec>,
}

impl PartialEq for FunctionSample {
    fn eq(&self, other: &Self) -> bool {
        same_basis(&self.basis, &other.basis) && self.coeffs == other.coeffs
    }
}

impl FunctionSample {
    pub fn new(coeffs: DVector<f64>, basis: &Arc<BasisSpec>) -> Result<Self> {
        if coeffs.len() != basis.size {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                basis.size,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self {
            coeffs,
            basis: Arc::clone(basis),
        })
    }

    pub fn from_slice(coeffs: &[f64], basis: &Arc<BasisSpec>) -> Result<Self> {
        Self::new(DVector::from_column_slice(coeffs), basis)
    }

    /// The `j`-th unit coordinate vector (0-based).
    pub fn unit(j: usize, basis: &Arc<BasisSpec>) -> Result<Self> {
        if j >= basis.size {
            return Err(Error::InvalidArgument(format!(
                "unit index {j} out of range for basis of size {}",
                basis.size
            )));
        }
        let mut c = DVector::zeros(basis.size);
        c[j] = 1.0;
        Ok(Self {
            coeffs: c,
            basis: Arc::clone(basis),
        })
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    pub fn basis(&self) -> &Arc<BasisSpec> {
        &self.basis
    }

    pub fn norm_squared(&self) -> f64 {
        self.coeffs.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    /// Evaluate at `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfDomain(t));
        }
        Ok(self
            .coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * fourier_value(j, t))
            .sum())
    }

    /// Values on the basis grid.
    pub fn eval_grid(&self) -> DVector<f64> {
        self.basis.design() * &self.coeffs
    }

    pub fn sub(&self, other: &FunctionSample) -> Result<FunctionSample> {
        check_same_basis(&self.basis, &other.basis)?;
        Ok(Self {
            coeffs: &self.coeffs - &other.coeffs,
            basis: Arc::clone(&self.basis),
        })
    }

    pub fn add(&self, other: &FunctionSample) -> Result<FunctionSample> {
        check_same_basis(&self.basis, &other.basis)?;
        Ok(Self {
            coeffs: &self.coeffs + &other.coeffs,
            basis: Arc::clone(&self.basis),
        })
    }

    pub fn scale(&self, a: f64) -> FunctionSample {
        Self {
            coeffs: &self.coeffs * a,
            basis: Arc::clone(&self.basis),
        }
    }

    /// `∫₀¹ |f(t)| dt` by the periodic trapezoid rule on the basis grid.
    pub fn integrated_abs(&self) -> f64 {
        let v = self.eval_grid();
        periodic_trapezoid(self.basis.grid(), v.as_slice(), f64::abs)
    }

    /// Mean of `|f|` over the grid points.
    pub fn pointwise_mean_abs(&self) -> f64 {
        let v = self.eval_grid();
        v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
    }
}

/// `⟨f, g⟩ = Σ_k f_k g_k`, exact by Parseval.
pub fn inner_product(f: &FunctionSample, g: &FunctionSample) -> Result<f64> {
    check_same_basis(&f.basis, &g.basis)?;
    Ok(f.coeffs.dot(&g.coeffs))
}

/// Least-squares projection of grid samples onto the basis.
pub fn smooth_to_basis(raw: &[f64], basis: &Arc<BasisSpec>) -> Result<FunctionSample> {
    let g = basis.grid.len();
    if raw.len() != g {
        return Err(Error::Dimension(format!(
            "raw sample has {} values but the grid has {g} points",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "raw samples contain non-finite values; fill missing values first".into(),
        ));
    }
    let proj = basis.projector().ok_or(Error::RankDeficient {
        k: basis.size,
        grid: g,
    })?;
    let y = DVector::from_column_slice(raw);
    FunctionSample::new(proj * y, basis)
}

/// Integral over `[0,1]` of `op(f)` for a 1-periodic `f` sampled on `grid`.
/// The interval from the last grid point wraps around to the first one.
pub fn periodic_trapezoid(grid: &[f64], values: &[f64], op: impl Fn(f64) -> f64) -> f64 {
    let n = grid.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return op(values[0]);
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (t0, v0) = (grid[i], op(values[i]));
        let (t1, v1) = if i + 1 < n {
            (grid[i + 1], op(values[i + 1]))
        } else {
            (grid[0] + 1.0, op(values[0]))
        };
        acc += 0.5 * (t1 - t0) * (v0 + v1);
    }
    acc
}

/// A time-indexed sequence of functions sharing one basis.
#[derive(Clone, Debug)]
pub struct FunctionSeries {
    basis: Arc<BasisSpec>,
    start: i64,
    samples: Vec<FunctionSample>,
}

impl FunctionSeries {
    pub fn new(basis: &Arc<BasisSpec>, start: i64, samples: Vec<FunctionSample>) -> Result<Self> {
        for s in &samples {
            check_same_basis(basis, &s.basis)?;
        }
        Ok(Self {
            basis: Arc::clone(basis),
            start,
            samples,
        })
    }

    /// Build from rows of coefficients (one row per time point).
    pub fn from_coefficient_rows(
        basis: &Arc<BasisSpec>,
        start: i64,
        rows: &DMatrix<f64>,
    ) -> Result<Self> {
        if rows.ncols() != basis.size {
            return Err(Error::Dimension(format!(
                "coefficient matrix has {} columns, basis has {}",
                rows.ncols(),
                basis.size
            )));
        }
        let samples = rows
            .row_iter()
            .map(|r| FunctionSample::new(r.transpose(), basis))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            basis: Arc::clone(basis),
            start,
            samples,
        })
    }

    pub fn basis(&self) -> &Arc<BasisSpec> {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time label of the first sample.
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn index_of(&self, i: usize) -> i64 {
        self.start + i as i64
    }

    pub fn samples(&self) -> &[FunctionSample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> Option<&FunctionSample> {
        self.samples.get(i)
    }

    /// Sample carrying time label `t`.
    pub fn at(&self, t: i64) -> Option<&FunctionSample> {
        let i = t - self.start;
        if i < 0 {
            None
        } else {
            self.samples.get(i as usize)
        }
    }

    /// Coefficients as an `N × K` matrix.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let k = self.basis.size;
        DMatrix::from_fn(self.samples.len(), k, |i, j| self.samples[i].coeffs[j])
    }

    /// Samples `range` as a new series, keeping their time labels.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FunctionSeries {
        FunctionSeries {
            basis: Arc::clone(&self.basis),
            start: self.start + range.start as i64,
            samples: self.samples[range].to_vec(),
        }
    }

    /// Pointwise mean function.
    pub fn mean(&self) -> FunctionSample {
        let mut c = DVector::zeros(self.basis.size);
        for s in &self.samples {
            c += &s.coeffs;
        }
        if !self.samples.is_empty() {
            c /= self.samples.len() as f64;
        }
        FunctionSample {
            coeffs: c,
            basis: Arc::clone(&self.basis),
        }
    }

    /// Series with the sample mean removed.
    pub fn centered(&self) -> FunctionSeries {
        let m = self.mean();
        let samples = self
            .samples
            .iter()
            .map(|s| FunctionSample {
                coeffs: &s.coeffs - &m.coeffs,
                basis: Arc::clone(&self.basis),
            })
            .collect();
        FunctionSeries {
            basis: Arc::clone(&self.basis),
            start: self.start,
            samples,
        }
    }
}
