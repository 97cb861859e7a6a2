//! Dense symmetric eigendecomposition, singular values, PSD inverse square
//! roots and the entropy-based smooth rank shared by every score.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default additive constant inside the normalized spectrum.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Relative floor below which a negative eigenvalue is treated as real
/// indefiniteness instead of round-off.
pub const DEFAULT_NEG_TOL: f64 = 1e-10;
/// Relative asymmetry tolerated by [`sym_eig`].
pub const SYM_TOL: f64 = 1e-9;

/// Neumaier-compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A dense square matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    inner: DMatrix<f64>,
}

impl SquareMatrix {
    /// Builds a matrix from `dim * dim` row-major entries.
    pub fn new(dim: usize, row_major: Vec<f64>) -> Result<Self> {
        if row_major.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: row_major.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, &row_major))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("matrix entries".into()));
        }
        Ok(Self { inner: m })
    }

    /// Replaces `m` by `(m + mᵀ) / 2`. Used for products that are symmetric
    /// in exact arithmetic.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self {
            inner: (m + t) * 0.5,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            inner: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut inner = DMatrix::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            inner[(i, i)] = *d;
        }
        Self { inner }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    /// Largest absolute entry, `‖M‖_max`.
    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// `max |M - Mᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self.inner[(i, j)] - self.inner[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let tolerance = SYM_TOL * self.max_abs();
        let asymmetry = self.asymmetry();
        if asymmetry > tolerance {
            return Err(Error::NotSymmetric {
                asymmetry,
                tolerance,
            });
        }
        Ok(())
    }
}

/// Nonnegative eigen- or singular values sorted in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    source_dim: usize,
}

impl Spectrum {
    /// Sorts `values` descending and clamps entries in
    /// `[-neg_tol * max|v|, 0)` to zero. Anything more negative is an error.
    pub fn new(mut values: Vec<f64>, source_dim: usize, neg_tol: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("spectrum values".into()));
        }
        if values.len() > source_dim {
            return Err(Error::InvalidArgument(format!(
                "{} values exceed source dimension {}",
                values.len(),
                source_dim
            )));
        }
        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        Self::clamp_sorted(&mut values, -neg_tol * scale)?;
        Ok(Self { values, source_dim })
    }

    fn clamp_sorted(values: &mut [f64], floor: f64) -> Result<()> {
        values.sort_by(|a, b| b.total_cmp(a));
        for v in values.iter_mut() {
            if *v < 0.0 {
                if *v < floor {
                    return Err(Error::IndefiniteBeyondTolerance { value: *v, floor });
                }
                *v = 0.0;
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `‖λ‖₁`; values are nonnegative so this is their sum.
    pub fn l1(&self) -> f64 {
        compensated_sum(self.values.iter().copied())
    }

    /// `‖λ‖_∞`, the leading value.
    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Number of values above `rel_tol * max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.max();
        self.values.iter().filter(|v| **v > cut).count()
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Returns the clamped spectrum and the eigenvectors as columns, ordered to
/// match the descending spectrum.
pub fn sym_eig(m: &SquareMatrix, neg_tol: f64) -> Result<(Spectrum, DMatrix<f64>)> {
    if !(neg_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("neg_tol must be >= 0, got {neg_tol}")));
    }
    m.check_symmetric()?;
    let dim = m.dim();
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = DMatrix::zeros(dim, dim);
    let mut values = Vec::with_capacity(dim);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    let floor = -neg_tol * m.max_abs();
    Spectrum::clamp_sorted(&mut values, floor)?;
    Ok((
        Spectrum {
            values,
            source_dim: dim,
        },
        vectors,
    ))
}

/// `M^{-1/2}` for a symmetric positive definite `M`.
pub fn inv_sqrt_psd(m: &SquareMatrix) -> Result<SquareMatrix> {
    let (spectrum, vectors) = sym_eig(m, DEFAULT_NEG_TOL)?;
    let smallest = spectrum.values().last().copied().unwrap_or(0.0);
    if smallest <= 0.0 {
        return Err(Error::SingularWithinTolerance {
            min_eigenvalue: smallest,
        });
    }
    let mut scaled = vectors.clone();
    for (j, lambda) in spectrum.values().iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / lambda.sqrt());
    }
    Ok(SquareMatrix::symmetrized(scaled * vectors.transpose()))
}

/// Singular values of an `n x d` matrix, `min(n, d)` of them.
pub fn singular_values(z: &DMatrix<f64>) -> Result<Spectrum> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty matrix {}x{}",
            z.nrows(),
            z.ncols()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("embedding matrix".into()));
    }
    let values: Vec<f64> = z.singular_values().iter().copied().collect();
    Spectrum::new(values, z.ncols(), 0.0)
}

/// Smooth rank value plus a flag for the all-zero spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothRank {
    pub value: f64,
    pub degenerate: bool,
}

/// `exp(-Σ p_i log p_i)` with `p_i = λ_i / ‖λ‖₁ + eps`.
///
/// The `p_i` are used as written, so they carry a total mass of
/// `1 + len * eps`. Zero terms contribute nothing (`0 log 0 = 0`). A spectrum
/// with zero mass has no defined distribution; it yields `1.0` flagged as
/// degenerate.
pub fn smooth_rank(s: &Spectrum, eps: f64) -> Result<SmoothRank> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be finite and >= 0, got {eps}")));
    }
    let total = s.l1();
    if total == 0.0 {
        return Ok(SmoothRank {
            value: 1.0,
            degenerate: true,
        });
    }
    let entropy = -compensated_sum(s.values().iter().map(|v| {
        let p = v / total + eps;
        if p > 0.0 {
            p * p.ln()
        } else {
            0.0
        }
    }));
    Ok(SmoothRank {
        value: entropy.exp(),
        degenerate: false,
    })
}
