//! Within-class and between-class scatter over surrogate classes and the
//! whitened between-class matrix built from them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectra::{self, compensated_sum, SquareMatrix, Spectrum, DEFAULT_NEG_TOL};

/// Default ridge added to the within-class scatter.
pub const DEFAULT_DELTA: f64 = 1e-4;

// Rows per GEMM block when accumulating `RᵀR` over large batches.
const CHUNK_ROWS: usize = 4096;

/// `n` surrogate classes, each with `q` views embedded in `p` dimensions.
///
/// Samples are stored class-major, then sample, then dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    n: usize,
    q: usize,
    p: usize,
    data: Vec<f64>,
    branch_label: Option<String>,
}

impl EmbeddingBatch {
    pub fn new(
        n: usize,
        q: usize,
        p: usize,
        data: Vec<f64>,
        branch_label: Option<String>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewClasses(n));
        }
        if q < 2 {
            return Err(Error::TooFewSamplesPerClass(q));
        }
        if p < 1 {
            return Err(Error::BadShape("embedding dimension must be >= 1".into()));
        }
        if data.len() != n * q * p {
            return Err(Error::DimensionMismatch {
                expected: n * q * p,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("embedding batch".into()));
        }
        Ok(Self {
            n,
            q,
            p,
            data,
            branch_label: branch_label.filter(|l| !l.is_empty()),
        })
    }

    /// Builds a batch from `f(class, sample, dim)`.
    pub fn from_fn(
        n: usize,
        q: usize,
        p: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(n * q * p);
        for i in 0..n {
            for j in 0..q {
                for k in 0..p {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(n, q, p, data, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn branch_label(&self) -> Option<&str> {
        self.branch_label.as_deref()
    }

    pub fn with_branch_label(mut self, label: Option<String>) -> Self {
        self.branch_label = label.filter(|l| !l.is_empty());
        self
    }

    pub fn sample(&self, class: usize, sample: usize) -> &[f64] {
        let start = (class * self.q + sample) * self.p;
        &self.data[start..start + self.p]
    }

    /// All samples stacked as an `(n*q) x p` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n * self.q, self.p, &self.data)
    }

    /// Applies `f` to every sample; the output dimension may differ from `p`.
    pub fn map_samples(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::new();
        let mut out_dim = None;
        for row in self.data.chunks_exact(self.p) {
            let mapped = f(row);
            match out_dim {
                None => out_dim = Some(mapped.len()),
                Some(d) if d != mapped.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: mapped.len(),
                    })
                }
                Some(_) => {}
            }
            data.extend(mapped);
        }
        Self::new(
            self.n,
            self.q,
            out_dim.unwrap_or(0),
            data,
            self.branch_label.clone(),
        )
    }
}

/// Per-coordinate Neumaier accumulator.
struct CompensatedVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedVec {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    fn add(&mut self, row: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(row) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn mean(self, count: usize) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.comp)
            .map(|(s, c)| (s + c) / count as f64)
            .collect()
    }
}

/// Class means (`n x p`) and the grand mean, taken as the unweighted mean of
/// the class means.
pub fn class_means(batch: &EmbeddingBatch) -> (DMatrix<f64>, DVector<f64>) {
    let (n, q, p) = (batch.n, batch.q, batch.p);
    let mut means = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut acc = CompensatedVec::new(p);
        for j in 0..q {
            acc.add(batch.sample(i, j));
        }
        for (k, v) in acc.mean(q).into_iter().enumerate() {
            means[(i, k)] = v;
        }
    }
    let grand = DVector::from_fn(p, |k, _| {
        compensated_sum((0..n).map(|i| means[(i, k)])) / n as f64
    });
    (means, grand)
}

/// Unbiased between-class scatter, `(1/(n-1)) Σ_i (μ_i - μ)(μ_i - μ)ᵀ`.
pub fn between_scatter(batch: &EmbeddingBatch) -> Result<SquareMatrix> {
    let (means, grand) = class_means(batch);
    between_from_means(&means, &grand, batch.n)
}

fn between_from_means(means: &DMatrix<f64>, grand: &DVector<f64>, n: usize) -> Result<SquareMatrix> {
    if n < 2 {
        return Err(Error::TooFewClasses(n));
    }
    let mut centered = means.clone();
    for mut row in centered.row_iter_mut() {
        row -= grand.transpose();
    }
    let gram = centered.transpose() * &centered;
    Ok(SquareMatrix::symmetrized(gram / (n - 1) as f64))
}

/// `Σ_rows (x - c(x))(x - c(x))ᵀ` where `c` picks the centering vector for
/// each sample. Blocks are reduced in a fixed order so results do not depend
/// on the thread count.
fn centered_gram(batch: &EmbeddingBatch, center: impl Fn(usize) -> Vec<f64> + Sync) -> DMatrix<f64> {
    let (n, q, p) = (batch.n, batch.q, batch.p);
    let classes_per_chunk = (CHUNK_ROWS / q).max(1);
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(classes_per_chunk)
        .map(|start| (start, (start + classes_per_chunk).min(n)))
        .collect();
    let partials: Vec<DMatrix<f64>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let rows = (end - start) * q;
            let mut block_t = DMatrix::zeros(p, rows);
            for i in start..end {
                let c = center(i);
                for j in 0..q {
                    let col = (i - start) * q + j;
                    for (k, v) in batch.sample(i, j).iter().enumerate() {
                        block_t[(k, col)] = v - c[k];
                    }
                }
            }
            let block = block_t.transpose();
            &block_t * block
        })
        .collect();
    let mut acc = DMatrix::zeros(p, p);
    for part in partials {
        acc += part;
    }
    acc
}

/// Unbiased within-class scatter plus ridge,
/// `(1/(n(q-1))) Σ_i Σ_j (x_ij - μ_i)(x_ij - μ_i)ᵀ + δI`.
pub fn within_scatter(batch: &EmbeddingBatch, delta: f64) -> Result<SquareMatrix> {
    let (means, _) = class_means(batch);
    within_from_means(batch, &means, delta)
}

fn within_from_means(batch: &EmbeddingBatch, means: &DMatrix<f64>, delta: f64) -> Result<SquareMatrix> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::NonPositiveDelta(delta));
    }
    if batch.q < 2 {
        return Err(Error::TooFewSamplesPerClass(batch.q));
    }
    let gram = centered_gram(batch, |i| means.row(i).iter().copied().collect());
    let mut sigma = gram / (batch.n * (batch.q - 1)) as f64;
    for k in 0..batch.p {
        sigma[(k, k)] += delta;
    }
    Ok(SquareMatrix::symmetrized(sigma))
}

/// Ridged within-class scatter and between-class scatter of one batch.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub sigma_w: SquareMatrix,
    pub sigma_b: SquareMatrix,
    pub delta: f64,
    pub class_means: DMatrix<f64>,
    pub grand_mean: DVector<f64>,
}

impl ScatterPair {
    pub fn estimate(batch: &EmbeddingBatch, delta: f64) -> Result<Self> {
        let (means, grand) = class_means(batch);
        let sigma_w = within_from_means(batch, &means, delta)?;
        let sigma_b = between_from_means(&means, &grand, batch.n)?;
        Ok(Self {
            sigma_w,
            sigma_b,
            delta,
            class_means: means,
            grand_mean: grand,
        })
    }

    /// Same as `estimate(&reduce_dim(batch, k)?, delta)` up to round-off,
    /// but with a single pass over the samples when `n*q >= p`.
    ///
    /// The pooled centered Gram matrix is `W + q(n-1)Σ_b`, with `W` the
    /// unscaled within-class Gram, so the principal basis and both reduced
    /// scatters come from `p x p` products.
    pub fn estimate_reduced(batch: &EmbeddingBatch, delta: f64, k: usize) -> Result<Self> {
        let (n, q, p) = (batch.n, batch.q, batch.p);
        if k < 1 || k > p {
            return Err(Error::BadTargetDim { k, p });
        }
        if n * q < p {
            return Self::estimate(&reduce_dim(batch, k)?, delta);
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::NonPositiveDelta(delta));
        }
        let (means, grand) = class_means(batch);
        let w_gram = centered_gram(batch, |i| means.row(i).iter().copied().collect());
        let sigma_b = between_from_means(&means, &grand, n)?;
        let pooled = &w_gram + sigma_b.as_matrix() * (q * (n - 1)) as f64;
        let (_, vectors) = spectra::sym_eig(&SquareMatrix::symmetrized(pooled), 1e-8)?;
        let basis = vectors.columns(0, k).into_owned();

        let mut sigma_w = basis.transpose() * (w_gram / (n * (q - 1)) as f64) * &basis;
        for d in 0..k {
            sigma_w[(d, d)] += delta;
        }
        let sigma_b = basis.transpose() * sigma_b.as_matrix() * &basis;
        Ok(Self {
            sigma_w: SquareMatrix::symmetrized(sigma_w),
            sigma_b: SquareMatrix::symmetrized(sigma_b),
            delta,
            class_means: means * &basis,
            grand_mean: basis.transpose() * grand,
        })
    }
}

/// `Σ_w^{-1/2} Σ_b Σ_w^{-1/2}`.
pub fn lidar_matrix(sp: &ScatterPair) -> Result<SquareMatrix> {
    let whitener = spectra::inv_sqrt_psd(&sp.sigma_w)?;
    let w = whitener.as_matrix();
    Ok(SquareMatrix::symmetrized(w * sp.sigma_b.as_matrix() * w))
}

/// Eigenvalues of [`lidar_matrix`].
pub fn lidar_spectrum(sp: &ScatterPair) -> Result<Spectrum> {
    let m = lidar_matrix(sp)?;
    Ok(spectra::sym_eig(&m, DEFAULT_NEG_TOL)?.0)
}

/// Projects every sample onto the top-`k` principal directions of the
/// pooled, grand-mean-centered samples.
///
/// Both scatter matrices live in the span of the centered data, so once `k`
/// reaches its rank the whitened spectrum is unchanged.
pub fn reduce_dim(batch: &EmbeddingBatch, k: usize) -> Result<EmbeddingBatch> {
    let p = batch.p;
    if k < 1 || k > p {
        return Err(Error::BadTargetDim { k, p });
    }
    let basis = principal_basis(batch, k)?;
    let rows = batch.n * batch.q;
    let data: Vec<Vec<f64>> = batch
        .data
        .par_chunks(CHUNK_ROWS * p)
        .map(|chunk| {
            let block = DMatrix::from_row_slice(chunk.len() / p, p, chunk);
            let projected = block * &basis;
            let mut out = Vec::with_capacity(projected.len());
            for row in projected.row_iter() {
                out.extend(row.iter());
            }
            out
        })
        .collect();
    let data: Vec<f64> = data.into_iter().flatten().collect();
    debug_assert_eq!(data.len(), rows * k);
    EmbeddingBatch::new(batch.n, batch.q, k, data, batch.branch_label.clone())
}

/// `p x k` matrix with orthonormal columns spanning the leading principal
/// directions.
fn principal_basis(batch: &EmbeddingBatch, k: usize) -> Result<DMatrix<f64>> {
    let (_, grand) = class_means(batch);
    let rows = batch.n * batch.q;
    let p = batch.p;
    if rows >= p {
        let gram = centered_gram(batch, |_| grand.iter().copied().collect());
        let (_, vectors) = spectra::sym_eig(&SquareMatrix::symmetrized(gram), 1e-8)?;
        return Ok(vectors.columns(0, k).into_owned());
    }

    // Fewer samples than dimensions: diagonalize the rows x rows Gram matrix
    // and map its eigenvectors back through the data.
    let mut centered = batch.to_matrix();
    for mut row in centered.row_iter_mut() {
        row -= grand.transpose();
    }
    let gram = &centered * centered.transpose();
    let (spectrum, u) = spectra::sym_eig(&SquareMatrix::symmetrized(gram), 1e-8)?;
    let cut = 1e-12 * spectrum.max();
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(k);
    for (j, mu) in spectrum.values().iter().enumerate() {
        if columns.len() == k || *mu <= cut {
            break;
        }
        let v = centered.transpose() * u.column(j) / mu.sqrt();
        columns.push(v);
    }
    // Complete with standard basis vectors orthogonalized against the span.
    let mut axis = 0;
    while columns.len() < k && axis < p {
        let mut v = DVector::zeros(p);
        v[axis] = 1.0;
        axis += 1;
        for _ in 0..2 {
            for c in &columns {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            columns.push(v / norm);
        }
    }
    Ok(DMatrix::from_columns(&columns))
}
