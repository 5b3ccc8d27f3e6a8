//! Dense helpers shared by the solvers and the oracle.
//!
//! Time indices in this crate are 0-based in storage: step `t` of the
//! model (1-based, `t = 1..=T`) lives at index `t - 1`. Everything printed
//! for humans (CSV, diagnostics, `first_violation`) is 1-based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest condition number accepted before a solve is declared singular.
pub const COND_MAX: f64 = 1e12;

/// Lower-triangular table indexed by `(t, s)` with `s <= t`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
#[serde(bound(
    serialize = "T: Clone + Serialize",
    deserialize = "T: Clone + Deserialize<'de>"
))]
pub struct LowerTri<T> {
    horizon: usize,
    data: Vec<T>,
}

#[inline]
fn tri_index(t: usize, s: usize) -> usize {
    t * (t + 1) / 2 + s
}

impl<T: Clone> LowerTri<T> {
    pub fn filled(horizon: usize, value: T) -> Self {
        Self {
            horizon,
            data: vec![value; horizon * (horizon + 1) / 2],
        }
    }

    pub fn from_fn(horizon: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(horizon * (horizon + 1) / 2);
        for t in 0..horizon {
            for s in 0..=t {
                data.push(f(t, s));
            }
        }
        Self { horizon, data }
    }

    /// Builds from ragged rows where row `t` holds `t + 1` entries.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let horizon = rows.len();
        let mut data = Vec::with_capacity(horizon * (horizon + 1) / 2);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "row {} of a lower-triangular table has {} entries, expected {}",
                    t + 1,
                    row.len(),
                    t + 1
                )));
            }
            data.extend(row);
        }
        Ok(Self { horizon, data })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> &T {
        debug_assert!(s <= t && t < self.horizon);
        &self.data[tri_index(t, s)]
    }

    #[inline]
    pub fn get_mut(&mut self, t: usize, s: usize) -> &mut T {
        debug_assert!(s <= t && t < self.horizon);
        &mut self.data[tri_index(t, s)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, s: usize, value: T) {
        *self.get_mut(t, s) = value;
    }

    pub fn row(&self, t: usize) -> &[T] {
        let start = tri_index(t, 0);
        &self.data[start..start + t + 1]
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.horizon).map(|t| self.row(t).to_vec()).collect()
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> LowerTri<U> {
        LowerTri {
            horizon: self.horizon,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Keeps the leading `horizon` rows.
    pub fn truncate(&self, horizon: usize) -> Self {
        let horizon = horizon.min(self.horizon);
        Self {
            horizon,
            data: self.data[..horizon * (horizon + 1) / 2].to_vec(),
        }
    }
}

impl<T: Clone> TryFrom<Vec<Vec<T>>> for LowerTri<T> {
    type Error = Error;
    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl<T: Clone> From<LowerTri<T>> for Vec<Vec<T>> {
    fn from(tri: LowerTri<T>) -> Self {
        tri.rows()
    }
}

impl LowerTri<f64> {
    /// Full symmetric `T x T` matrix.
    pub fn to_symmetric(&self) -> DMatrix<f64> {
        let n = self.horizon;
        DMatrix::from_fn(n, n, |i, j| {
            if j <= i {
                *self.get(i, j)
            } else {
                *self.get(j, i)
            }
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.horizon, other.horizon);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl LowerTri<DMatrix<f64>> {
    /// Assembles the symmetric `(T·n) x (T·n)` matrix with blocks `(t, s)` and their transposes.
    pub fn to_symmetric_blocks(&self, n: usize) -> DMatrix<f64> {
        let size = self.horizon * n;
        let mut full = DMatrix::zeros(size, size);
        for t in 0..self.horizon {
            for s in 0..=t {
                let block = self.get(t, s);
                full.view_mut((t * n, s * n), (n, n)).copy_from(block);
                if s != t {
                    full.view_mut((s * n, t * n), (n, n))
                        .copy_from(&block.transpose());
                }
            }
        }
        full
    }

    /// Assembles a block-lower-triangular `(T·rows) x (T·cols)` matrix, zero above the diagonal.
    pub fn to_lower_blocks(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.horizon * rows, self.horizon * cols);
        for t in 0..self.horizon {
            for s in 0..=t {
                full.view_mut((t * rows, s * cols), (rows, cols))
                    .copy_from(self.get(t, s));
            }
        }
        full
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.horizon, other.horizon);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rejects a symmetric matrix whose smallest eigenvalue is below `-1e-10 · trace`.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let trace = m.trace().abs();
    let worst = min_eigenvalue(m);
    if worst < -1e-10 * trace.max(f64::MIN_POSITIVE) || !worst.is_finite() {
        return Err(Error::NotPositiveSemidefinite {
            worst_eigenvalue: worst,
        });
    }
    Ok(())
}

/// Lower Cholesky factor after adding `1e-12 · trace` to the diagonal.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let jitter = 1e-12 * m.trace().abs().max(1e-300);
    let mut work = m.clone();
    for i in 0..n {
        work[(i, i)] += jitter;
    }
    work.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::FactorizationFailure("covariance is not factorizable".into()))
}

/// Factor `L` (possibly rank deficient) with `L Lᵀ = m`, from the eigendecomposition.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut v = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        v.column_mut(j).scale_mut(scale);
    }
    v
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// 2-norm condition number of a square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `m x = b` for a general square `m`, refusing ill-conditioned systems.
/// On failure returns the measured condition number.
pub fn guarded_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let cond = condition_number(m);
    if !(cond <= COND_MAX) {
        return Err(cond);
    }
    m.clone().lu().solve(b).ok_or(cond)
}

/// Solves `m x = b` for symmetric positive definite `m` with a condition guard.
pub fn guarded_spd_solve(
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> std::result::Result<DMatrix<f64>, f64> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !(max / min <= COND_MAX) {
        return Err(if min > 0.0 { max / min } else { f64::INFINITY });
    }
    match m.clone().cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => Err(f64::INFINITY),
    }
}

pub fn dvec(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

pub fn scalar_mat(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Row-major nested arrays, the JSON layout used for matrices.
pub fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`mat_rows`]; rows must be non-empty and of equal length.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
