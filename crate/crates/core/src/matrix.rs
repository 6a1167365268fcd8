//! Dense symmetric positive-definite linear algebra, observation handling and
//! the Förstner–Moonen distance between covariance matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{FidError, Result};
use crate::models::SparsityPattern;
use crate::scalar::Scalar;

/// Relative symmetry tolerance applied on construction.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Smallest admissible Cholesky pivot relative to the largest diagonal entry.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its Cholesky factor.
///
/// The factor is computed once on construction and doubles as the
/// positive-definiteness witness: every pivot `L[i,i]^2` must exceed
/// `PD_PIVOT_TOL` times the largest diagonal entry.
#[derive(Clone, Debug)]
pub struct SpdMatrix<T: Scalar> {
    entries: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
}

impl<T: Scalar> SpdMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        if !entries.is_square() {
            return Err(FidError::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(FidError::OutOfRange("empty matrix".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(FidError::NotPositiveDefinite);
        }
        let scale = entries.amax();
        let asym = asymmetry(&entries);
        if asym > T::lit(SYMMETRY_TOL) * scale {
            return Err(FidError::NotSymmetric(asym.as_f64()));
        }
        let entries = (&entries + entries.transpose()) * T::lit(0.5);
        let chol = checked_cholesky(&entries).ok_or(FidError::NotPositiveDefinite)?;
        Ok(Self { entries, chol })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is positive definite")
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.entries
    }

    /// Lower-triangular `L` with `L Lᵀ = self`.
    pub fn chol_factor(&self) -> DMatrix<T> {
        self.chol.l()
    }

    pub fn cholesky(&self) -> &Cholesky<T, Dyn> {
        &self.chol
    }

    pub fn log_det(&self) -> T {
        let l = self.chol.l_dirty();
        (0..self.dim()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0)
    }

    pub fn inverse(&self) -> SpdMatrix<T> {
        let inv = self.chol.inverse();
        SpdMatrix::new(inv).expect("inverse of an SPD matrix is SPD")
    }

    pub fn solve(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(rhs)
    }

    pub fn scaled(&self, c: T) -> Result<SpdMatrix<T>> {
        SpdMatrix::new(&self.entries * c)
    }

    /// `T M Tᵀ` for a square non-singular `T`.
    pub fn congruence(&self, t: &DMatrix<T>) -> Result<SpdMatrix<T>> {
        SpdMatrix::new(t * &self.entries * t.transpose())
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn principal(&self, idx: &[usize]) -> SpdMatrix<T> {
        SpdMatrix::new(principal_submatrix(&self.entries, idx))
            .expect("principal submatrix of an SPD matrix is SPD")
    }

    /// Symmetric square root `M^{1/2}`.
    pub fn sqrt(&self) -> DMatrix<T> {
        let eig = SymmetricEigen::new(self.entries.clone());
        let d = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        let mut ev: Vec<T> = self.entries.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        ev
    }

    /// Unit eigenvector of the largest eigenvalue (sign arbitrary).
    pub fn leading_eigenvector(&self) -> DVector<T> {
        let eig = SymmetricEigen::new(self.entries.clone());
        let k = eig.eigenvalues.imax();
        eig.eigenvectors.column(k).into_owned()
    }
}

impl<T: Scalar> PartialEq for SpdMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorisation that also enforces the relative pivot floor.
pub(crate) fn checked_cholesky<T: Scalar>(m: &DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    let max_diag = m.diagonal().iter().fold(T::zero(), |a, &b| a.max(b));
    if max_diag <= T::zero() {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    let floor = T::lit(PD_PIVOT_TOL) * max_diag;
    let l = chol.l_dirty();
    if (0..m.nrows()).all(|i| l[(i, i)] * l[(i, i)] > floor) {
        Some(chol)
    } else {
        None
    }
}

/// `ln det` of a symmetric matrix that is expected to be positive definite;
/// `None` when the pivot test fails.
pub fn log_det_spd<T: Scalar>(m: &DMatrix<T>) -> Option<T> {
    let chol = checked_cholesky(m)?;
    let l = chol.l_dirty();
    Some((0..m.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0))
}

pub fn principal_submatrix<T: Scalar>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

fn same_dim<T: Scalar>(m: &SpdMatrix<T>, n: &SpdMatrix<T>) -> Result<()> {
    if m.dim() != n.dim() {
        return Err(FidError::DimensionMismatch {
            expected: m.dim(),
            found: n.dim(),
        });
    }
    Ok(())
}

/// Generalized eigenvalues `λ` solving `det(λM − N) = 0`, ascending.
///
/// Computed as the ordinary eigenvalues of `L⁻¹ N L⁻ᵀ` where `M = L Lᵀ`.
pub fn generalized_eigenvalues<T: Scalar>(m: &SpdMatrix<T>, n: &SpdMatrix<T>) -> Result<Vec<T>> {
    same_dim(m, n)?;
    let l = m.chol_factor();
    let half = l
        .solve_lower_triangular(n.matrix())
        .ok_or(FidError::NotPositiveDefinite)?;
    let whitened = l
        .solve_lower_triangular(&half.transpose())
        .ok_or(FidError::NotPositiveDefinite)?;
    let whitened = (&whitened + whitened.transpose()) * T::lit(0.5);
    let mut ev: Vec<T> = whitened.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(ev)
}

/// Förstner–Moonen distance `sqrt(Σ ln² λᵢ)` over the `p` generalized eigenvalues.
pub fn fm_distance<T: Scalar>(m: &SpdMatrix<T>, n: &SpdMatrix<T>) -> Result<T> {
    let ev = generalized_eigenvalues(m, n)?;
    let mut acc = T::zero();
    for lambda in ev {
        if lambda <= T::zero() {
            return Err(FidError::NotPositiveDefinite);
        }
        let l = lambda.ln();
        acc += l * l;
    }
    Ok(acc.sqrt())
}

pub fn log_det<T: Scalar>(m: &SpdMatrix<T>) -> T {
    m.log_det()
}

pub fn inverse<T: Scalar>(m: &SpdMatrix<T>) -> SpdMatrix<T> {
    m.inverse()
}

/// Angle in `[0, π/2]` between the leading eigenvectors of `m` and `n`.
pub fn eigvec_angle<T: Scalar>(m: &SpdMatrix<T>, n: &SpdMatrix<T>) -> Result<T> {
    same_dim(m, n)?;
    let u = m.leading_eigenvector();
    let v = n.leading_eigenvector();
    let c = u.dot(&v).abs().min(T::one());
    Ok(c.acos())
}

/// Square covariate matrix `A` with `Σ = A Aᵀ`, tied to a sparsity pattern.
///
/// Entries outside the pattern are exactly zero and the diagonal is strictly
/// positive, which fixes the column-sign ambiguity of `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateMatrix<T: Scalar> {
    entries: DMatrix<T>,
    pattern: SparsityPattern,
}

impl<T: Scalar> CovariateMatrix<T> {
    pub fn new(entries: DMatrix<T>, pattern: SparsityPattern) -> Result<Self> {
        let p = pattern.dim();
        if entries.nrows() != p || entries.ncols() != p {
            return Err(FidError::DimensionMismatch {
                expected: p,
                found: entries.nrows().max(entries.ncols()),
            });
        }
        if !pattern.has_full_diagonal() {
            return Err(FidError::InvalidPattern("diagonal entries must be free".into()));
        }
        for i in 0..p {
            for j in 0..p {
                if !pattern.is_active(i, j) && entries[(i, j)] != T::zero() {
                    return Err(FidError::InvalidPattern(format!(
                        "entry ({}, {}) is structurally zero but non-zero",
                        i + 1,
                        j + 1
                    )));
                }
            }
            if !(entries[(i, i)] > T::zero()) {
                return Err(FidError::OutOfRange(format!("diagonal entry {} must be positive", i + 1)));
            }
        }
        if !entries.iter().all(|x| x.is_finite()) {
            return Err(FidError::OutOfRange("non-finite entry".into()));
        }
        let out = Self { entries, pattern };
        if out.log_abs_det().is_none() {
            return Err(FidError::Singular);
        }
        Ok(out)
    }

    /// Pattern taken from the non-zero entries.
    pub fn from_matrix(entries: DMatrix<T>) -> Result<Self> {
        let pattern = SparsityPattern::from_matrix(&entries)?;
        Self::new(entries, pattern)
    }

    /// Zeroes everything outside `pattern`, then validates.
    pub fn projected(mut entries: DMatrix<T>, pattern: SparsityPattern) -> Result<Self> {
        for i in 0..pattern.dim().min(entries.nrows()) {
            for j in 0..pattern.dim().min(entries.ncols()) {
                if !pattern.is_active(i, j) {
                    entries[(i, j)] = T::zero();
                }
            }
        }
        Self::new(entries, pattern)
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    /// Raw write used by the samplers; caller keeps the invariants.
    #[inline]
    pub(crate) fn set_unchecked(&mut self, i: usize, j: usize, v: T) {
        self.entries[(i, j)] = v;
    }

    /// `ln |det A|`, or `None` when `A` is numerically singular.
    pub fn log_abs_det(&self) -> Option<T> {
        log_abs_det(&self.entries)
    }

    /// `Σ = A Aᵀ`.
    pub fn sigma_matrix(&self) -> DMatrix<T> {
        &self.entries * self.entries.transpose()
    }

    pub fn covariance(&self) -> Result<SpdMatrix<T>> {
        SpdMatrix::new(self.sigma_matrix())
    }
}

/// `ln |det M|` through LU; `None` for a (numerically) singular matrix.
pub fn log_abs_det<T: Scalar>(m: &DMatrix<T>) -> Option<T> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = T::zero();
    let scale = m.amax();
    if !(scale > T::zero()) {
        return None;
    }
    let tiny = T::default_epsilon() * scale * T::from_count(m.nrows());
    for i in 0..m.nrows() {
        let d = u[(i, i)].abs();
        if !(d > tiny) {
            return None;
        }
        acc += d.ln();
    }
    Some(acc)
}

/// `n × p` observation matrix, one zero-mean observation per row.
///
/// The uncentered sample covariance `VᵀV / n` is computed once on
/// construction since every density evaluation needs it.
#[derive(Clone, Debug)]
pub struct ObservationSet<T: Scalar> {
    data: DMatrix<T>,
    cov: DMatrix<T>,
}

impl<T: Scalar> ObservationSet<T> {
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(FidError::EmptyObservations);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(FidError::OutOfRange("non-finite observation".into()));
        }
        let cov = data.tr_mul(&data) / T::from_count(data.nrows());
        let cov = (&cov + cov.transpose()) * T::lit(0.5);
        Ok(Self { data, cov })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(FidError::EmptyObservations);
        }
        let p = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(FidError::DimensionMismatch {
                expected: p,
                found: rows[bad].len(),
            });
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    /// The `n × p` matrix `V` of stacked observations.
    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    /// `S_n` as a raw matrix (possibly singular).
    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Restriction to a subset of coordinates.
    pub fn columns(&self, idx: &[usize]) -> ObservationSet<T> {
        let data = DMatrix::from_fn(self.n(), idx.len(), |i, j| self.data[(i, idx[j])]);
        let cov = principal_submatrix(&self.cov, idx);
        ObservationSet { data, cov }
    }

    /// Copy with every column mean removed; only meaningful for real data.
    pub fn centered(&self) -> Result<ObservationSet<T>> {
        let n = T::from_count(self.n());
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
        }
        ObservationSet::new(data)
    }

    /// Every coordinate with zero empirical second moment.
    pub fn zero_variance_coordinates(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.cov[(j, j)] <= T::zero()).collect()
    }

    pub fn sample_covariance(&self) -> SampleCovariance<T> {
        let spd = if self.n() >= self.p() {
            SpdMatrix::new(self.cov.clone()).ok()
        } else {
            None
        };
        SampleCovariance {
            matrix: self.cov.clone(),
            n: self.n(),
            spd,
        }
    }
}

/// Result of [`sample_covariance`]: always the PSD matrix, plus its SPD view
/// when it is numerically nonsingular.
#[derive(Clone, Debug)]
pub struct SampleCovariance<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub n: usize,
    spd: Option<SpdMatrix<T>>,
}

impl<T: Scalar> SampleCovariance<T> {
    pub fn is_singular(&self) -> bool {
        self.spd.is_none()
    }

    pub fn spd(&self) -> Result<&SpdMatrix<T>> {
        self.spd.as_ref().ok_or(FidError::Singular)
    }

    pub fn into_spd(self) -> Result<SpdMatrix<T>> {
        self.spd.ok_or(FidError::Singular)
    }
}

/// Uncentered `(1/n) Σ yᵢ yᵢᵀ`.
pub fn sample_covariance<T: Scalar>(obs: &ObservationSet<T>) -> SampleCovariance<T> {
    obs.sample_covariance()
}
