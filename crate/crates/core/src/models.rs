//! Structural models: sparsity patterns of the covariate matrix and clique
//! partitions of the coordinates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FidError, Result};
use crate::matrix::SpdMatrix;
use crate::scalar::Scalar;

/// Absolute entrywise tolerance used by [`is_compatible`].
pub const COMPATIBILITY_TOL: f64 = 1e-12;

/// Largest dimension accepted by [`enumerate_partitions`] (Bell(8) = 4140).
pub const MAX_ENUMERATION_DIM: usize = 8;

/// Which entries of a `p × p` covariate matrix are free (non-zero) per row.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SparsityPattern {
    dim: usize,
    active: Vec<bool>,
}

impl SparsityPattern {
    /// Builds a pattern from a row-major activity mask.
    pub fn from_mask(dim: usize, active: Vec<bool>) -> Result<Self> {
        if dim == 0 {
            return Err(FidError::InvalidPattern("dimension must be positive".into()));
        }
        if active.len() != dim * dim {
            return Err(FidError::DimensionMismatch {
                expected: dim * dim,
                found: active.len(),
            });
        }
        let pattern = Self { dim, active };
        if let Some(row) = (0..dim).find(|&i| pattern.row_free_count(i) == 0) {
            return Err(FidError::InvalidPattern(format!("row {} has no free entries", row + 1)));
        }
        Ok(pattern)
    }

    pub fn full(dim: usize) -> Self {
        Self::from_mask(dim, vec![true; dim * dim]).expect("full pattern is valid")
    }

    pub fn diagonal(dim: usize) -> Self {
        Self::from_mask(dim, (0..dim * dim).map(|k| k / dim == k % dim).collect())
            .expect("diagonal pattern is valid")
    }

    /// Pattern of the non-zero entries of `a`.
    pub fn from_matrix<T: Scalar>(a: &DMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(FidError::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        let p = a.nrows();
        Self::from_mask(p, (0..p * p).map(|k| a[(k / p, k % p)] != T::zero()).collect())
    }

    /// Pattern with `zero_sets[i]` listing the structurally-zero columns of row `i`.
    pub fn from_zero_sets(dim: usize, zero_sets: &[Vec<usize>]) -> Result<Self> {
        if zero_sets.len() != dim {
            return Err(FidError::DimensionMismatch {
                expected: dim,
                found: zero_sets.len(),
            });
        }
        let mut active = vec![true; dim * dim];
        for (i, zs) in zero_sets.iter().enumerate() {
            for &j in zs {
                if j >= dim {
                    return Err(FidError::InvalidPattern(format!("column {j} out of range")));
                }
                active[i * dim + j] = false;
            }
        }
        Self::from_mask(dim, active)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.active[i * self.dim + j]
    }

    /// Sets one entry; fails if it would empty a row.
    pub fn set(&mut self, i: usize, j: usize, on: bool) -> Result<()> {
        let was = self.is_active(i, j);
        self.active[i * self.dim + j] = on;
        if !on && self.row_free_count(i) == 0 {
            self.active[i * self.dim + j] = was;
            return Err(FidError::InvalidPattern(format!("row {} would be empty", i + 1)));
        }
        Ok(())
    }

    /// `S_i`: structurally-zero columns of row `i`.
    pub fn zero_set(&self, i: usize) -> Vec<usize> {
        (0..self.dim).filter(|&j| !self.is_active(i, j)).collect()
    }

    /// Complement of [`zero_set`](Self::zero_set).
    pub fn free_columns(&self, i: usize) -> Vec<usize> {
        (0..self.dim).filter(|&j| self.is_active(i, j)).collect()
    }

    /// `p_i`.
    pub fn row_free_count(&self, i: usize) -> usize {
        (0..self.dim).filter(|&j| self.is_active(i, j)).count()
    }

    pub fn row_free_counts(&self) -> Vec<usize> {
        (0..self.dim).map(|i| self.row_free_count(i)).collect()
    }

    pub fn column_count(&self, j: usize) -> usize {
        (0..self.dim).filter(|&i| self.is_active(i, j)).count()
    }

    pub fn max_column_count(&self) -> usize {
        (0..self.dim).map(|j| self.column_count(j)).max().unwrap_or(0)
    }

    pub fn respects_cap(&self, max_c: usize) -> bool {
        self.max_column_count() <= max_c
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_full(&self) -> bool {
        self.active.iter().all(|&a| a)
    }

    pub fn has_full_diagonal(&self) -> bool {
        (0..self.dim).all(|i| self.is_active(i, i))
    }

    /// Active `(row, column)` positions in row-major order.
    pub fn active_positions(&self) -> Vec<(usize, usize)> {
        (0..self.dim * self.dim)
            .filter(|&k| self.active[k])
            .map(|k| (k / self.dim, k % self.dim))
            .collect()
    }
}

/// Rows joined by `/`, one `0`/`1` character per column.
impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim {
            if i > 0 {
                f.write_str("/")?;
            }
            for j in 0..self.dim {
                f.write_str(if self.is_active(i, j) { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

impl From<SparsityPattern> for String {
    fn from(p: SparsityPattern) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for SparsityPattern {
    type Error = FidError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SparsityPattern {
    type Err = FidError;

    fn from_str(s: &str) -> Result<Self> {
        let rows: Vec<&str> = s.trim().split('/').collect();
        let dim = rows.len();
        let mut active = Vec::with_capacity(dim * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(FidError::InvalidPattern(format!("row '{row}' has wrong length")));
            }
            for c in row.chars() {
                match c {
                    '1' => active.push(true),
                    '0' => active.push(false),
                    other => {
                        return Err(FidError::InvalidPattern(format!("unexpected character '{other}'")))
                    }
                }
            }
        }
        Self::from_mask(dim, active)
    }
}

/// A partition of `{0, …, p−1}` into cliques, stored in canonical form:
/// clique labels are assigned in order of each clique's smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CliqueModel {
    labels: Vec<usize>,
    count: usize,
}

impl CliqueModel {
    /// Canonicalises an arbitrary labelling.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(FidError::InvalidModel("empty partition".into()));
        }
        let mut map = std::collections::HashMap::new();
        let canon: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Self {
            count: map.len(),
            labels: canon,
        })
    }

    pub fn from_cliques(dim: usize, cliques: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![usize::MAX; dim];
        for (c, members) in cliques.iter().enumerate() {
            if members.is_empty() {
                return Err(FidError::InvalidModel("empty clique".into()));
            }
            for &m in members {
                if m >= dim {
                    return Err(FidError::InvalidModel(format!("index {} out of range", m + 1)));
                }
                if labels[m] != usize::MAX {
                    return Err(FidError::InvalidModel(format!("index {} repeated", m + 1)));
                }
                labels[m] = c;
            }
        }
        if let Some(missing) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(FidError::InvalidModel(format!("index {} not covered", missing + 1)));
        }
        Self::from_labels(&labels)
    }

    /// Equal consecutive cliques of the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(FidError::InvalidModel("clique sizes must be positive".into()));
        }
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &g)| std::iter::repeat_n(c, g))
            .collect();
        Self::from_labels(&labels)
    }

    pub fn singletons(dim: usize) -> Self {
        Self::from_labels(&(0..dim).collect::<Vec<_>>()).expect("dim > 0")
    }

    pub fn single_clique(dim: usize) -> Self {
        Self::from_labels(&vec![0; dim]).expect("dim > 0")
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Number of cliques `k`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Canonical clique label of every coordinate.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn same_clique(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }

    /// Members of each clique, in canonical order.
    pub fn cliques(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Clique sizes `g_1..g_k`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.count];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }

    /// Block-diagonal sparsity pattern of a covariate matrix for this model.
    pub fn to_pattern(&self) -> SparsityPattern {
        let p = self.dim();
        SparsityPattern::from_mask(p, (0..p * p).map(|k| self.same_clique(k / p, k % p)).collect())
            .expect("clique pattern has a full diagonal")
    }
}

/// `"1|2 3|4 5 6"`: cliques separated by `|`, 1-based members by spaces.
impl fmt::Display for CliqueModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, members) in self.cliques().iter().enumerate() {
            if c > 0 {
                f.write_str("|")?;
            }
            for (k, m) in members.iter().enumerate() {
                if k > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "{}", m + 1)?;
            }
        }
        Ok(())
    }
}

impl From<CliqueModel> for String {
    fn from(m: CliqueModel) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for CliqueModel {
    type Error = FidError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for CliqueModel {
    type Err = FidError;

    fn from_str(s: &str) -> Result<Self> {
        let mut cliques = Vec::new();
        for part in s.trim().split('|') {
            let members = part
                .split_whitespace()
                .map(|tok| match tok.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(FidError::InvalidModel(format!("bad index '{tok}'"))),
                })
                .collect::<Result<Vec<_>>>()?;
            cliques.push(members);
        }
        let dim = cliques.iter().map(|c| c.len()).sum();
        Self::from_cliques(dim, &cliques)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(FidError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `S^ℳ` on a raw matrix: cross-clique off-diagonal entries set to zero.
pub fn restrict_matrix<T: Scalar>(s: &DMatrix<T>, model: &CliqueModel) -> Result<DMatrix<T>> {
    check_dim(model.dim(), s.nrows())?;
    check_dim(s.nrows(), s.ncols())?;
    Ok(DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
        if model.same_clique(i, j) {
            s[(i, j)]
        } else {
            T::zero()
        }
    }))
}

/// `S^ℳ`; block-diagonal up to permutation and SPD whenever `S` is.
pub fn restrict_to_model<T: Scalar>(s: &SpdMatrix<T>, model: &CliqueModel) -> Result<SpdMatrix<T>> {
    SpdMatrix::new(restrict_matrix(s.matrix(), model)?)
}

/// True iff every clique of `m1` lies inside some clique of `m2`.
pub fn is_submodel(m1: &CliqueModel, m2: &CliqueModel) -> bool {
    if m1.dim() != m2.dim() {
        return false;
    }
    m1.cliques()
        .iter()
        .all(|c| c.iter().all(|&i| m2.same_clique(i, c[0])))
}

/// True iff `Σ₀^ℳ = Σ₀` entrywise within [`COMPATIBILITY_TOL`].
pub fn is_compatible<T: Scalar>(model: &CliqueModel, sigma0: &SpdMatrix<T>) -> bool {
    if model.dim() != sigma0.dim() {
        return false;
    }
    let m = sigma0.matrix();
    let tol = T::lit(COMPATIBILITY_TOL);
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| model.same_clique(i, j) || m[(i, j)].abs() <= tol))
}

/// The clique model whose block pattern equals `pattern`, if there is one.
pub fn pattern_to_clique(pattern: &SparsityPattern) -> Option<CliqueModel> {
    let p = pattern.dim();
    if !pattern.has_full_diagonal() {
        return None;
    }
    // Connected components of the activity graph; a clique pattern must then
    // be exactly "active iff same component".
    let mut labels = vec![usize::MAX; p];
    let mut next = 0;
    for start in 0..p {
        if labels[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        labels[start] = next;
        while let Some(i) = stack.pop() {
            for j in 0..p {
                if (pattern.is_active(i, j) || pattern.is_active(j, i)) && labels[j] == usize::MAX {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let model = CliqueModel::from_labels(&labels).ok()?;
    let consistent =
        (0..p).all(|i| (0..p).all(|j| pattern.is_active(i, j) == model.same_clique(i, j)));
    consistent.then_some(model)
}

/// All set partitions of `{0..p−1}` in canonical form (restricted growth strings).
pub fn enumerate_partitions(p: usize) -> Result<Vec<CliqueModel>> {
    if p == 0 || p > MAX_ENUMERATION_DIM {
        return Err(FidError::OutOfRange(format!(
            "enumerate_partitions supports 1 <= p <= {MAX_ENUMERATION_DIM}, got {p}"
        )));
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; p];
    fn recurse(pos: usize, max_label: usize, labels: &mut Vec<usize>, out: &mut Vec<CliqueModel>) {
        if pos == labels.len() {
            out.push(CliqueModel {
                labels: labels.clone(),
                count: max_label + 1,
            });
            return;
        }
        for l in 0..=max_label + 1 {
            labels[pos] = l;
            recurse(pos + 1, max_label.max(l), labels, out);
        }
    }
    if p == 1 {
        out.push(CliqueModel::singletons(1));
    } else {
        recurse(1, 0, &mut labels, &mut out);
    }
    Ok(out)
}
