//! Log-density evaluation for the generalized fiducial distribution of a
//! covariate matrix: Gaussian likelihood, data-generating Jacobians under the
//! l2 and l∞ norms, normalizing constants and model penalties.
//!
//! Everything is on the natural-log scale. A zero density is represented by
//! `-∞`, never by NaN.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FidError, Result};
use crate::matrix::{log_abs_det, log_det_spd, principal_submatrix, CovariateMatrix, ObservationSet};
use crate::models::{CliqueModel, SparsityPattern};
use crate::scalar::{binomial, ln_binomial, Scalar};

/// Default number of subsets summed exactly before switching to Monte Carlo.
pub const DEFAULT_ENUMERATION_CAP: usize = 10_000;

/// Default number of random subsets in the Monte Carlo row average.
pub const DEFAULT_MC_SAMPLES: usize = 2_000;

/// Norm used when inverting the data-generating equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum NormChoice {
    L2,
    LInf {
        enumeration_cap: usize,
        mc_samples: usize,
    },
}

impl NormChoice {
    pub fn linf() -> Self {
        NormChoice::LInf {
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NormChoice::L2 => Ok(()),
            NormChoice::LInf {
                enumeration_cap,
                mc_samples,
            } => {
                if enumeration_cap < 1 {
                    return Err(FidError::Config("enumeration_cap must be at least 1".into()));
                }
                if mc_samples < 100 {
                    return Err(FidError::Config("mc_samples must be at least 100".into()));
                }
                Ok(())
            }
        }
    }
}

/// A value on the natural-log scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogDensity<T: Scalar> {
    pub value: T,
    pub normalized: bool,
}

impl<T: Scalar> LogDensity<T> {
    pub fn unnormalized(value: T) -> Self {
        Self {
            value,
            normalized: false,
        }
    }

    pub fn normalized(value: T) -> Self {
        Self {
            value,
            normalized: true,
        }
    }

    /// The flagged zero-density value.
    pub fn zero_density() -> Self {
        Self::unnormalized(T::neg_infinity())
    }

    pub fn is_zero_density(&self) -> bool {
        self.value == T::neg_infinity()
    }
}

/// Row-index subsets used by the l∞ Jacobian.
///
/// For each subset size `k` the average of `|det M_I|` over all `C(n, k)` row
/// subsets `I` is computed exactly when `C(n, k)` does not exceed the
/// enumeration cap; otherwise a fixed batch of uniformly drawn subsets stands
/// in for the full sum. The batch only changes on [`refresh`](Self::refresh),
/// so densities compared within one sampler sweep share the same draws.
#[derive(Clone, Debug)]
pub struct SubsetPlan {
    n: usize,
    enumeration_cap: usize,
    mc_samples: usize,
    sampled: BTreeMap<usize, Vec<Vec<usize>>>,
}

impl SubsetPlan {
    /// Plan for subset sizes `1..=max_k`, drawing Monte Carlo batches where needed.
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        max_k: usize,
        enumeration_cap: usize,
        mc_samples: usize,
        rng: &mut R,
    ) -> Self {
        let mut plan = Self {
            n,
            enumeration_cap,
            mc_samples,
            sampled: BTreeMap::new(),
        };
        for k in 1..=max_k.min(n) {
            if !plan.is_exact(k) {
                plan.sampled.insert(k, Vec::new());
            }
        }
        plan.refresh(rng);
        plan
    }

    pub fn is_exact(&self, k: usize) -> bool {
        binomial(self.n, k) <= self.enumeration_cap as u128
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Redraws every Monte Carlo batch.
    pub fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.n;
        let draws = self.mc_samples;
        for (&k, batch) in self.sampled.iter_mut() {
            batch.clear();
            for _ in 0..draws {
                let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
                idx.sort_unstable();
                batch.push(idx);
            }
        }
    }

    /// Mean of `|det M_I|` over row subsets `I` with `|I| = m.ncols()`.
    pub fn average_abs_det<T: Scalar>(&self, m: &DMatrix<T>) -> Result<T> {
        let k = m.ncols();
        if m.nrows() != self.n {
            return Err(FidError::DimensionMismatch {
                expected: self.n,
                found: m.nrows(),
            });
        }
        if k == 0 || k > self.n {
            return Err(FidError::TooFewSamples {
                needed: k,
                got: self.n,
            });
        }
        let mut buf = vec![T::zero(); k * k];
        if self.is_exact(k) {
            let mut idx: Vec<usize> = (0..k).collect();
            let mut sum = T::zero();
            let mut count = 0usize;
            loop {
                sum += abs_det_rows(m, &idx, &mut buf);
                count += 1;
                if !next_combination(&mut idx, self.n) {
                    break;
                }
            }
            Ok(sum / T::from_count(count))
        } else {
            let batch = self.sampled.get(&k).ok_or_else(|| {
                FidError::Config(format!("subset plan has no draws for size {k}"))
            })?;
            let sum = batch
                .iter()
                .fold(T::zero(), |acc, idx| acc + abs_det_rows(m, idx, &mut buf));
            Ok(sum / T::from_count(batch.len()))
        }
    }
}

/// Advances `idx` to the next k-combination of `0..n` in lexicographic order.
pub(crate) fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in (i + 1)..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `|det|` of the square submatrix of `m` on rows `rows`, by partial-pivot
/// elimination in `buf`.
fn abs_det_rows<T: Scalar>(m: &DMatrix<T>, rows: &[usize], buf: &mut [T]) -> T {
    let k = rows.len();
    match k {
        1 => return m[(rows[0], 0)].abs(),
        2 => {
            let (a, b) = (rows[0], rows[1]);
            return (m[(a, 0)] * m[(b, 1)] - m[(a, 1)] * m[(b, 0)]).abs();
        }
        _ => {}
    }
    for (r, &row) in rows.iter().enumerate() {
        for c in 0..k {
            buf[r * k + c] = m[(row, c)];
        }
    }
    let mut det = T::one();
    for col in 0..k {
        let mut piv = col;
        let mut best = buf[col * k + col].abs();
        for r in (col + 1)..k {
            let v = buf[r * k + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == T::zero() {
            return T::zero();
        }
        if piv != col {
            for c in 0..k {
                buf.swap(col * k + c, piv * k + c);
            }
        }
        let d = buf[col * k + col];
        det *= d;
        for r in (col + 1)..k {
            let f = buf[r * k + col] / d;
            if f != T::zero() {
                for c in col..k {
                    let v = buf[col * k + c];
                    buf[r * k + c] -= f * v;
                }
            }
        }
    }
    det.abs()
}

/// The norm as used during evaluation, with any l∞ subset draws attached.
#[derive(Clone, Debug)]
pub enum Norm {
    L2,
    LInf(SubsetPlan),
}

impl Norm {
    /// Builds the evaluator for observations of size `n` and subset sizes up to `max_k`.
    pub fn build<R: Rng + ?Sized>(choice: NormChoice, n: usize, max_k: usize, rng: &mut R) -> Self {
        match choice {
            NormChoice::L2 => Norm::L2,
            NormChoice::LInf {
                enumeration_cap,
                mc_samples,
            } => Norm::LInf(SubsetPlan::new(n, max_k, enumeration_cap, mc_samples, rng)),
        }
    }

    /// Evaluator that only ever enumerates exactly; panics on a capped size.
    pub fn linf_exact(n: usize) -> Self {
        Norm::LInf(SubsetPlan {
            n,
            enumeration_cap: usize::MAX,
            mc_samples: 0,
            sampled: BTreeMap::new(),
        })
    }

    pub fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Norm::LInf(plan) = self {
            plan.refresh(rng);
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// `A⁻¹ S_n A⁻ᵀ` together with `ln |det A|`; `None` if `A` is singular.
struct Whitened<T: Scalar> {
    log_abs_det_a: T,
    w: DMatrix<T>,
}

fn whiten<T: Scalar>(obs: &ObservationSet<T>, a: &DMatrix<T>) -> Option<Whitened<T>> {
    let log_abs_det_a = log_abs_det(a)?;
    let lu = a.clone().lu();
    let left = lu.solve(obs.cov())?;
    let w = lu.solve(&left.transpose())?;
    let w = (&w + w.transpose()) * T::lit(0.5);
    if !w.iter().all(|x| x.is_finite()) {
        return None;
    }
    Some(Whitened { log_abs_det_a, w })
}

fn check_dims<T: Scalar>(obs: &ObservationSet<T>, a: &DMatrix<T>) -> Result<()> {
    if a.nrows() != obs.p() || a.ncols() != obs.p() {
        return Err(FidError::DimensionMismatch {
            expected: obs.p(),
            found: a.nrows(),
        });
    }
    Ok(())
}

fn likelihood_from<T: Scalar>(obs: &ObservationSet<T>, wh: &Whitened<T>) -> T {
    let n = T::from_count(obs.n());
    let p = T::from_count(obs.p());
    -(n * p / T::lit(2.0)) * T::lit(LN_2PI) - n * wh.log_abs_det_a - n / T::lit(2.0) * wh.w.trace()
}

/// `ln f(y | A)` for `yᵢ ~ N(0, A Aᵀ)` on a raw matrix.
pub fn log_likelihood_raw<T: Scalar>(obs: &ObservationSet<T>, a: &DMatrix<T>) -> Result<LogDensity<T>> {
    check_dims(obs, a)?;
    Ok(match whiten(obs, a) {
        Some(wh) => LogDensity::normalized(likelihood_from(obs, &wh)),
        None => LogDensity {
            value: T::neg_infinity(),
            normalized: true,
        },
    })
}

/// `ln f(y | A) = −(np/2) ln 2π − n ln|det A| − ½ tr(n S_n (A Aᵀ)⁻¹)`.
pub fn log_likelihood<T: Scalar>(obs: &ObservationSet<T>, a: &CovariateMatrix<T>) -> Result<LogDensity<T>> {
    log_likelihood_raw(obs, a.entries())
}

/// `ln C(y)`, the data-dependent factor of the full-model Jacobian.
///
/// l2: `(p/2) ln det S_n`; l∞: `p ln` of the mean `|det V_I|` over `p`-row
/// subsets. `-∞` when the relevant quantity vanishes.
pub fn log_jacobian_constant<T: Scalar>(obs: &ObservationSet<T>, norm: &Norm) -> Result<T> {
    let p = obs.p();
    if obs.n() < p {
        return Err(FidError::TooFewSamples {
            needed: p,
            got: obs.n(),
        });
    }
    let pf = T::from_count(p);
    match norm {
        Norm::L2 => Ok(match log_det_spd(obs.cov()) {
            Some(ld) => pf / T::lit(2.0) * ld,
            None => T::neg_infinity(),
        }),
        Norm::LInf(plan) => {
            let avg = plan.average_abs_det(obs.data())?;
            Ok(if avg > T::zero() {
                pf * avg.ln()
            } else {
                T::neg_infinity()
            })
        }
    }
}

fn max_row_count(pattern: &SparsityPattern) -> usize {
    pattern.row_free_counts().into_iter().max().unwrap_or(0)
}

/// Jacobian through the general sparse-pattern formulas, even for full patterns.
///
/// l2: `½ Σᵢ ln det(UᵢᵀUᵢ / n)` with `Uᵢᵀ Uᵢ / n` the principal submatrix of
/// `A⁻¹ S_n A⁻ᵀ` on row `i`'s free columns. l∞: `Σᵢ ln` of the average
/// `|det (Uᵢ)_I|` over `pᵢ`-row subsets `I`, with `U = V A⁻ᵀ`.
pub fn log_jacobian_general_raw<T: Scalar>(
    obs: &ObservationSet<T>,
    a: &DMatrix<T>,
    pattern: &SparsityPattern,
    norm: &Norm,
) -> Result<LogDensity<T>> {
    check_dims(obs, a)?;
    let needed = max_row_count(pattern);
    if obs.n() < needed {
        return Err(FidError::TooFewSamples {
            needed,
            got: obs.n(),
        });
    }
    let p = obs.p();
    match norm {
        Norm::L2 => {
            let Some(wh) = whiten(obs, a) else {
                return Ok(LogDensity::zero_density());
            };
            let mut acc = T::zero();
            for i in 0..p {
                let free = pattern.free_columns(i);
                match log_det_spd(&principal_submatrix(&wh.w, &free)) {
                    Some(ld) => acc += ld,
                    None => return Ok(LogDensity::zero_density()),
                }
            }
            Ok(LogDensity::unnormalized(acc / T::lit(2.0)))
        }
        Norm::LInf(plan) => {
            if log_abs_det(a).is_none() {
                return Ok(LogDensity::zero_density());
            }
            // Uᵀ = A⁻¹ Vᵀ
            let Some(ut) = a.clone().lu().solve(&obs.data().transpose()) else {
                return Ok(LogDensity::zero_density());
            };
            let u = ut.transpose();
            let mut acc = T::zero();
            for i in 0..p {
                let free = pattern.free_columns(i);
                let ui = u.select_columns(free.iter());
                let avg = plan.average_abs_det(&ui)?;
                if !(avg > T::zero()) {
                    return Ok(LogDensity::zero_density());
                }
                acc += avg.ln();
            }
            Ok(LogDensity::unnormalized(acc))
        }
    }
}

/// Jacobian on a raw matrix; full patterns use the closed form
/// `ln C(y) − p ln|det A|`.
pub fn log_jacobian_raw<T: Scalar>(
    obs: &ObservationSet<T>,
    a: &DMatrix<T>,
    pattern: &SparsityPattern,
    norm: &Norm,
) -> Result<LogDensity<T>> {
    check_dims(obs, a)?;
    if pattern.dim() != obs.p() {
        return Err(FidError::DimensionMismatch {
            expected: obs.p(),
            found: pattern.dim(),
        });
    }
    if pattern.is_full() {
        let c = log_jacobian_constant(obs, norm)?;
        let Some(ld) = log_abs_det(a) else {
            return Ok(LogDensity::zero_density());
        };
        if c == T::neg_infinity() {
            return Ok(LogDensity::zero_density());
        }
        return Ok(LogDensity::unnormalized(c - T::from_count(obs.p()) * ld));
    }
    log_jacobian_general_raw(obs, a, pattern, norm)
}

pub fn log_jacobian<T: Scalar>(
    obs: &ObservationSet<T>,
    a: &CovariateMatrix<T>,
    norm: &Norm,
) -> Result<LogDensity<T>> {
    log_jacobian_raw(obs, a.entries(), a.pattern(), norm)
}

/// Unnormalized `ln r(A | y) = ln J(y, A) + ln f(y, A)` on a raw matrix.
pub fn log_gfd_raw<T: Scalar>(
    obs: &ObservationSet<T>,
    a: &DMatrix<T>,
    pattern: &SparsityPattern,
    norm: &Norm,
) -> Result<LogDensity<T>> {
    let jac = log_jacobian_raw(obs, a, pattern, norm)?;
    if jac.is_zero_density() {
        return Ok(LogDensity::zero_density());
    }
    let lik = log_likelihood_raw(obs, a)?;
    if lik.value == T::neg_infinity() {
        return Ok(LogDensity::zero_density());
    }
    Ok(LogDensity::unnormalized(jac.value + lik.value))
}

pub fn log_gfd<T: Scalar>(obs: &ObservationSet<T>, a: &CovariateMatrix<T>, norm: &Norm) -> Result<LogDensity<T>> {
    log_gfd_raw(obs, a.entries(), a.pattern(), norm)
}

/// Log-GFD plus the description-length penalty of `a`'s pattern.
pub fn log_penalized_gfd<T: Scalar>(
    obs: &ObservationSet<T>,
    a: &CovariateMatrix<T>,
    norm: &Norm,
) -> Result<LogDensity<T>> {
    let g = log_gfd(obs, a, norm)?;
    if g.is_zero_density() {
        return Ok(g);
    }
    Ok(LogDensity::unnormalized(g.value + log_mdl_penalty(a.pattern(), obs.n())))
}

/// Repeated evaluation of the (optionally penalized) log-GFD for one data set.
///
/// The full-model constant `ln C(y)` is computed once, and under the l2 norm a
/// single whitening `A⁻¹ S_n A⁻ᵀ` feeds both the likelihood and the Jacobian.
/// Every failure maps to `-∞`.
#[derive(Clone, Debug)]
pub struct GfdEvaluator<'a, T: Scalar> {
    obs: &'a ObservationSet<T>,
    norm: Norm,
    mdl_penalty: bool,
    full_constant: Option<T>,
}

impl<'a, T: Scalar> GfdEvaluator<'a, T> {
    pub fn new(obs: &'a ObservationSet<T>, norm: Norm, mdl_penalty: bool) -> Self {
        let full_constant = log_jacobian_constant(obs, &norm).ok();
        Self {
            obs,
            norm,
            mdl_penalty,
            full_constant,
        }
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        self.obs
    }

    pub fn norm(&self) -> &Norm {
        &self.norm
    }

    pub fn is_penalized(&self) -> bool {
        self.mdl_penalty
    }

    /// Redraws l∞ subset batches; cached values must be re-evaluated afterwards.
    pub fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Norm::LInf(plan) = &mut self.norm {
            if !plan.sampled.is_empty() {
                plan.refresh(rng);
                self.full_constant = log_jacobian_constant(self.obs, &self.norm).ok();
            }
        }
    }

    /// True when the l∞ plan carries Monte Carlo batches.
    pub fn is_stochastic(&self) -> bool {
        matches!(&self.norm, Norm::LInf(plan) if !plan.sampled.is_empty())
    }

    pub fn eval(&self, a: &DMatrix<T>, pattern: &SparsityPattern) -> T {
        let v = self.eval_unpenalized(a, pattern);
        if self.mdl_penalty && v != T::neg_infinity() {
            v + log_mdl_penalty(pattern, self.obs.n())
        } else {
            v
        }
    }

    fn eval_unpenalized(&self, a: &DMatrix<T>, pattern: &SparsityPattern) -> T {
        let ninf = T::neg_infinity();
        if a.nrows() != self.obs.p() || pattern.dim() != self.obs.p() {
            return ninf;
        }
        let Some(wh) = whiten(self.obs, a) else {
            return ninf;
        };
        let lik = likelihood_from(self.obs, &wh);
        let jac = if pattern.is_full() {
            match self.full_constant {
                Some(c) if c != ninf => c - T::from_count(self.obs.p()) * wh.log_abs_det_a,
                _ => return ninf,
            }
        } else {
            match &self.norm {
                Norm::L2 => {
                    if self.obs.n() < max_row_count(pattern) {
                        return ninf;
                    }
                    let mut acc = T::zero();
                    for i in 0..self.obs.p() {
                        let free = pattern.free_columns(i);
                        match log_det_spd(&principal_submatrix(&wh.w, &free)) {
                            Some(ld) => acc += ld,
                            None => return ninf,
                        }
                    }
                    acc / T::lit(2.0)
                }
                Norm::LInf(_) => match log_jacobian_general_raw(self.obs, a, pattern, &self.norm) {
                    Ok(j) => j.value,
                    Err(_) => return ninf,
                },
            }
        };
        let v = lik + jac;
        if v.is_finite() {
            v
        } else {
            ninf
        }
    }
}

/// `ln Γ_p(a) = (p(p−1)/4) ln π + Σⱼ ln Γ(a + (1−j)/2)`.
pub fn log_multivariate_gamma<T: Scalar>(p: usize, a: T) -> Result<T> {
    if p == 0 {
        return Err(FidError::OutOfRange("multivariate gamma order must be positive".into()));
    }
    let half_pm1 = T::from_count(p - 1) / T::lit(2.0);
    if !(a > half_pm1) {
        return Err(FidError::OutOfRange(format!(
            "multivariate gamma of order {p} needs a > {}, got {a}",
            half_pm1
        )));
    }
    let pf = T::from_count(p);
    let mut acc = pf * (pf - T::one()) / T::lit(4.0) * T::lit(LN_PI);
    for j in 1..=p {
        acc += (a + (T::one() - T::from_count(j)) / T::lit(2.0)).ln_gamma();
    }
    Ok(acc)
}

/// `ln ∫ J(y, A) f(y, A) dA` over all of `ℝ^{p×p}` for the full model.
pub fn log_normalizing_constant_full<T: Scalar>(obs: &ObservationSet<T>, norm: &Norm) -> Result<T> {
    let (n, p) = (obs.n(), obs.p());
    if n <= p {
        return Err(FidError::TooFewSamples { needed: p + 1, got: n });
    }
    let log_det_s = log_det_spd(obs.cov()).ok_or(FidError::Singular)?;
    let c = log_jacobian_constant(obs, norm)?;
    if c == T::neg_infinity() {
        return Err(FidError::Singular);
    }
    let (nf, pf) = (T::from_count(n), T::from_count(p));
    let log_det_ns = pf * nf.ln() + log_det_s;
    Ok((pf * pf - nf * pf) / T::lit(2.0) * T::lit(LN_PI) + c
        + log_multivariate_gamma(p, nf / T::lit(2.0))?
        - nf / T::lit(2.0) * log_det_ns
        - log_multivariate_gamma(p, pf / T::lit(2.0))?)
}

/// Per-clique additive pieces of the penalized clique-model GFD.
///
/// The model GFD, and the clique penalty, are sums over cliques of a term
/// that depends only on the clique's member set; Gibbs updates use that to
/// rescore only the cliques a move touches.
#[derive(Clone, Debug)]
pub struct CliqueScorer<'a, T: Scalar> {
    obs: &'a ObservationSet<T>,
    norm: Norm,
    penalized: bool,
    /// `ln Γ_g(n/2) − ln Γ_g(g/2) + (g²/2) ln π`, plus the penalty when enabled, by `g`.
    size_terms: Vec<T>,
    /// Terms keyed by member bitmask; only used when `p ≤ 128`.
    memo: RefCell<HashMap<u128, T>>,
}

const MEMO_LIMIT: usize = 1 << 20;

impl<'a, T: Scalar> CliqueScorer<'a, T> {
    pub fn new(obs: &'a ObservationSet<T>, norm: Norm, penalized: bool) -> Self {
        let n = obs.n();
        let nf = T::from_count(n);
        let size_terms = (0..=obs.p())
            .map(|g| {
                if g == 0 {
                    return T::zero();
                }
                let gf = T::from_count(g);
                let gamma_n = log_multivariate_gamma(g, nf / T::lit(2.0));
                let gamma_g = log_multivariate_gamma(g, gf / T::lit(2.0));
                let mut term = match (gamma_n, gamma_g) {
                    (Ok(a), Ok(b)) => a - b + gf * gf / T::lit(2.0) * T::lit(LN_PI),
                    _ => T::neg_infinity(),
                };
                if penalized {
                    term += clique_penalty_term(g, n);
                }
                term
            })
            .collect();
        Self {
            obs,
            norm,
            penalized,
            size_terms,
            memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        self.obs
    }

    pub fn is_penalized(&self) -> bool {
        self.penalized
    }

    pub fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.norm.refresh(rng);
        self.memo.get_mut().clear();
    }

    /// Contribution of one clique, `-∞` when its sample-covariance block is singular.
    pub fn term(&self, members: &[usize]) -> T {
        if self.obs.p() > 128 {
            return self.compute_term(members);
        }
        let key = members.iter().fold(0u128, |k, &i| k | (1u128 << i));
        if let Some(&t) = self.memo.borrow().get(&key) {
            return t;
        }
        let t = self.compute_term(members);
        let mut memo = self.memo.borrow_mut();
        if memo.len() >= MEMO_LIMIT {
            memo.clear();
        }
        memo.insert(key, t);
        t
    }

    fn compute_term(&self, members: &[usize]) -> T {
        let g = members.len();
        let n = self.obs.n();
        if g == 0 || g > n {
            return T::neg_infinity();
        }
        let block = principal_submatrix(self.obs.cov(), members);
        let Some(ld) = log_det_spd(&block) else {
            return T::neg_infinity();
        };
        let gf = T::from_count(g);
        let log_c = match &self.norm {
            Norm::L2 => gf / T::lit(2.0) * ld,
            Norm::LInf(plan) => {
                let v = self.obs.data().select_columns(members.iter());
                match plan.average_abs_det(&v) {
                    Ok(avg) if avg > T::zero() => gf * avg.ln(),
                    _ => return T::neg_infinity(),
                }
            }
        };
        -T::from_count(n) / T::lit(2.0) * ld + log_c + self.size_terms[g]
    }

    /// Sum of [`term`](Self::term) over the model's cliques.
    pub fn total(&self, model: &CliqueModel) -> T {
        let mut acc = T::zero();
        for c in model.cliques() {
            let t = self.term(&c);
            if t == T::neg_infinity() {
                return t;
            }
            acc += t;
        }
        acc
    }
}

/// Unnormalized `ln r(ℳ | y)` for a clique model.
pub fn log_clique_model_gfd<T: Scalar>(
    obs: &ObservationSet<T>,
    model: &CliqueModel,
    norm: &Norm,
) -> Result<LogDensity<T>> {
    if model.dim() != obs.p() {
        return Err(FidError::DimensionMismatch {
            expected: obs.p(),
            found: model.dim(),
        });
    }
    let max_g = model.sizes().into_iter().max().unwrap_or(0);
    if obs.n() <= max_g {
        return Err(FidError::TooFewSamples {
            needed: max_g + 1,
            got: obs.n(),
        });
    }
    let scorer = CliqueScorer::new(obs, norm.clone(), false);
    let value = scorer.total(model);
    if value == T::neg_infinity() {
        return Err(FidError::Singular);
    }
    Ok(LogDensity::unnormalized(value))
}

fn clique_penalty_term<T: Scalar>(g: usize, n: usize) -> T {
    let gf = T::from_count(g);
    let g2 = gf * gf;
    -(g2 / T::lit(4.0) * T::from_count(n).ln() - g2 / T::lit(2.0) * gf.ln())
}

/// `ln q_ℳ(n) = −Σᵢ [(gᵢ²/4) ln n − (gᵢ²/2) ln gᵢ]`.
pub fn log_clique_penalty<T: Scalar>(model: &CliqueModel, n: usize) -> T {
    model
        .sizes()
        .into_iter()
        .fold(T::zero(), |acc, g| acc + clique_penalty_term(g, n))
}

/// `ln q_ℳ(n) = −Σᵢ [(pᵢ/2) ln(np) + ln C(p, pᵢ)]`.
pub fn log_mdl_penalty<T: Scalar>(pattern: &SparsityPattern, n: usize) -> T {
    let p = pattern.dim();
    let ln_np = T::from_count(n * p).ln();
    pattern.row_free_counts().into_iter().fold(T::zero(), |acc, pi| {
        acc - (T::from_count(pi) / T::lit(2.0) * ln_np + ln_binomial::<T>(p, pi))
    })
}
