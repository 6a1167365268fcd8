//! Stochastic machinery: inverse-Wishart generation, composite clique
//! sampling, the Gibbs sampler over clique partitions, fixed-pattern
//! Metropolis-Hastings and reversible-jump MCMC over sparsity patterns.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{CliqueScorer, GfdEvaluator, LogDensity, Norm, NormChoice};
use crate::error::{FidError, Result};
use crate::matrix::{principal_submatrix, CovariateMatrix, ObservationSet, SpdMatrix};
use crate::models::{CliqueModel, SparsityPattern};
use crate::scalar::Scalar;

/// Seeded generator for one chain.
///
/// Equal `(seed, stream_id)` pairs give bit-identical sequences; distinct
/// stream ids give independent ChaCha streams under the same seed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Model component of a chain state.
#[derive(Clone, Debug, PartialEq)]
pub enum ChainModel {
    Clique(CliqueModel),
    Pattern(SparsityPattern),
}

impl fmt::Display for ChainModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainModel::Clique(m) => m.fmt(f),
            ChainModel::Pattern(p) => p.fmt(f),
        }
    }
}

/// One MCMC state.
///
/// `log_density` is the penalized log-GFD at `(model, a)`; for clique chains
/// it is the model-space target. `sigma` holds a covariance drawn alongside a
/// pure model-space state.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<T: Scalar> {
    pub model: ChainModel,
    pub a: Option<CovariateMatrix<T>>,
    pub sigma: Option<SpdMatrix<T>>,
    pub log_density: LogDensity<T>,
    pub iteration: u64,
}

impl<T: Scalar> ChainState<T> {
    pub fn for_clique(scorer: &CliqueScorer<'_, T>, model: CliqueModel) -> Self {
        let value = scorer.total(&model);
        Self {
            model: ChainModel::Clique(model),
            a: None,
            sigma: None,
            log_density: LogDensity::unnormalized(value),
            iteration: 0,
        }
    }

    pub fn for_covariate(target: &GfdEvaluator<'_, T>, a: CovariateMatrix<T>) -> Self {
        let value = target.eval(a.entries(), a.pattern());
        Self {
            model: ChainModel::Pattern(a.pattern().clone()),
            a: Some(a),
            sigma: None,
            log_density: LogDensity::unnormalized(value),
            iteration: 0,
        }
    }

    pub fn clique_model(&self) -> Option<&CliqueModel> {
        match &self.model {
            ChainModel::Clique(m) => Some(m),
            ChainModel::Pattern(_) => None,
        }
    }

    pub fn pattern(&self) -> Option<&SparsityPattern> {
        match &self.model {
            ChainModel::Pattern(p) => Some(p),
            ChainModel::Clique(_) => None,
        }
    }

    /// The covariance implied by the state, if it carries one.
    pub fn covariance(&self) -> Option<SpdMatrix<T>> {
        if let Some(s) = &self.sigma {
            return Some(s.clone());
        }
        self.a.as_ref().and_then(|a| a.covariance().ok())
    }
}

/// Draw from `IW(dof, scale)`, the law of `W⁻¹` for `W ~ Wishart(dof, scale⁻¹)`.
///
/// With `scale = L Lᵀ` and Bartlett factor `B`, `W = L⁻ᵀ B Bᵀ L⁻¹`, so the draw
/// is `C Cᵀ` with `C = L B⁻ᵀ`; only a triangular solve is needed.
pub fn sample_inverse_wishart<T: Scalar, R: Rng + ?Sized>(
    dof: usize,
    scale: &SpdMatrix<T>,
    rng: &mut R,
) -> Result<SpdMatrix<T>> {
    let p = scale.dim();
    if dof < p {
        return Err(FidError::OutOfRange(format!(
            "inverse Wishart needs dof >= dim, got dof {dof} for dim {p}"
        )));
    }
    let l = scale.chol_factor();
    let mut b = DMatrix::<T>::zeros(p, p);
    for i in 0..p {
        b[(i, i)] = T::chi_squared(rng, T::from_count(dof - i)).sqrt();
        for j in 0..i {
            b[(i, j)] = T::standard_normal(rng);
        }
    }
    // Cᵀ = B⁻¹ Lᵀ
    let ct = b
        .solve_lower_triangular(&l.transpose())
        .ok_or(FidError::Singular)?;
    let sigma = ct.transpose() * &ct;
    SpdMatrix::new(sigma)
}

/// Block-diagonal `Σ` with block `i ~ IW(n, n S_n^i)`.
pub fn sample_clique_covariance<T: Scalar, R: Rng + ?Sized>(
    obs: &ObservationSet<T>,
    model: &CliqueModel,
    rng: &mut R,
) -> Result<SpdMatrix<T>> {
    let (n, p) = (obs.n(), obs.p());
    if model.dim() != p {
        return Err(FidError::DimensionMismatch {
            expected: p,
            found: model.dim(),
        });
    }
    let nf = T::from_count(n);
    let mut sigma = DMatrix::<T>::zeros(p, p);
    for members in model.cliques() {
        if n <= members.len() {
            return Err(FidError::TooFewSamples {
                needed: members.len() + 1,
                got: n,
            });
        }
        let block = SpdMatrix::new(principal_submatrix(obs.cov(), &members) * nf)
            .map_err(|_| FidError::Singular)?;
        let draw = sample_inverse_wishart(n, &block, rng)?;
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                sigma[(i, j)] = draw.matrix()[(a, b)];
            }
        }
    }
    SpdMatrix::new(sigma)
}

/// Coordinate visiting order within a Gibbs sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    #[default]
    Ascending,
    RandomScan,
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), |a, b| a.max(b));
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().fold(T::zero(), |acc, &x| acc + (x - m).exp()).ln()
}

/// Index drawn with probability proportional to `exp(weights)`.
fn sample_log_weights<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    let total = log_sum_exp(weights);
    let u = T::open01(rng);
    let mut acc = T::zero();
    let mut last_finite = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w == T::neg_infinity() {
            continue;
        }
        last_finite = k;
        acc += (w - total).exp();
        if u < acc {
            return k;
        }
    }
    last_finite
}

/// One Gibbs sweep over clique partitions.
///
/// Each coordinate is removed from its clique and reassigned to one of the
/// other cliques or to a fresh singleton, drawn from the exact full
/// conditional. Only the cliques a move touches are rescored.
pub fn gibbs_clique_sweep<T: Scalar, R: Rng + ?Sized>(
    scorer: &CliqueScorer<'_, T>,
    state: &ChainState<T>,
    order: SweepOrder,
    rng: &mut R,
) -> Result<ChainState<T>> {
    let model = state
        .clique_model()
        .ok_or_else(|| FidError::InvalidModel("Gibbs sweep needs a clique-model state".into()))?;
    let p = model.dim();
    let mut cliques = model.cliques();
    let mut terms: Vec<T> = cliques.iter().map(|c| scorer.term(c)).collect();

    let mut coords: Vec<usize> = (0..p).collect();
    if order == SweepOrder::RandomScan {
        coords.shuffle(rng);
    }
    for &j in &coords {
        if p == 1 {
            break;
        }
        let home = cliques.iter().position(|c| c.contains(&j)).expect("every coordinate is assigned");
        let mut rest = cliques[home].clone();
        rest.retain(|&x| x != j);
        let rest_term = if rest.is_empty() { T::zero() } else { scorer.term(&rest) };

        // Option k < cliques.len(): join clique k (its own home means returning);
        // the last option is a fresh singleton, absent when j was already alone.
        let mut weights = Vec::with_capacity(cliques.len() + 1);
        let mut joined = Vec::with_capacity(cliques.len() + 1);
        for (k, c) in cliques.iter().enumerate() {
            if k == home {
                if rest.is_empty() {
                    weights.push(terms[k]);
                } else {
                    weights.push(terms[k] - rest_term);
                }
                joined.push(terms[k]);
            } else {
                let mut with = c.clone();
                with.push(j);
                with.sort_unstable();
                let t = scorer.term(&with);
                weights.push(t - terms[k]);
                joined.push(t);
            }
        }
        let singleton_term = scorer.term(&[j]);
        if !rest.is_empty() {
            weights.push(singleton_term);
            joined.push(singleton_term);
        }
        // Guard the invalid difference ∞ − ∞ from a singular block on both sides.
        for w in weights.iter_mut() {
            if w.as_f64().is_nan() {
                *w = T::neg_infinity();
            }
        }
        let choice = sample_log_weights(&weights, rng);
        if choice == home {
            continue;
        }
        if choice < cliques.len() {
            cliques[choice].push(j);
            cliques[choice].sort_unstable();
            terms[choice] = joined[choice];
        } else {
            cliques.push(vec![j]);
            terms.push(singleton_term);
        }
        if rest.is_empty() {
            cliques.remove(home);
            terms.remove(home);
        } else {
            cliques[home] = rest;
            terms[home] = rest_term;
        }
    }
    let new_model = CliqueModel::from_cliques(p, &cliques)?;
    let value = scorer.total(&new_model);
    Ok(ChainState {
        model: ChainModel::Clique(new_model),
        a: None,
        sigma: None,
        log_density: LogDensity::unnormalized(value),
        iteration: state.iteration + 1,
    })
}

/// Per-entry random-walk scales with Robbins-Monro adaptation.
#[derive(Clone, Debug)]
pub struct StepTuner<T: Scalar> {
    dim: usize,
    log_scale: Vec<T>,
    visits: Vec<u64>,
    target: T,
    adapting: bool,
    proposed: u64,
    accepted: u64,
}

impl<T: Scalar> StepTuner<T> {
    pub fn new(dim: usize, initial: T, target_acceptance: T) -> Self {
        let init = if initial > T::zero() { initial.ln() } else { T::neg_infinity() };
        Self {
            dim,
            log_scale: vec![init; dim * dim],
            visits: vec![0; dim * dim],
            target: target_acceptance,
            adapting: true,
            proposed: 0,
            accepted: 0,
        }
    }

    /// Fixed scales that never adapt.
    pub fn fixed(dim: usize, scale: T) -> Self {
        let mut t = Self::new(dim, scale, T::lit(0.3));
        t.adapting = false;
        t
    }

    pub fn scale(&self, i: usize, j: usize) -> T {
        let l = self.log_scale[i * self.dim + j];
        if l == T::neg_infinity() {
            T::zero()
        } else {
            l.exp()
        }
    }

    pub fn freeze(&mut self) {
        self.adapting = false;
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    pub fn reset_counts(&mut self) {
        self.proposed = 0;
        self.accepted = 0;
    }

    /// Fraction of accepted proposals since the last reset; 1 with none proposed.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, i: usize, j: usize, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
        if self.adapting {
            let k = i * self.dim + j;
            if self.log_scale[k] == T::neg_infinity() {
                return;
            }
            self.visits[k] += 1;
            let gain = T::lit((self.visits[k] as f64 + 1.0).powf(-0.6));
            let hit = if accepted { T::one() } else { T::zero() };
            self.log_scale[k] += gain * (hit - self.target);
        }
    }
}

fn accept<T: Scalar, R: Rng + ?Sized>(log_ratio: T, rng: &mut R) -> bool {
    if log_ratio.as_f64().is_nan() {
        return false;
    }
    if log_ratio >= T::zero() {
        return true;
    }
    T::open01(rng).ln() < log_ratio
}

fn covariate_state<T: Scalar>(a: &ChainState<T>) -> Result<&CovariateMatrix<T>> {
    a.a.as_ref()
        .ok_or_else(|| FidError::InvalidModel("state carries no covariate matrix".into()))
}

/// One component-wise random-walk Metropolis-Hastings sweep over the free
/// entries of `A`, with the pattern held fixed.
///
/// Off-diagonal entries move additively; diagonal entries move on the log
/// scale, so the acceptance ratio carries the factor `a'/a`.
pub fn mh_fixed_pattern_step<T: Scalar, R: Rng + ?Sized>(
    target: &GfdEvaluator<'_, T>,
    state: &ChainState<T>,
    tuner: &mut StepTuner<T>,
    rng: &mut R,
) -> Result<ChainState<T>> {
    let cov = covariate_state(state)?;
    let pattern = cov.pattern().clone();
    let mut a = cov.entries().clone();
    let mut current = state.log_density.value;
    for (i, j) in pattern.active_positions() {
        let s = tuner.scale(i, j);
        let old = a[(i, j)];
        let z = T::standard_normal(rng);
        let (new, log_jac) = if i == j {
            let step = s * z;
            (old * step.exp(), step)
        } else {
            (old + s * z, T::zero())
        };
        if new == old {
            tuner.record(i, j, true);
            continue;
        }
        a[(i, j)] = new;
        let proposed = target.eval(&a, &pattern);
        let ok = proposed != T::neg_infinity() && accept(proposed - current + log_jac, rng);
        if ok {
            current = proposed;
        } else {
            a[(i, j)] = old;
        }
        tuner.record(i, j, ok);
    }
    let mut cov = cov.clone();
    for (i, j) in pattern.active_positions() {
        cov.set_unchecked(i, j, a[(i, j)]);
    }
    Ok(ChainState {
        model: ChainModel::Pattern(pattern),
        a: Some(cov),
        sigma: None,
        log_density: LogDensity::unnormalized(current),
        iteration: state.iteration + 1,
    })
}

/// Legal birth positions: inactive off-diagonal `(i, j)` whose column has
/// fewer than `max_c` active entries.
fn birth_positions(pattern: &SparsityPattern, max_c: usize) -> Vec<(usize, usize)> {
    let p = pattern.dim();
    let mut out = Vec::new();
    for j in 0..p {
        if pattern.column_count(j) >= max_c {
            continue;
        }
        for i in 0..p {
            if i != j && !pattern.is_active(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

fn death_positions(pattern: &SparsityPattern) -> Vec<(usize, usize)> {
    pattern
        .active_positions()
        .into_iter()
        .filter(|&(i, j)| i != j)
        .collect()
}

/// Birth proposal scale for column `j`: RMS of its active entries, falling
/// back to the RMS of every active entry.
fn birth_scale<T: Scalar>(a: &DMatrix<T>, pattern: &SparsityPattern, j: usize) -> T {
    let rms = |vals: &mut dyn Iterator<Item = T>| {
        let (sum, count) = vals.fold((T::zero(), 0usize), |(s, c), v| (s + v * v, c + 1));
        if count == 0 {
            T::zero()
        } else {
            (sum / T::from_count(count)).sqrt()
        }
    };
    let col = rms(&mut (0..pattern.dim()).filter(|&i| pattern.is_active(i, j)).map(|i| a[(i, j)]));
    if col > T::zero() {
        return col;
    }
    let all = rms(&mut pattern.active_positions().into_iter().map(|(i, k)| a[(i, k)]));
    if all > T::zero() {
        all
    } else {
        T::one()
    }
}

fn log_normal_pdf<T: Scalar>(x: T, sd: T) -> T {
    let z = x / sd;
    -(z * z) / T::lit(2.0) - sd.ln() - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Which move an RJMCMC step attempted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpKind {
    Within,
    Birth,
    Death,
}

/// One reversible-jump step over sparsity patterns with at most `max_c`
/// active entries per column.
///
/// With probability ½ a within-model sweep; otherwise a birth or death with
/// probability ½ each. Births pick a legal position uniformly and draw the
/// new value from `N(0, σ²)`, `σ` the birth scale of the column; deaths pick
/// an active off-diagonal entry uniformly. The diagonal is never removed.
pub fn rjmcmc_step<T: Scalar, R: Rng + ?Sized>(
    target: &GfdEvaluator<'_, T>,
    state: &ChainState<T>,
    max_c: usize,
    tuner: &mut StepTuner<T>,
    rng: &mut R,
) -> Result<(ChainState<T>, JumpKind, bool)> {
    let cov = covariate_state(state)?;
    if !cov.pattern().respects_cap(max_c) {
        return Err(FidError::InvalidPattern(format!(
            "pattern has a column with more than {max_c} active entries"
        )));
    }
    let half = T::lit(0.5);
    if T::open01(rng) < half {
        let next = mh_fixed_pattern_step(target, state, tuner, rng)?;
        return Ok((next, JumpKind::Within, true));
    }
    let pattern = cov.pattern();
    let a = cov.entries();
    let current = state.log_density.value;
    let mut unchanged = state.clone();
    unchanged.iteration += 1;

    if T::open01(rng) < half {
        let births = birth_positions(pattern, max_c);
        if births.is_empty() {
            return Ok((unchanged, JumpKind::Birth, false));
        }
        let (i, j) = births[rng.random_range(0..births.len())];
        let sd = birth_scale(a, pattern, j);
        let u = sd * T::standard_normal(rng);
        let mut new_pattern = pattern.clone();
        new_pattern.set(i, j, true)?;
        let mut new_a = a.clone();
        new_a[(i, j)] = u;
        let proposed = target.eval(&new_a, &new_pattern);
        if proposed == T::neg_infinity() || u == T::zero() {
            return Ok((unchanged, JumpKind::Birth, false));
        }
        let n_death = T::from_count(death_positions(&new_pattern).len());
        let n_birth = T::from_count(births.len());
        let log_ratio = proposed - current + n_birth.ln() - n_death.ln() - log_normal_pdf(u, sd);
        if accept(log_ratio, rng) {
            let next = CovariateMatrix::new(new_a, new_pattern.clone())?;
            return Ok((
                ChainState {
                    model: ChainModel::Pattern(new_pattern),
                    a: Some(next),
                    sigma: None,
                    log_density: LogDensity::unnormalized(proposed),
                    iteration: state.iteration + 1,
                },
                JumpKind::Birth,
                true,
            ));
        }
        Ok((unchanged, JumpKind::Birth, false))
    } else {
        let deaths = death_positions(pattern);
        if deaths.is_empty() {
            return Ok((unchanged, JumpKind::Death, false));
        }
        let (i, j) = deaths[rng.random_range(0..deaths.len())];
        let u = a[(i, j)];
        let mut new_pattern = pattern.clone();
        new_pattern.set(i, j, false)?;
        let mut new_a = a.clone();
        new_a[(i, j)] = T::zero();
        let proposed = target.eval(&new_a, &new_pattern);
        if proposed == T::neg_infinity() {
            return Ok((unchanged, JumpKind::Death, false));
        }
        let n_birth = T::from_count(birth_positions(&new_pattern, max_c).len());
        let n_death = T::from_count(deaths.len());
        let sd = birth_scale(&new_a, &new_pattern, j);
        let log_ratio = proposed - current + n_death.ln() - n_birth.ln() + log_normal_pdf(u, sd);
        if accept(log_ratio, rng) {
            let next = CovariateMatrix::new(new_a, new_pattern.clone())?;
            return Ok((
                ChainState {
                    model: ChainModel::Pattern(new_pattern),
                    a: Some(next),
                    sigma: None,
                    log_density: LogDensity::unnormalized(proposed),
                    iteration: state.iteration + 1,
                },
                JumpKind::Death,
                true,
            ));
        }
        Ok((unchanged, JumpKind::Death, false))
    }
}

/// Starting points for covariate-matrix chains.
#[derive(Clone, Debug, PartialEq)]
pub enum Initializer<T: Scalar> {
    /// Symmetric root of `S_n`, keeping the `max_c` largest entries per column.
    SnPa,
    /// Cholesky factor of `S_n`, likewise truncated.
    Chol,
    /// Diagonal of the Cholesky factor.
    Dcho,
    /// Square roots of the diagonal of `S_n`.
    Diag,
    Oracle(CovariateMatrix<T>),
}

impl<T: Scalar> Initializer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Initializer::SnPa => "SnPa",
            Initializer::Chol => "chol",
            Initializer::Dcho => "dcho",
            Initializer::Diag => "diag",
            Initializer::Oracle(_) => "oracle",
        }
    }
}

/// Keeps the diagonal and the `max_c - 1` largest off-diagonal magnitudes of each column.
fn truncate_columns<T: Scalar>(m: &DMatrix<T>, max_c: usize) -> DMatrix<T> {
    let p = m.nrows();
    let mut out = DMatrix::<T>::zeros(p, p);
    for j in 0..p {
        out[(j, j)] = m[(j, j)];
        let mut off: Vec<usize> = (0..p).filter(|&i| i != j && m[(i, j)] != T::zero()).collect();
        off.sort_by(|&x, &y| {
            m[(y, j)]
                .abs()
                .partial_cmp(&m[(x, j)].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for &i in off.iter().take(max_c.saturating_sub(1)) {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

/// Builds the initial covariate matrix; `max_c = None` leaves the pattern uncapped.
pub fn initial_covariate<T: Scalar>(
    obs: &ObservationSet<T>,
    init: &Initializer<T>,
    max_c: Option<usize>,
) -> Result<CovariateMatrix<T>> {
    let p = obs.p();
    let cap = max_c.unwrap_or(p);
    if cap == 0 {
        return Err(FidError::Config("max_c must be at least 1".into()));
    }
    let spd = || SpdMatrix::new(obs.cov().clone());
    let m = match init {
        Initializer::SnPa => truncate_columns(&spd()?.sqrt(), cap),
        Initializer::Chol => truncate_columns(&spd()?.chol_factor(), cap),
        Initializer::Dcho => DMatrix::from_diagonal(&spd()?.chol_factor().diagonal()),
        Initializer::Diag => {
            let d = obs.cov().diagonal().map(|x| x.sqrt());
            if d.iter().any(|&x| !(x > T::zero())) {
                return Err(FidError::ZeroVariance(
                    d.iter().position(|&x| !(x > T::zero())).unwrap_or(0),
                ));
            }
            DMatrix::from_diagonal(&d)
        }
        Initializer::Oracle(a) => {
            if a.dim() != p {
                return Err(FidError::DimensionMismatch {
                    expected: p,
                    found: a.dim(),
                });
            }
            if !a.pattern().respects_cap(cap) {
                return Err(FidError::InvalidPattern(format!(
                    "oracle matrix exceeds {cap} active entries per column"
                )));
            }
            return Ok(a.clone());
        }
    };
    CovariateMatrix::from_matrix(m)
}

/// Which kernel a chain runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplerKind {
    /// Gibbs over clique partitions; optionally draws `Σ | ℳ` at every kept state.
    Gibbs {
        penalized: bool,
        order: SweepOrder,
        draw_covariance: bool,
    },
    /// Metropolis-Hastings with the pattern of the initial state held fixed.
    FixedPattern { mdl_penalty: bool },
    ReversibleJump { max_c: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub sampler: SamplerKind,
    pub norm: NormChoice,
    pub burn_in: usize,
    pub window: usize,
    pub thin: usize,
    /// Initial random-walk scale for every entry.
    pub step_scale: f64,
    /// Acceptance rate the burn-in adaptation aims for; `None` disables adaptation.
    pub target_acceptance: Option<f64>,
}

impl ChainConfig {
    pub fn new(sampler: SamplerKind) -> Self {
        Self {
            sampler,
            norm: NormChoice::L2,
            burn_in: 5000,
            window: 10_000,
            thin: 1,
            step_scale: 0.1,
            target_acceptance: Some(0.3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(FidError::Config("window must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(FidError::Config("thin must be at least 1".into()));
        }
        if !(self.step_scale >= 0.0) || !self.step_scale.is_finite() {
            return Err(FidError::Config("step_scale must be a non-negative number".into()));
        }
        if let Some(t) = self.target_acceptance {
            if !(t > 0.0 && t < 1.0) {
                return Err(FidError::Config("target_acceptance must lie in (0, 1)".into()));
            }
        }
        if let SamplerKind::ReversibleJump { max_c } = self.sampler {
            if max_c == 0 {
                return Err(FidError::Config("max_c must be at least 1".into()));
            }
        }
        self.norm.validate()
    }
}

/// Recorded history of one chain.
#[derive(Clone, Debug)]
pub struct ChainTrace<T: Scalar> {
    pub seed: u64,
    pub stream_id: u64,
    /// Log density after every iteration, burn-in included.
    pub log_density: Vec<T>,
    /// States kept after burn-in, every `thin`-th iteration.
    pub draws: Vec<ChainState<T>>,
    /// Acceptance rate of the within-model moves after burn-in.
    pub acceptance: f64,
    /// Accepted fraction of birth/death proposals after burn-in.
    pub jump_acceptance: Option<f64>,
}

/// One NDJSON line of a serialized trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub log_density: f64,
    pub model_string: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
}

fn rows_of<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

impl<T: Scalar> ChainState<T> {
    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            iteration: self.iteration,
            log_density: self.log_density.value.as_f64(),
            model_string: self.model.to_string(),
            a: self.a.as_ref().map(|a| rows_of(a.entries())),
            sigma: self.sigma.as_ref().map(|s| rows_of(s.matrix())),
        }
    }
}

impl<T: Scalar> ChainTrace<T> {
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    /// Writes one JSON object per kept draw.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in &self.draws {
            serde_json::to_writer(&mut out, &d.record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs one chain: `burn_in` adapting iterations, then `window` iterations of
/// which every `thin`-th is kept.
pub fn run_chain<T: Scalar>(
    obs: &ObservationSet<T>,
    config: &ChainConfig,
    init: ChainState<T>,
    rng: &mut RngStream,
) -> Result<ChainTrace<T>> {
    config.validate()?;
    let p = obs.p();
    let norm = Norm::build(config.norm, obs.n(), p, rng);
    let total = config.burn_in + config.window;
    let mut trace = ChainTrace {
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        log_density: Vec::with_capacity(total),
        draws: Vec::with_capacity(config.window / config.thin + 1),
        acceptance: 1.0,
        jump_acceptance: None,
    };

    match config.sampler {
        SamplerKind::Gibbs {
            penalized,
            order,
            draw_covariance,
        } => {
            let mut scorer = CliqueScorer::new(obs, norm, penalized);
            let model = init
                .clique_model()
                .cloned()
                .ok_or_else(|| FidError::InvalidModel("Gibbs chain needs a clique-model start".into()))?;
            if model.dim() != p {
                return Err(FidError::DimensionMismatch {
                    expected: p,
                    found: model.dim(),
                });
            }
            let stochastic = matches!(config.norm, NormChoice::LInf { .. });
            let mut state = ChainState::for_clique(&scorer, model);
            state.iteration = init.iteration;
            for t in 0..total {
                if stochastic {
                    scorer.refresh(rng);
                    state.log_density = LogDensity::unnormalized(scorer.total(state.clique_model().expect("clique state")));
                }
                state = gibbs_clique_sweep(&scorer, &state, order, rng)?;
                trace.log_density.push(state.log_density.value);
                if t >= config.burn_in && (t - config.burn_in + 1).is_multiple_of(config.thin) {
                    let mut kept = state.clone();
                    if draw_covariance {
                        kept.sigma = Some(sample_clique_covariance(obs, state.clique_model().expect("clique state"), rng)?);
                    }
                    trace.draws.push(kept);
                }
            }
        }
        SamplerKind::FixedPattern { .. } | SamplerKind::ReversibleJump { .. } => {
            let mdl = match config.sampler {
                SamplerKind::FixedPattern { mdl_penalty } => mdl_penalty,
                _ => true,
            };
            let mut target = GfdEvaluator::new(obs, norm, mdl);
            let cov = covariate_state(&init)?.clone();
            if cov.dim() != p {
                return Err(FidError::DimensionMismatch {
                    expected: p,
                    found: cov.dim(),
                });
            }
            let mut state = ChainState::for_covariate(&target, cov);
            state.iteration = init.iteration;
            if state.log_density.is_zero_density() {
                return Err(FidError::Config("initial state has zero fiducial density".into()));
            }
            let step = T::lit(config.step_scale);
            let mut tuner = match config.target_acceptance {
                Some(rate) => StepTuner::new(p, step, T::lit(rate)),
                None => StepTuner::fixed(p, step),
            };
            let (mut jumps, mut jumps_ok) = (0u64, 0u64);
            for t in 0..total {
                if t == config.burn_in {
                    tuner.freeze();
                    tuner.reset_counts();
                }
                if target.is_stochastic() {
                    target.refresh(rng);
                    let cov = state.a.as_ref().expect("covariate state");
                    state.log_density = LogDensity::unnormalized(target.eval(cov.entries(), cov.pattern()));
                }
                state = match config.sampler {
                    SamplerKind::ReversibleJump { max_c } => {
                        let (next, kind, ok) = rjmcmc_step(&target, &state, max_c, &mut tuner, rng)?;
                        if kind != JumpKind::Within && t >= config.burn_in {
                            jumps += 1;
                            jumps_ok += ok as u64;
                        }
                        next
                    }
                    _ => mh_fixed_pattern_step(&target, &state, &mut tuner, rng)?,
                };
                trace.log_density.push(state.log_density.value);
                if t >= config.burn_in && (t - config.burn_in + 1).is_multiple_of(config.thin) {
                    trace.draws.push(state.clone());
                }
            }
            trace.acceptance = tuner.acceptance_rate();
            if matches!(config.sampler, SamplerKind::ReversibleJump { .. }) {
                trace.jump_acceptance = Some(if jumps == 0 { 0.0 } else { jumps_ok as f64 / jumps as f64 });
            }
        }
    }
    Ok(trace)
}

/// Independent draws from the full-model GFD of `Σ`, `IW(n, n S_n)`, as a trace.
pub fn sample_full_model<T: Scalar>(
    obs: &ObservationSet<T>,
    draws: usize,
    rng: &mut RngStream,
) -> Result<ChainTrace<T>> {
    let (n, p) = (obs.n(), obs.p());
    if n < p {
        return Err(FidError::TooFewSamples { needed: p, got: n });
    }
    let scale = SpdMatrix::new(obs.cov() * T::from_count(n)).map_err(|_| FidError::Singular)?;
    let target = GfdEvaluator::new(obs, Norm::L2, false);
    let full = SparsityPattern::full(p);
    let mut trace = ChainTrace {
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        log_density: Vec::with_capacity(draws),
        draws: Vec::with_capacity(draws),
        acceptance: 1.0,
        jump_acceptance: None,
    };
    for t in 0..draws {
        let sigma = sample_inverse_wishart(n, &scale, rng)?;
        let value = target.eval(&sigma.chol_factor(), &full);
        trace.log_density.push(value);
        trace.draws.push(ChainState {
            model: ChainModel::Pattern(full.clone()),
            a: None,
            sigma: Some(sigma),
            log_density: LogDensity::unnormalized(value),
            iteration: t as u64 + 1,
        });
    }
    Ok(trace)
}

/// Uniformly random partition of `p` coordinates into labelled groups.
pub fn random_partition<R: Rng + ?Sized>(p: usize, rng: &mut R) -> CliqueModel {
    let labels: Vec<usize> = (0..p).map(|_| rng.random_range(0..p.max(1))).collect();
    CliqueModel::from_labels(&labels).expect("labels cover every coordinate")
}
