//! Post-processing of chain traces: per-draw statistics, confidence curves,
//! clique co-membership, coverage p-values and a few goodness-of-fit tools.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::density::{GfdEvaluator, Norm};
use crate::error::{FidError, Result};
use crate::matrix::{eigvec_angle, fm_distance, ObservationSet, SpdMatrix};
use crate::models::{CliqueModel, SparsityPattern};
use crate::samplers::ChainState;
use crate::scalar::Scalar;

/// Minimum number of draws behind a one-sided p-value.
pub const MIN_PVALUE_DRAWS: usize = 100;

/// Minimum number of replications behind a QQ coverage table.
pub const MIN_QQ_REPLICATIONS: usize = 20;

/// Asymptotic 95% Kolmogorov-Smirnov constant.
pub const KS_95: f64 = 1.358;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "SlogGFD")]
    SlogGfd,
    D2Sig,
    LogD,
    EigvecAngle,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [
        Statistic::SlogGfd,
        Statistic::D2Sig,
        Statistic::LogD,
        Statistic::EigvecAngle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Statistic::SlogGfd => "SlogGFD",
            Statistic::D2Sig => "D2Sig",
            Statistic::LogD => "LogD",
            Statistic::EigvecAngle => "EigvecAngle",
        }
    }

    pub fn needs_truth(&self) -> bool {
        matches!(self, Statistic::D2Sig | Statistic::EigvecAngle)
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = FidError;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("GFD") && *st == Statistic::SlogGfd))
            .ok_or_else(|| FidError::Config(format!("unknown statistic `{s}`")))
    }
}

/// Statistics of one draw; absent entries were not requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub draw: usize,
    pub iteration: u64,
    pub slog_gfd: Option<f64>,
    pub d2sig: Option<f64>,
    pub log_d: Option<f64>,
    pub eigvec_angle: Option<f64>,
}

impl StatRow {
    pub fn get(&self, s: Statistic) -> Option<f64> {
        match s {
            Statistic::SlogGfd => self.slog_gfd,
            Statistic::D2Sig => self.d2sig,
            Statistic::LogD => self.log_d,
            Statistic::EigvecAngle => self.eigvec_angle,
        }
    }
}

/// One line of the long-format export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub chain: u64,
    pub draw: usize,
    pub iteration: u64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatisticsTable {
    pub rows: Vec<StatRow>,
}

impl StatisticsTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, s: Statistic) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.get(s)).collect()
    }

    pub fn tidy(&self, chain: u64) -> Vec<TidyRow> {
        let mut out = Vec::with_capacity(self.rows.len() * 4);
        for r in &self.rows {
            for s in Statistic::ALL {
                if let Some(v) = r.get(s) {
                    out.push(TidyRow {
                        chain,
                        draw: r.draw,
                        iteration: r.iteration,
                        statistic: s.name().to_string(),
                        value: v,
                    });
                }
            }
        }
        out
    }
}

/// Per-draw statistics of a trace.
///
/// `SlogGFD` is the unnormalized log-GFD of the draw: at `A` for covariate
/// states, otherwise the full-model value at the Cholesky factor of `Σ̂`.
pub fn compute_statistics<T: Scalar>(
    draws: &[ChainState<T>],
    obs: &ObservationSet<T>,
    sigma0: Option<&SpdMatrix<T>>,
    norm: &Norm,
    requested: &[Statistic],
) -> Result<StatisticsTable> {
    if sigma0.is_none() {
        if let Some(s) = requested.iter().find(|s| s.needs_truth()) {
            return Err(FidError::Config(format!("{s} needs the true covariance")));
        }
    }
    let wants = |s: Statistic| requested.contains(&s);
    let evaluator = GfdEvaluator::new(obs, norm.clone(), false);
    let full = SparsityPattern::full(obs.p());
    let mut rows = Vec::with_capacity(draws.len());
    for (k, state) in draws.iter().enumerate() {
        let sigma = state
            .covariance()
            .ok_or_else(|| FidError::InvalidModel(format!("draw {k} carries no covariance")))?;
        let slog_gfd = if wants(Statistic::SlogGfd) {
            let v = match &state.a {
                Some(a) => evaluator.eval(a.entries(), a.pattern()),
                None => evaluator.eval(&sigma.chol_factor(), &full),
            };
            Some(v.as_f64())
        } else {
            None
        };
        let d2sig = match (wants(Statistic::D2Sig), sigma0) {
            (true, Some(s0)) => Some(fm_distance(&sigma, s0)?.as_f64()),
            _ => None,
        };
        let eigvec = match (wants(Statistic::EigvecAngle), sigma0) {
            (true, Some(s0)) => Some(eigvec_angle(&sigma, s0)?.as_f64()),
            _ => None,
        };
        rows.push(StatRow {
            draw: k,
            iteration: state.iteration,
            slog_gfd,
            d2sig,
            log_d: wants(Statistic::LogD).then(|| sigma.log_det().as_f64()),
            eigvec_angle: eigvec,
        });
    }
    Ok(StatisticsTable { rows })
}

/// Comparator values of the sample covariance itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub d2sig: f64,
    pub log_d: f64,
    pub eigvec_angle: f64,
    pub truth_log_d: f64,
}

pub fn baseline_statistics<T: Scalar>(obs: &ObservationSet<T>, sigma0: &SpdMatrix<T>) -> Result<Baseline> {
    let s = SpdMatrix::new(obs.cov().clone())?;
    Ok(Baseline {
        d2sig: fm_distance(&s, sigma0)?.as_f64(),
        log_d: s.log_det().as_f64(),
        eigvec_angle: eigvec_angle(&s, sigma0)?.as_f64(),
        truth_log_d: sigma0.log_det().as_f64(),
    })
}

/// Empirical `q`-quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (m - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed empirical intervals of one statistic at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub statistic: Statistic,
    pub sorted: Vec<f64>,
}

impl ConfidenceCurve {
    pub fn new(statistic: Statistic, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(FidError::TooFewSamples { needed: 1, got: 0 });
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(FidError::OutOfRange("NaN in statistic values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { statistic, sorted })
    }

    /// Two-sided interval leaving `alpha / 2` in each tail.
    pub fn interval(&self, alpha: f64) -> (f64, f64) {
        let a = alpha.clamp(0.0, 1.0);
        let lo = quantile(&self.sorted, a / 2.0);
        let hi = quantile(&self.sorted, 1.0 - a / 2.0);
        if lo <= hi {
            (lo, hi)
        } else {
            let mid = quantile(&self.sorted, 0.5);
            (mid, mid)
        }
    }

    /// Confidence-curve value at `x`: `1 − 2·min(F(x), 1 − F(x))`.
    pub fn level_at(&self, x: f64) -> f64 {
        let m = self.sorted.len() as f64;
        let below = self.sorted.partition_point(|&v| v < x) as f64;
        let at = self.sorted.partition_point(|&v| v <= x) as f64 - below;
        let f = (below + 0.5 * at) / m;
        1.0 - 2.0 * f.min(1.0 - f)
    }

    /// `(alpha, lower, upper)` on a grid of `points` levels in `[0, 1]`.
    pub fn curve(&self, points: usize) -> Vec<(f64, f64, f64)> {
        let points = points.max(2);
        (0..points)
            .map(|k| {
                let alpha = k as f64 / (points - 1) as f64;
                let (lo, hi) = self.interval(alpha);
                (alpha, lo, hi)
            })
            .collect()
    }
}

/// Pairwise frequency with which two coordinates share a clique.
#[derive(Clone, Debug, PartialEq)]
pub struct CoMembershipMatrix {
    pub matrix: DMatrix<f64>,
    pub draws: usize,
}

pub fn co_membership<'a, I>(models: I) -> Result<CoMembershipMatrix>
where
    I: IntoIterator<Item = &'a CliqueModel>,
{
    let mut acc: Option<DMatrix<f64>> = None;
    let mut count = 0usize;
    for m in models {
        let p = m.dim();
        let a = acc.get_or_insert_with(|| DMatrix::zeros(p, p));
        if a.nrows() != p {
            return Err(FidError::DimensionMismatch {
                expected: a.nrows(),
                found: p,
            });
        }
        for i in 0..p {
            for j in 0..p {
                if m.same_clique(i, j) {
                    a[(i, j)] += 1.0;
                }
            }
        }
        count += 1;
    }
    let matrix = acc.ok_or(FidError::TooFewSamples { needed: 1, got: 0 })? / count as f64;
    Ok(CoMembershipMatrix { matrix, draws: count })
}

impl CoMembershipMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Clique model from the graph joining pairs whose frequency exceeds `level`.
    pub fn threshold(&self, level: f64) -> CliqueModel {
        let p = self.dim();
        let mut parent: Vec<usize> = (0..p).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut y = x;
            while parent[y] != r {
                let next = parent[y];
                parent[y] = r;
                y = next;
            }
            r
        }
        for i in 0..p {
            for j in (i + 1)..p {
                if self.matrix[(i, j)] > level {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let labels: Vec<usize> = (0..p).map(|i| find(&mut parent, i)).collect();
        CliqueModel::from_labels(&labels).expect("every coordinate is labelled")
    }

    /// Most frequent model among the draws.
    pub fn modal_model<'a, I>(models: I) -> Option<CliqueModel>
    where
        I: IntoIterator<Item = &'a CliqueModel>,
    {
        modal(models)
    }
}

/// Most frequent element; ties go to the first seen.
pub fn modal<'a, M, I>(items: I) -> Option<M>
where
    M: Clone + PartialEq + fmt::Display + 'a,
    I: IntoIterator<Item = &'a M>,
{
    let mut counts: Vec<(String, usize, &M)> = Vec::new();
    for m in items {
        let key = m.to_string();
        match counts.iter_mut().find(|(k, _, _)| *k == key) {
            Some(entry) => entry.1 += 1,
            None => counts.push((key, 1, m)),
        }
    }
    let mut best: Option<&(String, usize, &M)> = None;
    for c in &counts {
        if best.is_none_or(|b| c.1 > b.1) {
            best = Some(c);
        }
    }
    best.map(|b| b.2.clone())
}

/// Mid-rank fraction of draws at or below `reference`.
pub fn one_sided_pvalue(values: &[f64], reference: f64) -> Result<f64> {
    if values.len() < MIN_PVALUE_DRAWS {
        return Err(FidError::TooFewSamples {
            needed: MIN_PVALUE_DRAWS,
            got: values.len(),
        });
    }
    let below = values.iter().filter(|&&v| v < reference).count() as f64;
    let ties = values.iter().filter(|&&v| v == reference).count() as f64;
    Ok((below + 0.5 * ties) / values.len() as f64)
}

/// Supremum distance between the empirical CDF of `values` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / m).max((i + 1) as f64 / m - f)
    })
}

pub fn ks_uniform_distance(values: &[f64]) -> f64 {
    ks_statistic(values, |x| x.clamp(0.0, 1.0))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability `P(K > λ)`.
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One row of a QQ table against the uniform distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub uniform: f64,
    pub empirical: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqTable {
    pub rows: Vec<QqRow>,
    pub band_halfwidth: f64,
    pub ks_distance: f64,
    /// The empirical distribution stays inside the band everywhere.
    pub inside_band: bool,
}

/// QQ table of p-values against `Uniform(0, 1)` with the asymptotic 95% KS band.
pub fn qq_coverage(pvalues: &[f64]) -> Result<QqTable> {
    let m = pvalues.len();
    if m < MIN_QQ_REPLICATIONS {
        return Err(FidError::TooFewSamples {
            needed: MIN_QQ_REPLICATIONS,
            got: m,
        });
    }
    if pvalues.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(FidError::OutOfRange("p-values must lie in [0, 1]".into()));
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let band = KS_95 / (m as f64).sqrt();
    let rows = sorted
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let u = (i as f64 + 0.5) / m as f64;
            QqRow {
                uniform: u,
                empirical: e,
                lower: (u - band).max(0.0),
                upper: (u + band).min(1.0),
            }
        })
        .collect();
    let ks = ks_uniform_distance(&sorted);
    Ok(QqTable {
        rows,
        band_halfwidth: band,
        ks_distance: ks,
        inside_band: ks < band,
    })
}

/// Effective sample size from autocorrelations summed over initial positive pairs.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 4 {
        return m as f64;
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / m as f64;
    if var == 0.0 {
        return m as f64;
    }
    let rho = |lag: usize| {
        centered[..m - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (m as f64 * var)
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < m {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = (1.0 + 2.0 * sum).max(1.0);
    m as f64 / tau
}

/// Mardia's multivariate skewness statistic and its chi-square p-value.
pub fn mardia_skewness(samples: &[Vec<f64>]) -> Result<(f64, f64)> {
    let m = samples.len();
    let k = samples.first().map(|s| s.len()).unwrap_or(0);
    if m <= k + 1 || k == 0 {
        return Err(FidError::TooFewSamples { needed: k + 2, got: m });
    }
    let mut mean = vec![0.0; k];
    for s in samples {
        for (acc, v) in mean.iter_mut().zip(s) {
            *acc += v / m as f64;
        }
    }
    let centered = DMatrix::from_fn(m, k, |i, j| samples[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / m as f64;
    let cov = SpdMatrix::new(cov)?;
    // rows of W are the Mahalanobis-whitened observations
    let w = cov
        .cholesky()
        .l()
        .solve_lower_triangular(&centered.transpose())
        .ok_or(FidError::Singular)?
        .transpose();
    let g = &w * w.transpose();
    let b1 = g.iter().map(|v| v * v * v).sum::<f64>() / (m as f64 * m as f64);
    let stat = m as f64 * b1 / 6.0;
    let df = (k * (k + 1) * (k + 2)) as f64 / 6.0;
    let chi = ChiSquared::new(df).map_err(|e| FidError::OutOfRange(e.to_string()))?;
    Ok((stat, 1.0 - chi.cdf(stat)))
}

/// Run-level digest written next to the traces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatisticSummary {
    pub statistic: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
}

pub fn summarize(statistic: Statistic, values: &[f64]) -> Option<StatisticSummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(StatisticSummary {
        statistic: statistic.name().to_string(),
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile(&sorted, 0.5),
        q025: quantile(&sorted, 0.025),
        q975: quantile(&sorted, 0.975),
        ess: effective_sample_size(values),
    })
}
