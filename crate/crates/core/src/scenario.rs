//! Synthetic data with a known truth: block-correlated clique covariances and
//! sparse covariate matrices.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FidError, Result};
use crate::matrix::{CovariateMatrix, ObservationSet, SpdMatrix};
use crate::models::{CliqueModel, SparsityPattern};
use crate::samplers::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Generator {
    /// Consecutive blocks of the given sizes, unit variances and common
    /// within-block correlation.
    Clique { sizes: Vec<usize>, intra_corr: f64 },
    /// Sparse `A₀`: the given pattern, or a random one with `max_c` active
    /// entries per column.
    Sparse {
        pattern: Option<SparsityPattern>,
        max_c: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub p: usize,
    pub n: usize,
    pub generator: Generator,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Scenario<T: Scalar> {
    pub obs: ObservationSet<T>,
    pub sigma0: SpdMatrix<T>,
    pub a0: CovariateMatrix<T>,
    pub m0: Option<CliqueModel>,
}

/// `k` block sizes as equal as possible, larger blocks first.
pub fn equal_sizes(p: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > p {
        return Err(FidError::Config(format!("cannot split {p} coordinates into {k} cliques")));
    }
    Ok((0..k).map(|i| p / k + usize::from(i < p % k)).collect())
}

fn clique_sigma<T: Scalar>(sizes: &[usize], rho: f64) -> Result<(DMatrix<T>, CliqueModel)> {
    let p: usize = sizes.iter().sum();
    let mut m = DMatrix::<T>::identity(p, p);
    let mut start = 0;
    for &g in sizes {
        if g == 0 {
            return Err(FidError::Config("clique sizes must be positive".into()));
        }
        if g > 1 {
            let lower = -1.0 / (g as f64 - 1.0);
            if !(rho > lower && rho < 1.0) {
                return Err(FidError::NotPositiveDefinite);
            }
        }
        for i in start..start + g {
            for j in start..start + g {
                if i != j {
                    m[(i, j)] = T::lit(rho);
                }
            }
        }
        start += g;
    }
    Ok((m, CliqueModel::from_sizes(sizes)?))
}

fn random_sparse<R: Rng + ?Sized>(p: usize, max_c: usize, rng: &mut R) -> SparsityPattern {
    let mut mask = vec![false; p * p];
    for j in 0..p {
        mask[j * p + j] = true;
        let extra = max_c.saturating_sub(1).min(p - 1);
        for k in sample(rng, p - 1, extra).into_iter() {
            let i = if k >= j { k + 1 } else { k };
            mask[i * p + j] = true;
        }
    }
    SparsityPattern::from_mask(p, mask).expect("diagonal keeps every row non-empty")
}

/// Draws `Z ~ N(0, I)` and returns `Y = A₀ Z` with the truth attached.
pub fn simulate_scenario<T: Scalar>(spec: &ScenarioSpec) -> Result<Scenario<T>> {
    let (p, n) = (spec.p, spec.n);
    if p == 0 || n == 0 {
        return Err(FidError::Config("p and n must be positive".into()));
    }
    let mut rng = RngStream::new(spec.seed, 0);
    let (a0, m0) = match &spec.generator {
        Generator::Clique { sizes, intra_corr } => {
            if sizes.iter().sum::<usize>() != p {
                return Err(FidError::Config(format!("clique sizes do not add up to p = {p}")));
            }
            let (sigma, model) = clique_sigma::<T>(sizes, *intra_corr)?;
            let l = SpdMatrix::new(sigma)?.chol_factor();
            (CovariateMatrix::from_matrix(l)?, Some(model))
        }
        Generator::Sparse { pattern, max_c } => {
            if *max_c == 0 {
                return Err(FidError::Config("max_c must be at least 1".into()));
            }
            let mut tries = 0;
            loop {
                let pat = match pattern {
                    Some(pt) => {
                        if pt.dim() != p {
                            return Err(FidError::DimensionMismatch {
                                expected: p,
                                found: pt.dim(),
                            });
                        }
                        if !pt.respects_cap(*max_c) {
                            return Err(FidError::InvalidPattern(format!(
                                "pattern exceeds {max_c} active entries per column"
                            )));
                        }
                        pt.clone()
                    }
                    None => random_sparse(p, *max_c, &mut rng),
                };
                let mut a = DMatrix::<T>::zeros(p, p);
                for (i, j) in pat.active_positions() {
                    a[(i, j)] = if i == j {
                        T::one()
                    } else {
                        let mag = rng.random_range(0.3..0.8);
                        T::lit(if rng.random_bool(0.5) { mag } else { -mag })
                    };
                }
                match CovariateMatrix::new(a, pat) {
                    Ok(a) => break (a, None),
                    Err(_) if tries < 100 => tries += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    };
    if a0.dim() != p {
        return Err(FidError::DimensionMismatch {
            expected: p,
            found: a0.dim(),
        });
    }
    let z = DMatrix::<T>::from_fn(n, p, |_, _| T::standard_normal(&mut rng));
    let y = z * a0.entries().transpose();
    let sigma0 = a0.covariance()?;
    Ok(Scenario {
        obs: ObservationSet::new(y)?,
        sigma0,
        a0,
        m0,
    })
}
