//! Generalized fiducial inference for covariance matrices of zero-mean
//! Gaussian data.
//!
//! The crate is generic over the floating-point type through [`Scalar`];
//! the aliases below fix it to `f64` (and `f32` where that is enough).

pub mod density;
pub mod diagnostics;
pub mod error;
pub mod matrix;
pub mod models;
pub mod samplers;
pub mod scalar;
pub mod scenario;

pub use density::{
    log_clique_model_gfd, log_clique_penalty, log_gfd, log_jacobian, log_likelihood, log_mdl_penalty,
    log_multivariate_gamma, log_normalizing_constant_full, CliqueScorer, GfdEvaluator, LogDensity, Norm,
    NormChoice, SubsetPlan,
};
pub use diagnostics::{
    co_membership, compute_statistics, one_sided_pvalue, qq_coverage, CoMembershipMatrix, ConfidenceCurve,
    Statistic, StatisticsTable,
};
pub use error::{FidError, Result};
pub use matrix::{
    eigvec_angle, fm_distance, inverse, log_det, sample_covariance, CovariateMatrix, ObservationSet, SpdMatrix,
};
pub use models::{
    enumerate_partitions, is_compatible, is_submodel, pattern_to_clique, restrict_to_model, CliqueModel,
    SparsityPattern,
};
pub use samplers::{
    gibbs_clique_sweep, mh_fixed_pattern_step, rjmcmc_step, run_chain, sample_clique_covariance,
    sample_inverse_wishart, ChainConfig, ChainModel, ChainState, ChainTrace, Initializer, RngStream,
    SamplerKind, SweepOrder,
};
pub use scalar::Scalar;
pub use scenario::{simulate_scenario, Generator, Scenario, ScenarioSpec};

pub type SpdMatrix64 = SpdMatrix<f64>;
pub type SpdMatrix32 = SpdMatrix<f32>;
pub type CovariateMatrix64 = CovariateMatrix<f64>;
pub type CovariateMatrix32 = CovariateMatrix<f32>;
pub type ObservationSet64 = ObservationSet<f64>;
pub type ObservationSet32 = ObservationSet<f32>;
pub type ChainState64 = ChainState<f64>;
pub type ChainTrace64 = ChainTrace<f64>;
pub type Scenario64 = Scenario<f64>;
