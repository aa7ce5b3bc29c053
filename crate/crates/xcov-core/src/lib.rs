//! Cleaning estimators for empirical cross-correlation matrices.
//!
//! The library keeps the empirical singular vectors of a cross-correlation
//! block and replaces the singular values with cleaned ones. Four cleaners
//! are provided: the raw empirical estimate, an analytical shrinkage built
//! from resolvent-type functionals of the spectrum, a cross-validated
//! shrinkage, and a two-stream recurrent network trained on out-of-sample
//! targets. Supporting modules cover feasibility diagnostics for cleaned
//! blocks, synthetic benchmark generators, and a Monte Carlo harness with
//! bootstrap confidence intervals.

pub mod estimators;
pub mod feasibility;
pub mod harness;
pub mod linalg;
pub mod neural;
pub mod synthgen;

pub use estimators::{
    bbp_clean, cv_clean, marginal_projections, oracle_clean, reconstruct_rie,
    rescale_to_covariance, sample_cross_correlation, CorrelationTriplet, Method,
    ProjectedSpectrum, ShrinkageResult, SplitMode,
};
pub use feasibility::{
    feasibility_report, unwhiten_cross_block, whiten_cross_block, FeasibilityReport,
};
pub use harness::{
    bootstrap_ci, remove_market_mode, run_real_eval, run_synthetic_benchmark, sample_window,
    time_permutation_shuffle, ExperimentConfig, PeriodModel, ResultRow, ReturnsPanel,
};
pub use linalg::{
    cholesky, frobenius_mse, pava_isotonic, svd_thin, sym_eig, sym_inv_sqrt, sym_sqrt,
    ComplexScalar, DenseMatrix, SpectralDecomposition,
};
pub use neural::{
    build_tokens, count_parameters, load_model, save_model, NeuralModel, TokenSequence,
    TrainConfig,
};
pub use synthgen::{sample_observations, BenchmarkSpec, PopulationModel, RngStream, TailLaw};
