//! Conflict diagnostics for Bayesian evidence synthesis on directed acyclic graphs.
//!
//! The library builds DAG models (network meta-analysis, multi-source prevalence
//! synthesis), splits them into partitions at separator nodes, fits each partition
//! by adaptive MCMC, and tests whether the partitions agree about the separators:
//! per-contrast conflict p-values, a global chi-squared (Wald) test on the contrast
//! vector, and single-step max-T multiplicity adjustment via multivariate-normal
//! rectangle probabilities.
//!
//! Modules:
//! - [`graph`]: model representation, validation, node-splitting, config files.
//! - [`infer`]: adaptive Metropolis-within-Gibbs sampler, convergence and deviance
//!   summaries.
//! - [`stats`]: contrasts, conflict p-values, pseudo-inverse, MVN rectangle
//!   integration, max-T adjustment, report assembly.
//! - [`nma`]: network meta-analysis construction and spanning-tree partition
//!   schemes.
//! - [`hiv`]: the HIV prevalence synthesis model and its cross-validatory splits.
//! - [`runner`]: end-to-end analyses behind the `evsplit` command-line tool.

pub mod graph;
pub mod hiv;
pub mod infer;
pub mod nma;
pub mod runner;
pub mod stats;
pub mod util;
