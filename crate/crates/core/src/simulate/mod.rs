//! Samplers for Poisson, Boolean and Strauss processes, and related densities.

mod boolean;
mod poisson;
mod strauss;

pub use boolean::{sample_boolean_model, BooleanModel, Grains, RadiusLaw};
pub use poisson::{log_poisson_density, poisson_count, poisson_density, sample_poisson};
pub use strauss::{
    close_pairs, estimate_strauss_kappa, sample_strauss, sample_strauss_chain, strauss_log_density_unnormalized, KappaEstimate,
    McmcDiagnostics, StraussParams, StraussSample, MIN_KAPPA_REPLICATES,
};
