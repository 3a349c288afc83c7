//! Core numerics for double hierarchical generalized linear models.
//!
//! A model is split into a conditioning vector `θ_c`, sampled by adaptive
//! multiple importance sampling, and one or more conditionally latent
//! Gaussian submodels that are integrated exactly or by Laplace's method.
//! A Metropolis-within-Gibbs sampler serves as a reference for the full
//! joint posterior, and seeded generators produce the simulation datasets.
//!
//! The crate needs only `alloc`; enable `std` for `std::error::Error`
//! integration in downstream crates and `serde` for (de)serializable types.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod amis;
pub mod exec;
pub mod latent;
pub mod linalg;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod rng;
pub mod sim;
pub mod summary;

pub use amis::{run_amis, AmisConfig, AmisError, ProposalFamily, ProposalState, WeightedEnsemble};
pub use latent::{CoefficientMarginals, ConditionalFit, FitError, LatentGaussianSubproblem, Marginal, MarginalGrid};
pub use model::{build_spec, derive_conditioning_plan, ConditioningPlan, DhglmSpec, SpecError};
