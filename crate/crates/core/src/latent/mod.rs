//! Conditional fits of latent Gaussian models: log marginal likelihood and
//! posterior marginals for fixed nuisance parameters.
//!
//! Gaussian likelihoods are integrated exactly, Poisson and negative binomial
//! ones by a Laplace approximation at the Newton mode, and a single free
//! precision hyperparameter by quadrature over its logarithm.

mod hyper;
mod marginal;
mod newton;

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::model::{Design, GammaPrior, Name, NormalPrior};

pub use hyper::{fit_with_hyperparameter, HYPER_GRID_POINTS};
pub use marginal::{linspace, transform_marginal, Component, Marginal, MarginalGrid, Scale, Transform, MIN_GRID_POINTS};
pub use newton::{fit_gaussian_exact, fit_laplace, CORRECTION_NODES, PenalizedObjective, MAX_HALVINGS, MAX_NEWTON_ITERATIONS, NEWTON_TOLERANCE};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("invalid subproblem: {0}")]
    InvalidInput(&'static str),
    #[error("posterior precision is not positive definite (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("Newton iterations did not converge after {iterations} steps (last update {last_update:e})")]
    NotConverged { iterations: usize, last_update: f64 },
    #[error("no step along the Newton direction improves the objective (update {update:e})")]
    Stalled { update: f64 },
    #[error("non-finite objective at the starting point")]
    NonFinite,
    #[error("hyperparameter posterior mass {mass:e} escapes the quadrature grid")]
    HyperparameterEscape { mass: f64 },
    #[error("transform is not strictly monotone on the grid support")]
    NonMonotone,
}

/// Observation model with every nuisance value fixed.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationModel {
    /// Per-observation precisions.
    Gaussian { precision: Vec<f64> },
    Poisson,
    /// Per-observation log sizes.
    NegativeBinomial { ln_size: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum RandomPrecision {
    PerLevel(Vec<f64>),
    Shared(f64),
}

/// Independent Gaussian random effects, one per level, entering observation
/// `i` as `covariate[i] * u[level[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomBlock {
    pub name: Name,
    pub level: Arc<[usize]>,
    pub n_levels: usize,
    pub covariate: Option<Arc<[f64]>>,
    pub precision: RandomPrecision,
}

impl RandomBlock {
    pub fn level_precision(&self, j: usize) -> f64 {
        match &self.precision {
            RandomPrecision::PerLevel(v) => v[j],
            RandomPrecision::Shared(t) => *t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperKind {
    /// Sets the shared precision of the random block.
    RandomEffectPrecision,
    /// Multiplies every Gaussian observation precision.
    ObservationPrecision,
}

/// A free precision integrated over by quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameter {
    pub name: Name,
    pub kind: HyperKind,
    pub prior: GammaPrior,
}

/// A model that is latent Gaussian once its nuisance values are fixed.
///
/// The latent vector stacks the fixed coefficients and the random-effect levels;
/// its prior precision is diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussianSubproblem {
    pub name: Name,
    pub response: Arc<[f64]>,
    pub observation: ObservationModel,
    pub offset: Option<Arc<[f64]>>,
    pub fixed: Design,
    pub fixed_prior: Vec<NormalPrior>,
    pub random: Option<RandomBlock>,
    pub hyperparameter: Option<Hyperparameter>,
}

impl LatentGaussianSubproblem {
    pub fn latent_dim(&self) -> usize {
        self.fixed.cols() + self.random.as_ref().map_or(0, |r| r.n_levels)
    }

    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    pub(crate) fn validate(&self) -> Result<(), FitError> {
        let n = self.n_obs();
        if self.fixed.rows() != n {
            return Err(FitError::InvalidInput("design rows differ from response length"));
        }
        if self.fixed_prior.len() != self.fixed.cols() {
            return Err(FitError::InvalidInput("one prior per fixed coefficient is required"));
        }
        if self.fixed_prior.iter().any(|p| !(p.precision > 0.0) || !p.precision.is_finite()) {
            return Err(FitError::InvalidInput("fixed-effect prior precisions must be positive"));
        }
        if self.response.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidInput("response must be finite"));
        }
        if self.offset.as_ref().is_some_and(|o| o.len() != n) {
            return Err(FitError::InvalidInput("offset length differs from response length"));
        }
        match &self.observation {
            ObservationModel::Gaussian { precision } => {
                if precision.len() != n || precision.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
                    return Err(FitError::InvalidInput("Gaussian precisions must be positive, one per observation"));
                }
            }
            ObservationModel::NegativeBinomial { ln_size } => {
                if ln_size.len() != n || ln_size.iter().any(|k| !k.is_finite()) {
                    return Err(FitError::InvalidInput("log sizes must be finite, one per observation"));
                }
            }
            ObservationModel::Poisson => {}
        }
        if let Some(r) = &self.random {
            if r.level.len() != n || r.level.iter().any(|&l| l >= r.n_levels) {
                return Err(FitError::InvalidInput("random-effect levels must be in range, one per observation"));
            }
            if r.covariate.as_ref().is_some_and(|c| c.len() != n) {
                return Err(FitError::InvalidInput("random-slope covariate length differs from response length"));
            }
            let ok = match &r.precision {
                RandomPrecision::PerLevel(v) => v.len() == r.n_levels && v.iter().all(|t| *t > 0.0 && t.is_finite()),
                RandomPrecision::Shared(t) => *t > 0.0 && t.is_finite(),
            };
            if !ok {
                return Err(FitError::InvalidInput("random-effect precisions must be positive and finite"));
            }
        }
        if let Some(h) = &self.hyperparameter {
            match h.kind {
                HyperKind::RandomEffectPrecision if self.random.is_none() => {
                    return Err(FitError::InvalidInput("random-effect precision hyperparameter without a random block"))
                }
                HyperKind::ObservationPrecision if !matches!(self.observation, ObservationModel::Gaussian { .. }) => {
                    return Err(FitError::InvalidInput("observation precision hyperparameter needs a Gaussian likelihood"))
                }
                _ => {}
            }
            if !(h.prior.shape > 0.0 && h.prior.rate > 0.0) {
                return Err(FitError::InvalidInput("hyperparameter prior must be a proper Gamma"));
            }
        }
        Ok(())
    }
}

/// How fixed-coefficient marginals are formed under a non-Gaussian likelihood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoefficientMarginals {
    /// Gaussian at the joint mode with the Hessian-based variance.
    Gaussian,
    /// Laplace evaluations with the coefficient pinned at a few points
    /// around the mode, smoothed by a cubic in the log density.
    #[default]
    Laplace,
}

/// Options shared by all fitters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Also report a marginal for every random-effect level.
    pub random_effect_marginals: bool,
    pub coefficients: CoefficientMarginals,
}

/// Result of fitting one or more subproblems at a fixed `θ_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFit {
    pub log_marginal_likelihood: f64,
    /// Per-subproblem log marginal likelihoods; they sum to the total.
    pub parts: Vec<f64>,
    /// Named posterior marginals in a stable order.
    pub marginals: Vec<(Name, Marginal)>,
    pub newton_iterations: usize,
    pub converged: bool,
}

impl ConditionalFit {
    pub fn marginal(&self, name: &str) -> Option<&Marginal> {
        self.marginals.iter().find(|(n, _)| &**n == name).map(|(_, m)| m)
    }

    /// Posterior mean and standard deviation of every reported quantity.
    pub fn summaries(&self) -> Vec<(Name, f64, f64)> {
        self.marginals.iter().map(|(n, m)| (n.clone(), m.mean(), m.sd())).collect()
    }

    /// Joins fits of conditionally independent subproblems. The total log
    /// marginal likelihood is the sum of the parts.
    pub fn combine(fits: Vec<ConditionalFit>) -> ConditionalFit {
        let mut parts = Vec::with_capacity(fits.len());
        let mut marginals = Vec::new();
        let mut newton_iterations = 0;
        let mut converged = true;
        for f in fits {
            parts.extend(f.parts);
            marginals.extend(f.marginals);
            newton_iterations += f.newton_iterations;
            converged &= f.converged;
        }
        let log_marginal_likelihood = parts.iter().sum::<f64>();
        ConditionalFit { log_marginal_likelihood, parts, marginals, newton_iterations, converged }
    }
}

/// Fits a subproblem with the method its structure calls for.
pub fn fit(sub: &LatentGaussianSubproblem, options: FitOptions) -> Result<ConditionalFit, FitError> {
    if sub.hyperparameter.is_some() {
        fit_with_hyperparameter(sub, options)
    } else if matches!(sub.observation, ObservationModel::Gaussian { .. }) {
        fit_gaussian_exact(sub, options)
    } else {
        fit_laplace(sub, options)
    }
}
