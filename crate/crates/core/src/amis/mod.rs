//! Adaptive multiple importance sampling over the conditioning vector.
//!
//! Every stage draws from the current proposal, fits the conditional model
//! at each draw, and then reweights *all* draws so far against the
//! deterministic mixture of every proposal used:
//!
//! ```text
//! log w_i = log π(D|θ_i) + log π(θ_i) − log Σ_t (N_t / N) s_t(θ_i)
//! ```
//!
//! The next proposal takes the weighted mean and covariance of the ensemble.

mod diagnostics;
mod init;
mod proposal;

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::exec::Executor;
use crate::latent::{ConditionalFit, FitError};
use crate::linalg::SymMatrix;
use crate::math::{compensated_sum, exp, ln, log_sum_exp};
use crate::model::{ConditioningPlan, Name};
use crate::rng::stream;

pub use diagnostics::{
    mix_marginals, sample_posterior_theta_c, theta_marginal, theta_summaries_unchecked, weight_diagnostic_curve,
};
pub use init::{data_informed_proposal, group_sample_variances, init_proposal_from_data, permutation_search_init, refine_proposal_mean, ModeRefinement, PermutationSearch, DEFAULT_PERMUTATIONS, MIN_PROPOSAL_VARIANCE};
pub use proposal::{ridge, weighted_moments, ProposalFamily, ProposalState, StageProposal, MIN_EIGENVALUE, RIDGE_FLOOR};

/// Below this ESS a stage is flagged and posterior summaries are refused.
pub const LOW_ESS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AmisError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid proposal: {0}")]
    InvalidProposal(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all importance weights are zero after stage {stage} ({failures} failed fits); the proposal misses the posterior")]
    AllWeightsZero { stage: usize, failures: usize },
    #[error("weights must be non-negative and not all zero")]
    DegenerateWeights,
    #[error("adapted covariance is not positive definite after regularization")]
    DegenerateCovariance,
    #[error("effective sample size {ess:.3} is too small for a posterior summary; inspect the weight diagnostics")]
    LowEss { ess: f64 },
    #[error("marginal `{0}` is missing from a weighted fit")]
    MarginalAbsent(Name),
    #[error("unknown conditioning component {0}")]
    UnknownComponent(usize),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("conditional fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("no permutation could be fitted")]
    AllPermutationsFailed,
}

/// Anything whose conditional marginal likelihood can be evaluated at `θ_c`.
pub trait ConditionalTarget {
    fn dim(&self) -> usize;
    fn theta_names(&self) -> Vec<Name>;
    /// Log prior density of `θ_c` on the sampling scale.
    fn log_prior(&self, theta: &[f64]) -> f64;
    fn evaluate(&self, theta: &[f64]) -> Result<ConditionalFit, FitError>;
}

impl ConditionalTarget for ConditioningPlan {
    fn dim(&self) -> usize {
        ConditioningPlan::dim(self)
    }

    fn theta_names(&self) -> Vec<Name> {
        ConditioningPlan::theta_names(self)
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        ConditioningPlan::log_prior(self, theta)
    }

    fn evaluate(&self, theta: &[f64]) -> Result<ConditionalFit, FitError> {
        ConditioningPlan::evaluate(self, theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmisConfig {
    pub n_initial: usize,
    pub n_stages: usize,
    pub n_per_stage: usize,
    pub initial: ProposalState,
    pub seed: u64,
}

impl AmisConfig {
    pub fn total_samples(&self) -> usize {
        self.n_initial + self.n_stages * self.n_per_stage
    }

    fn validate(&self) -> Result<(), AmisError> {
        if self.n_initial == 0 || self.n_per_stage == 0 {
            return Err(AmisError::InvalidConfig("stage sizes must be at least 1"));
        }
        Ok(())
    }
}

/// Per-stage record of the adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    /// Samples drawn so far, this stage included.
    pub n_total: usize,
    pub ess: f64,
    /// Proposal this stage sampled from.
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
    /// Conditional log marginal likelihood at the proposal mean.
    pub log_ml_at_mean: Option<f64>,
    pub failures: usize,
    pub low_ess: bool,
}

#[derive(Clone, Debug)]
pub struct WeightedEnsemble {
    pub theta_names: Vec<Name>,
    pub samples: Vec<Vec<f64>>,
    /// `log π(D|θ) + log π(θ)`, `-inf` where the fit failed.
    pub log_targets: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// Normalized to sum to one.
    pub weights: Vec<f64>,
    pub ess: f64,
    pub fits: Vec<Option<Arc<ConditionalFit>>>,
    /// End index (exclusive) of each stage's samples.
    pub stage_ends: Vec<usize>,
    pub stages: Vec<StageReport>,
    pub failures: usize,
    pub proposal: ProposalState,
}

impl WeightedEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn component(&self, j: usize) -> Result<Vec<f64>, AmisError> {
        if j >= self.theta_names.len() {
            return Err(AmisError::UnknownComponent(j));
        }
        Ok(self.samples.iter().map(|s| s[j]).collect())
    }

    /// Ensemble built from fixed samples and log weights, without fits.
    pub fn from_log_weights(theta_names: Vec<Name>, samples: Vec<Vec<f64>>, log_weights: Vec<f64>) -> Result<Self, AmisError> {
        let d = theta_names.len();
        if let Some(s) = samples.iter().find(|s| s.len() != d) {
            return Err(AmisError::DimensionMismatch { expected: d, found: s.len() });
        }
        if samples.len() != log_weights.len() || samples.is_empty() {
            return Err(AmisError::TooFewSamples { needed: 1, found: samples.len().min(log_weights.len()) });
        }
        let weights = normalize_log_weights(&log_weights)?;
        let ess = effective_sample_size(&weights)?;
        let n = samples.len();
        let proposal = ProposalState::gaussian(alloc::vec![0.0; d], SymMatrix::identity(d))?;
        Ok(Self {
            theta_names,
            fits: alloc::vec![None; n],
            log_targets: log_weights.clone(),
            samples,
            log_weights,
            weights,
            ess,
            stage_ends: alloc::vec![n],
            stages: Vec::new(),
            failures: 0,
            proposal,
        })
    }
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64, AmisError> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(AmisError::DegenerateWeights);
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(AmisError::DegenerateWeights);
    }
    // Rescaling by the largest weight keeps the squares in range.
    let s = compensated_sum(weights.iter().map(|w| w / max));
    let s2 = compensated_sum(weights.iter().map(|w| (w / max) * (w / max)));
    Ok(s * s / s2)
}

fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>, AmisError> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(AmisError::DegenerateWeights);
    }
    let mut w: Vec<f64> = log_weights.iter().map(|&l| exp(l - lse)).collect();
    let total = compensated_sum(w.iter().copied());
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Weighted mean and covariance of the ensemble, plus a ridge.
pub fn adapt_proposal(ensemble: &WeightedEnsemble, state: &ProposalState) -> Result<ProposalState, AmisError> {
    let (mean, mut cov) = weighted_moments(&ensemble.samples, &ensemble.weights);
    let eps = ridge(&cov);
    for a in 0..cov.dim() {
        cov.add(a, a, eps);
    }
    if mean.iter().chain(cov.as_slice()).any(|v| !v.is_finite())
        || cov.cholesky().is_err()
        || cov.min_eigenvalue() <= MIN_EIGENVALUE
    {
        return Err(AmisError::DegenerateCovariance);
    }
    let mut next = ProposalState { family: state.family, mean, covariance: cov, history: state.history.clone() };
    next.history.push(StageProposal {
        mean: state.mean.clone(),
        covariance: state.covariance.clone(),
        n_samples: ensemble.len() - next.history.iter().map(|h| h.n_samples).sum::<usize>(),
    });
    Ok(next)
}

/// Runs the initial stage and `n_stages` adaptive stages.
pub fn run_amis<T, E>(target: &T, config: &AmisConfig, executor: &E) -> Result<WeightedEnsemble, AmisError>
where
    T: ConditionalTarget + Sync,
    E: Executor,
{
    config.validate()?;
    let d = target.dim();
    if config.initial.dim() != d {
        return Err(AmisError::DimensionMismatch { expected: d, found: config.initial.dim() });
    }
    let mut state = config.initial.clone();
    state.history.clear();
    let mut densities = Vec::new();
    let mut stage_sizes: Vec<usize> = Vec::new();
    let mut ens = WeightedEnsemble {
        theta_names: target.theta_names(),
        samples: Vec::new(),
        log_targets: Vec::new(),
        log_weights: Vec::new(),
        weights: Vec::new(),
        ess: 0.0,
        fits: Vec::new(),
        stage_ends: Vec::new(),
        stages: Vec::new(),
        failures: 0,
        proposal: state.clone(),
    };
    // ln s_t(θ_i) for every sample i and stage t.
    let mut ln_s: Vec<Vec<f64>> = Vec::new();

    for stage in 0..=config.n_stages {
        if stage > 0 {
            state = adapt_proposal(&ens, &state)?;
        }
        let density = state.density()?;
        let n_stage = if stage == 0 { config.n_initial } else { config.n_per_stage };
        let first = ens.len();
        let seed = config.seed;
        let draws: Vec<Vec<f64>> = (first..first + n_stage)
            .map(|g| density.sample(&mut stream(seed, g as u64)))
            .collect();
        let results = executor.map(n_stage, &|k| {
            let theta = &draws[k];
            target.evaluate(theta).map(|fit| (fit.log_marginal_likelihood + target.log_prior(theta), fit))
        });
        let mut stage_failures = 0;
        for (theta, r) in draws.into_iter().zip(results) {
            match r {
                Ok((lt, fit)) if lt.is_finite() => {
                    ens.log_targets.push(lt);
                    ens.fits.push(Some(Arc::new(fit)));
                }
                _ => {
                    stage_failures += 1;
                    ens.log_targets.push(f64::NEG_INFINITY);
                    ens.fits.push(None);
                }
            }
            ens.samples.push(theta);
        }
        ens.failures += stage_failures;

        for (i, row) in ln_s.iter_mut().enumerate() {
            row.push(density.ln_density(&ens.samples[i]));
        }
        for i in first..ens.len() {
            let row: Vec<f64> = densities
                .iter()
                .chain(core::iter::once(&density))
                .map(|s: &proposal::ProposalDensity| s.ln_density(&ens.samples[i]))
                .collect();
            ln_s.push(row);
        }
        densities.push(density);
        stage_sizes.push(n_stage);
        ens.stage_ends.push(ens.len());

        let n_total = ens.len() as f64;
        let ln_frac: Vec<f64> = stage_sizes.iter().map(|&n| ln(n as f64 / n_total)).collect();
        let mut terms = Vec::with_capacity(ln_frac.len());
        ens.log_weights = ens
            .log_targets
            .iter()
            .zip(&ln_s)
            .map(|(&lt, row)| {
                terms.clear();
                terms.extend(row.iter().zip(&ln_frac).map(|(s, f)| s + f));
                lt - log_sum_exp(&terms)
            })
            .collect();
        ens.weights = match normalize_log_weights(&ens.log_weights) {
            Ok(w) => w,
            Err(_) => return Err(AmisError::AllWeightsZero { stage, failures: ens.failures }),
        };
        ens.ess = effective_sample_size(&ens.weights)?;
        let log_ml_at_mean = target.evaluate(&state.mean).ok().map(|f| f.log_marginal_likelihood);
        ens.stages.push(StageReport {
            stage,
            n_total: ens.len(),
            ess: ens.ess,
            mean: state.mean.clone(),
            covariance: state.covariance.clone(),
            log_ml_at_mean,
            failures: stage_failures,
            low_ess: ens.ess < LOW_ESS,
        });
    }
    state.history.push(StageProposal {
        mean: state.mean.clone(),
        covariance: state.covariance.clone(),
        n_samples: *stage_sizes.last().expect("at least one stage"),
    });
    ens.proposal = state;
    Ok(ens)
}
