//! Data-driven starting proposals for per-group log-precisions.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::exec::Executor;
use crate::linalg::SymMatrix;
use crate::math::ln;
use crate::mcmc::rw::block_mode;
use crate::rng::named_stream;

use super::{AmisError, ConditionalTarget, ProposalFamily, ProposalState};

/// Smallest variance given to any component of a data-derived proposal.
pub const MIN_PROPOSAL_VARIANCE: f64 = 0.05;
/// Random orderings tried by [`permutation_search_init`] unless told otherwise.
pub const DEFAULT_PERMUTATIONS: usize = 500;

/// Unbiased sample variance of the response within each group.
///
/// Groups with fewer than two observations get `NaN`.
pub fn group_sample_variances(y: &[f64], group: &[usize], n_groups: usize) -> Result<Vec<f64>, AmisError> {
    if y.len() != group.len() {
        return Err(AmisError::DimensionMismatch { expected: y.len(), found: group.len() });
    }
    let mut n = alloc::vec![0usize; n_groups];
    let mut mean = alloc::vec![0.0; n_groups];
    let mut m2 = alloc::vec![0.0; n_groups];
    for (&v, &g) in y.iter().zip(group) {
        if g >= n_groups {
            return Err(AmisError::DimensionMismatch { expected: n_groups, found: g + 1 });
        }
        // Welford update.
        n[g] += 1;
        let d = v - mean[g];
        mean[g] += d / n[g] as f64;
        m2[g] += d * (v - mean[g]);
    }
    Ok(n.iter().zip(&m2).map(|(&k, &s)| if k < 2 { f64::NAN } else { s / (k - 1) as f64 }).collect())
}

fn check_variances(s2: &[f64]) -> Result<(), AmisError> {
    if s2.is_empty() {
        return Err(AmisError::InvalidProposal("no groups"));
    }
    if s2.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(AmisError::InvalidProposal("group sample variances must be positive and finite"));
    }
    Ok(())
}

/// Gaussian proposal with mean `ln(1/S²_i)` and diagonal variances
/// `max(scale · |ln(1/S²_i)|, 0.05)`.
pub fn init_proposal_from_data(s2: &[f64], scale: f64) -> Result<ProposalState, AmisError> {
    check_variances(s2)?;
    if !(scale > 0.0) {
        return Err(AmisError::InvalidProposal("scale must be positive"));
    }
    let mean: Vec<f64> = s2.iter().map(|&v| -ln(v)).collect();
    let var: Vec<f64> = mean.iter().map(|m| (scale * m.abs()).max(MIN_PROPOSAL_VARIANCE)).collect();
    ProposalState::diagonal(ProposalFamily::Gaussian, mean, &var)
}

/// Gaussian proposal with mean `ln(1/S²_i)` and diagonal variances
/// `multiplier · v / n_i`, `v` being the variance of `ln S²` across groups.
///
/// With a single group `v` is undefined and the variance floor is used.
pub fn data_informed_proposal(s2: &[f64], n_obs: &[usize], multiplier: f64) -> Result<ProposalState, AmisError> {
    check_variances(s2)?;
    if s2.len() != n_obs.len() {
        return Err(AmisError::DimensionMismatch { expected: s2.len(), found: n_obs.len() });
    }
    if !(multiplier > 0.0) || n_obs.contains(&0) {
        return Err(AmisError::InvalidProposal("multiplier and group sizes must be positive"));
    }
    let mean: Vec<f64> = s2.iter().map(|&v| -ln(v)).collect();
    let p = mean.len() as f64;
    let centre = mean.iter().sum::<f64>() / p;
    let spread = if mean.len() > 1 {
        mean.iter().map(|m| (m - centre) * (m - centre)).sum::<f64>() / (p - 1.0)
    } else {
        0.0
    };
    let var: Vec<f64> = n_obs
        .iter()
        .map(|&n| {
            let v = multiplier * spread / n as f64;
            if v > 0.0 { v } else { MIN_PROPOSAL_VARIANCE * multiplier }
        })
        .collect();
    ProposalState::diagonal(ProposalFamily::Gaussian, mean, &var)
}

/// Outcome of a permutation search over the entries of a candidate mean.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationSearch {
    /// Candidate with the winning ordering applied to its mean and covariance.
    pub proposal: ProposalState,
    /// `order[a]` is the candidate index placed in position `a`.
    pub order: Vec<usize>,
    pub best_log_ml: f64,
    pub identity_log_ml: Option<f64>,
    /// Orderings evaluated, the identity included.
    pub evaluated: usize,
    pub failures: usize,
}

/// Tries the identity ordering and `n_perm` random orderings of the candidate
/// mean, keeping the one with the largest conditional log marginal
/// likelihood. Ties go to the earliest ordering, so the identity wins them.
pub fn permutation_search_init<T, E>(
    candidate: &ProposalState,
    target: &T,
    n_perm: usize,
    seed: u64,
    executor: &E,
) -> Result<PermutationSearch, AmisError>
where
    T: ConditionalTarget + Sync,
    E: Executor,
{
    if n_perm == 0 {
        return Err(AmisError::InvalidConfig("at least one permutation is required"));
    }
    let d = candidate.dim();
    if target.dim() != d {
        return Err(AmisError::DimensionMismatch { expected: target.dim(), found: d });
    }
    let mut rng = named_stream(seed, "permutation-search");
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(n_perm + 1);
    orders.push((0..d).collect());
    for _ in 0..n_perm {
        let mut o: Vec<usize> = (0..d).collect();
        o.shuffle(&mut rng);
        orders.push(o);
    }
    let values = executor.map(orders.len(), &|k| {
        let theta: Vec<f64> = orders[k].iter().map(|&i| candidate.mean[i]).collect();
        target.evaluate(&theta).ok().map(|f| f.log_marginal_likelihood).filter(|v| v.is_finite())
    });
    let failures = values.iter().filter(|v| v.is_none()).count();
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((k, v));
            }
        }
    }
    let (k, best_log_ml) = best.ok_or(AmisError::AllPermutationsFailed)?;
    let order = orders.swap_remove(k);
    let mean = order.iter().map(|&i| candidate.mean[i]).collect();
    let mut cov = SymMatrix::zeros(d);
    for a in 0..d {
        for b in 0..d {
            cov.set(a, b, candidate.covariance.get(order[a], order[b]));
        }
    }
    Ok(PermutationSearch {
        proposal: ProposalState::new(candidate.family, mean, cov)?,
        order,
        best_log_ml,
        identity_log_ml: values[0],
        evaluated: values.len(),
        failures,
    })
}

/// Outcome of [`refine_proposal_mean`].
#[derive(Clone, Debug)]
pub struct ModeRefinement {
    pub proposal: ProposalState,
    /// Log target (log marginal likelihood plus log prior) at the old mean.
    pub start_log_target: f64,
    /// Log target at the new mean.
    pub log_target: f64,
}

/// Moves the proposal mean uphill to the mode of the conditional log
/// target by damped Newton steps with numerical derivatives, keeping the
/// covariance.
///
/// A ranking of permuted starting values only picks the best of a few
/// candidates; when the groups are many and the target is sharp, the winner
/// can still sit far below the mode, and an importance sampler started there
/// rarely recovers.
pub fn refine_proposal_mean<T>(proposal: &ProposalState, target: &T) -> Result<ModeRefinement, AmisError>
where
    T: ConditionalTarget,
{
    let d = proposal.dim();
    if target.dim() != d {
        return Err(AmisError::DimensionMismatch { expected: target.dim(), found: d });
    }
    let f = |theta: &[f64]| match target.evaluate(theta) {
        Ok(fit) if fit.log_marginal_likelihood.is_finite() => fit.log_marginal_likelihood + target.log_prior(theta),
        _ => f64::NEG_INFINITY,
    };
    let start_log_target = f(&proposal.mean);
    let (mean, _) = block_mode(&f, proposal.mean.clone());
    let log_target = f(&mean);
    let (mean, log_target) =
        if log_target.is_finite() && log_target >= start_log_target { (mean, log_target) } else { (proposal.mean.clone(), start_log_target) };
    Ok(ModeRefinement {
        proposal: ProposalState::new(proposal.family, mean, proposal.covariance.clone())?,
        start_log_target,
        log_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::latent::{ConditionalFit, FitError};
    use crate::math::{exp, normal_ln_pdf};
    use crate::model::Name;
    use alloc::vec;

    #[test]
    fn unit_variances_hit_the_floor() {
        let p = init_proposal_from_data(&[1.0; 4], 0.05).unwrap();
        assert_eq!(p.mean, vec![0.0; 4]);
        assert_eq!(p.covariance.diag(), vec![MIN_PROPOSAL_VARIANCE; 4]);
    }

    #[test]
    fn direct_evaluation() {
        let p = init_proposal_from_data(&[exp(-2.0), exp(-4.0)], 0.05).unwrap();
        assert!((p.mean[0] - 2.0).abs() < 1e-12 && (p.mean[1] - 4.0).abs() < 1e-12);
        let v = p.covariance.diag();
        assert!((v[0] - 0.1).abs() < 1e-12 && (v[1] - 0.2).abs() < 1e-12);
        // Variances above one give negative log-precisions; the sign is dropped.
        let q = init_proposal_from_data(&[exp(3.0)], 0.05).unwrap();
        assert!((q.covariance.get(0, 0) - 0.15).abs() < 1e-12);
        assert!(init_proposal_from_data(&[1.0, 0.0], 0.05).is_err());
    }

    #[test]
    fn sample_variances_by_group() {
        let y = [1.0, 3.0, 10.0, 2.0, 14.0, 12.0];
        let g = [0, 0, 1, 0, 1, 1];
        let s = group_sample_variances(&y, &g, 2).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - 4.0).abs() < 1e-12);
        assert!(group_sample_variances(&y, &g, 3).unwrap()[2].is_nan());
    }

    #[test]
    fn informed_variance_scales_with_group_size() {
        let s2 = [exp(-1.0), exp(-2.0), exp(-3.0)];
        let p = data_informed_proposal(&s2, &[10, 20, 40], 1.0).unwrap();
        assert!((p.mean[2] - 3.0).abs() < 1e-12);
        let v = p.covariance.diag();
        assert!((v[0] - 0.1).abs() < 1e-12 && (v[1] - 0.05).abs() < 1e-12 && (v[2] - 0.025).abs() < 1e-12);
        let wide = data_informed_proposal(&s2, &[10, 20, 40], 10.0).unwrap();
        assert!((wide.covariance.get(0, 0) - 1.0).abs() < 1e-12);
    }

    /// Two groups with known precisions; the log marginal likelihood of the
    /// pooled Gaussian data at a candidate `(ln τ_1, ln τ_2)`.
    struct TwoGroups {
        y: Vec<(usize, f64)>,
    }

    impl ConditionalTarget for TwoGroups {
        fn dim(&self) -> usize {
            2
        }
        fn theta_names(&self) -> Vec<Name> {
            vec!["a".into(), "b".into()]
        }
        fn log_prior(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn evaluate(&self, theta: &[f64]) -> Result<ConditionalFit, FitError> {
            let ll = self.y.iter().map(|&(g, v)| normal_ln_pdf(v, 0.0, exp(theta[g]))).sum();
            Ok(ConditionalFit { log_marginal_likelihood: ll, parts: vec![ll], marginals: vec![], newton_iterations: 0, converged: true })
        }
    }

    fn two_groups() -> TwoGroups {
        let mut rng = crate::rng::stream(8, 0);
        let y = (0..200)
            .map(|i| {
                let g = i % 2;
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                (g, if g == 0 { z } else { 10.0 * z })
            })
            .collect();
        TwoGroups { y }
    }

    #[test]
    fn swapped_candidate_is_recovered() {
        let t = two_groups();
        let truth = [0.0, -ln(100.0)];
        let swapped = ProposalState::diagonal(ProposalFamily::Gaussian, vec![truth[1], truth[0]], &[0.3, 0.7]).unwrap();
        let s = permutation_search_init(&swapped, &t, 20, 1, &Sequential).unwrap();
        assert_eq!(s.order, vec![1, 0]);
        assert_eq!(s.proposal.mean, truth.to_vec());
        assert_eq!(s.proposal.covariance.diag(), vec![0.7, 0.3]);
        assert!(s.best_log_ml > s.identity_log_ml.unwrap());
        assert_eq!(s.evaluated, 21);
    }

    #[test]
    fn ties_keep_the_identity() {
        let t = two_groups();
        let flat = ProposalState::diagonal(ProposalFamily::Gaussian, vec![-1.0, -1.0], &[0.2, 0.4]).unwrap();
        let s = permutation_search_init(&flat, &t, DEFAULT_PERMUTATIONS, 3, &Sequential).unwrap();
        assert_eq!(s.order, vec![0, 1]);
        assert_eq!(s.proposal, flat);
        assert_eq!(Some(s.best_log_ml), s.identity_log_ml);
        assert!(permutation_search_init(&flat, &t, 0, 3, &Sequential).is_err());
    }

    #[test]
    fn refinement_reaches_the_closed_form_mode() {
        let t = two_groups();
        let mut ms = [0.0; 2];
        for &(g, v) in &t.y {
            ms[g] += v * v / 100.0;
        }
        let start = ProposalState::diagonal(ProposalFamily::Gaussian, vec![1.0, -2.0], &[0.3, 0.7]).unwrap();
        let r = refine_proposal_mean(&start, &t).unwrap();
        for g in 0..2 {
            assert!((r.proposal.mean[g] + ln(ms[g])).abs() < 1e-5, "{:?}", r.proposal.mean);
        }
        assert_eq!(r.proposal.covariance, start.covariance);
        assert!(r.log_target > r.start_log_target);
        let wrong = ProposalState::diagonal(ProposalFamily::Gaussian, vec![0.0; 3], &[1.0; 3]).unwrap();
        assert!(refine_proposal_mean(&wrong, &t).is_err());
    }
}
