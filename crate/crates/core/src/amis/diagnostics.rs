//! Posterior summaries and diagnostics from a weighted ensemble.

use alloc::vec::Vec;

use crate::latent::{linspace, Marginal, MarginalGrid, Scale};
use crate::math::{compensated_sum, exp, powf, LN_2PI};
use crate::model::Name;
use crate::summary::{weighted_summary, Summary};

use super::{AmisError, WeightedEnsemble, LOW_ESS};

/// Number of abscissae in mixed and smoothed marginals.
pub const MIX_POINTS: usize = 201;
/// Weight left out when choosing the grid range, and the per-component tail.
const RANGE_TAIL: f64 = 1e-9;

/// `Σ_m w_m π̃(· | θ_m, D)` tabulated on a common grid.
///
/// The grid spans the union of the supports of the heaviest components that
/// together carry all but 1e-9 of the weight. Log-scale marginals are mixed
/// on the log scale.
pub fn mix_marginals(ensemble: &WeightedEnsemble, name: &str) -> Result<MarginalGrid, AmisError> {
    let mut parts: Vec<(f64, &Marginal)> = Vec::new();
    for (fit, &w) in ensemble.fits.iter().zip(&ensemble.weights) {
        if w <= 0.0 {
            continue;
        }
        let m = fit
            .as_ref()
            .and_then(|f| f.marginal(name))
            .ok_or_else(|| AmisError::MarginalAbsent(name.into()))?;
        parts.push((w, m));
    }
    if parts.is_empty() {
        return Err(AmisError::MarginalAbsent(name.into()));
    }
    let scale = parts[0].1.scale();
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| parts[b].0.total_cmp(&parts[a].0).then(a.cmp(&b)));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut carried = 0.0;
    for &k in &order {
        let (a, b) = parts[k].1.support(RANGE_TAIL);
        lo = lo.min(a);
        hi = hi.max(b);
        carried += parts[k].0;
        if carried >= 1.0 - RANGE_TAIL {
            break;
        }
    }
    if !(hi > lo) {
        let c = lo;
        let half = 1e-6 * (1.0 + c.abs());
        lo = c - half;
        hi = c + half;
    }
    let x = linspace(lo, hi, MIX_POINTS);
    let density = x
        .iter()
        .map(|&v| compensated_sum(parts.iter().map(|(w, m)| w * m.density_at(v))))
        .collect();
    Ok(MarginalGrid::new(x, density, scale)?)
}

fn check_dims(ensemble: &WeightedEnsemble) -> Result<(), AmisError> {
    if ensemble.is_empty() {
        return Err(AmisError::TooFewSamples { needed: 1, found: 0 });
    }
    Ok(())
}

/// Weighted mean, sd and 95% interval of every `θ_c` component on the
/// sampling scale.
///
/// Refused when the effective sample size is 10 or less, except for a
/// single-sample ensemble, which summarizes as a point mass.
pub fn sample_posterior_theta_c(ensemble: &WeightedEnsemble) -> Result<Vec<(Name, Summary)>, AmisError> {
    check_dims(ensemble)?;
    if ensemble.len() > 1 && ensemble.ess <= LOW_ESS {
        return Err(AmisError::LowEss { ess: ensemble.ess });
    }
    theta_summaries_unchecked(ensemble)
}

/// Same as [`sample_posterior_theta_c`] without the effective-sample-size guard.
pub fn theta_summaries_unchecked(ensemble: &WeightedEnsemble) -> Result<Vec<(Name, Summary)>, AmisError> {
    check_dims(ensemble)?;
    (0..ensemble.theta_names.len())
        .map(|j| Ok((ensemble.theta_names[j].clone(), weighted_summary(&ensemble.component(j)?, &ensemble.weights))))
        .collect()
}

/// Sorted sample values of one component paired with the empirical
/// probabilities `i/M` and the cumulative normalized weights.
///
/// Returns `(i/M, cumulative weight)`; a curve close to the diagonal means
/// the weights are spread evenly across the range of the component.
pub fn weight_diagnostic_curve(ensemble: &WeightedEnsemble, component: usize) -> Result<Vec<(f64, f64)>, AmisError> {
    let values = ensemble.component(component)?;
    let m = values.len();
    if m < 2 {
        return Err(AmisError::TooFewSamples { needed: 2, found: m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(m);
    for (i, &k) in order.iter().enumerate() {
        let w = ensemble.weights[k];
        let t = sum + w;
        if sum.abs() >= w.abs() {
            comp += (sum - t) + w;
        } else {
            comp += (w - t) + sum;
        }
        sum = t;
        out.push(((i + 1) as f64 / m as f64, sum + comp));
    }
    Ok(out)
}

/// Weighted Gaussian kernel density estimate of one `θ_c` component.
///
/// Bandwidth `1.06 · sd · ESS^(-1/5)`.
pub fn theta_marginal(ensemble: &WeightedEnsemble, component: usize) -> Result<MarginalGrid, AmisError> {
    let values = ensemble.component(component)?;
    check_dims(ensemble)?;
    let s = weighted_summary(&values, &ensemble.weights);
    let mut h = 1.06 * s.sd * powf(ensemble.ess.max(1.0), -0.2);
    if !(h > 0.0) {
        h = 1e-3 * (1.0 + s.mean.abs());
    }
    let kept: Vec<(f64, f64)> = values.iter().zip(&ensemble.weights).filter(|(_, &w)| w > 0.0).map(|(&v, &w)| (v, w)).collect();
    let lo = kept.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = kept.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let norm = exp(-0.5 * LN_2PI) / h;
    let x = linspace(lo, hi, MIX_POINTS);
    let density = x
        .iter()
        .map(|&v| {
            compensated_sum(kept.iter().map(|&(c, w)| {
                let z = (v - c) / h;
                w * norm * exp(-0.5 * z * z)
            }))
        })
        .collect();
    Ok(MarginalGrid::new(x, density, Scale::Identity)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amis::tests::{config, toy};
    use crate::amis::{run_amis, ConditionalTarget};
    use crate::exec::Sequential;
    use crate::latent::{ConditionalFit, Scale};
    use alloc::sync::Arc;
    use alloc::vec;

    fn ensemble_with(marginals: Vec<Marginal>, weights: Vec<f64>) -> WeightedEnsemble {
        let n = marginals.len();
        let lw = weights.iter().map(|w| crate::math::ln(*w)).collect();
        let mut e = WeightedEnsemble::from_log_weights(vec!["t".into()], (0..n).map(|i| vec![i as f64]).collect(), lw).unwrap();
        e.fits = marginals
            .into_iter()
            .map(|m| {
                Some(Arc::new(ConditionalFit {
                    log_marginal_likelihood: 0.0,
                    parts: vec![0.0],
                    marginals: vec![("q".into(), m)],
                    newton_iterations: 0,
                    converged: true,
                }))
            })
            .collect();
        e
    }

    #[test]
    fn identical_components_reproduce_themselves() {
        let g = MarginalGrid::tabulate(-3.0, 5.0, 43, Scale::Log, |v| exp(-0.5 * (v - 1.0) * (v - 1.0)) / 2.5066282746310002).unwrap();
        let e = ensemble_with(vec![Marginal::Grid(g.clone()); 3], vec![0.2, 0.5, 0.3]);
        let mixed = mix_marginals(&e, "q").unwrap();
        assert_eq!(mixed.scale(), Scale::Log);
        for (&x, &d) in mixed.x().iter().zip(mixed.density()) {
            assert!((d - g.density_at(x)).abs() < 1e-6);
        }
        let gauss = ensemble_with(vec![Marginal::Gaussian { mean: 0.3, sd: 0.2 }; 2], vec![0.5, 0.5]);
        let mixed = mix_marginals(&gauss, "q").unwrap();
        for (&x, &d) in mixed.x().iter().zip(mixed.density()) {
            assert!((d - Marginal::Gaussian { mean: 0.3, sd: 0.2 }.density_at(x)).abs() < 1e-6);
        }
        assert!((mixed.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn two_component_mixture_is_bimodal() {
        let e = ensemble_with(
            vec![Marginal::Gaussian { mean: -1.0, sd: 0.1 }, Marginal::Gaussian { mean: 1.0, sd: 0.1 }],
            vec![0.5, 0.5],
        );
        let g = mix_marginals(&e, "q").unwrap();
        let d = g.density();
        let peaks: Vec<f64> = (1..d.len() - 1).filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1]).map(|i| g.x()[i]).collect();
        assert_eq!(peaks.len(), 2);
        let spacing = g.x()[1] - g.x()[0];
        assert!((peaks[0] + 1.0).abs() <= spacing && (peaks[1] - 1.0).abs() <= spacing);
        let exact = |v: f64| 0.5 * Marginal::Gaussian { mean: -1.0, sd: 0.1 }.density_at(v) + 0.5 * Marginal::Gaussian { mean: 1.0, sd: 0.1 }.density_at(v);
        assert!(g.x().iter().zip(d).all(|(&x, &v)| (v - exact(x)).abs() < 1e-9));
        assert!((g.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn absent_marginal_is_an_error() {
        let e = ensemble_with(vec![Marginal::Gaussian { mean: 0.0, sd: 1.0 }], vec![1.0]);
        assert_eq!(mix_marginals(&e, "nope"), Err(AmisError::MarginalAbsent("nope".into())));
    }

    #[test]
    fn single_sample_summary_is_a_point_mass() {
        let e = WeightedEnsemble::from_log_weights(vec!["t".into()], vec![vec![1.25]], vec![-3.0]).unwrap();
        let s = sample_posterior_theta_c(&e).unwrap();
        assert_eq!(s[0].1, Summary { mean: 1.25, sd: 0.0, lower: 1.25, upper: 1.25 });
    }

    #[test]
    fn low_ess_summary_refused() {
        let e = WeightedEnsemble::from_log_weights(vec!["t".into()], vec![vec![0.0], vec![1.0]], vec![0.0, -50.0]).unwrap();
        assert!(matches!(sample_posterior_theta_c(&e), Err(AmisError::LowEss { .. })));
        assert!(theta_summaries_unchecked(&e).is_ok());
    }

    #[test]
    fn uniform_weights_curve_is_diagonal() {
        let n = 997;
        let samples = (0..n).map(|i| vec![((i * 389) % n) as f64]).collect();
        let e = WeightedEnsemble::from_log_weights(vec!["t".into()], samples, vec![0.0; n]).unwrap();
        let curve = weight_diagnostic_curve(&e, 0).unwrap();
        assert!(curve.iter().all(|(p, c)| (p - c).abs() <= 1e-12));
    }

    #[test]
    fn point_mass_curve_is_a_step() {
        let e = WeightedEnsemble::from_log_weights(
            vec!["t".into()],
            vec![vec![3.0], vec![1.0], vec![2.0], vec![0.0]],
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
        )
        .unwrap();
        let c: Vec<f64> = weight_diagnostic_curve(&e, 0).unwrap().into_iter().map(|p| p.1).collect();
        assert_eq!(c, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(weight_diagnostic_curve(&e, 1).is_err());
    }

    #[test]
    fn conjugate_curve_stays_near_diagonal() {
        let t = toy();
        let (m, s) = t.posterior();
        let mut cfg = config(21, 2000, 3, 1000);
        cfg.initial = crate::amis::ProposalState::gaussian(vec![m], crate::linalg::SymMatrix::diagonal(&[1.5 * s * s])).unwrap();
        let e = run_amis(&t, &cfg, &Sequential).unwrap();
        let dev = weight_diagnostic_curve(&e, 0).unwrap().iter().map(|(p, c)| (p - c).abs()).fold(0.0, f64::max);
        assert!(dev < 0.05, "max deviation {dev}");
        let kde = theta_marginal(&e, 0).unwrap();
        assert!((kde.integral() - 1.0).abs() < 0.01);
        assert!((kde.mean() - m).abs() < 0.05);
        assert_eq!(t.dim(), 1);
    }
}
